#pragma once

#include <cstdint>
#include <functional>

namespace dstk {

// Worker count for parallel_ranges. 1 (the default) runs everything inline.
void set_thread_count(int n);
int thread_count();

// Splits [0,n) into one contiguous range per worker and runs f(begin,end) on
// each. Ranges are disjoint and every range is processed in ascending order,
// so any computation whose writes are confined to its own range produces
// results independent of the worker count.
void parallel_ranges(int64_t n, const std::function<void(int64_t, int64_t)>& f);

} // namespace dstk
