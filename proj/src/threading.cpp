#include "dstk/threading.hpp"

#include <thread>
#include <vector>

namespace dstk {

namespace {
int g_threads = 1;
}

void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }
int thread_count() { return g_threads; }

void parallel_ranges(int64_t n, const std::function<void(int64_t, int64_t)>& f) {
    if (n <= 0) return;
    int workers = g_threads;
    if (workers <= 1 || n == 1) {
        f(0, n);
        return;
    }
    if ((int64_t)workers > n) workers = (int)n;
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve((size_t)workers);
    for (int w = 0; w < workers; ++w) {
        int64_t lo = (int64_t)w * chunk;
        int64_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([&f, lo, hi] { f(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

} // namespace dstk
