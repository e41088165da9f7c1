#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace dstk {

// splitmix64 finalizer. Used to derive independent streams from
// (seed, tag, tag, ...) tuples so that e.g. the shuffle of epoch 3 never
// overlaps the shuffle of epoch 4.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b), c); }

// mt19937_64 with hand-rolled draw helpers. The draws avoid standard-library
// distribution objects on purpose: their sequences are implementation-defined,
// and reruns must be bit-identical.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // Uniform in [0,1) with 24 mantissa bits.
    float uniform() { return float(next() >> 40) * (1.0f / 16777216.0f); }
    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
    bool bernoulli(float p = 0.5f) { return uniform() < p; }
    uint64_t below(uint64_t n) { return n ? next() % n : 0; }

    // Fisher-Yates, last-to-first.
    template <class T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i)
            std::swap(xs[i - 1], xs[below(i)]);
    }

private:
    std::mt19937_64 gen_;
};

} // namespace dstk
