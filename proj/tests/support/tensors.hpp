#pragma once

#include <numeric>
#include <vector>

#include "dstk/rng.hpp"
#include "dstk/tensor.hpp"

namespace testsupport {

inline dstk::Tensor rand_tensor(std::vector<int> shape, uint64_t seed, float lo = -1.0f,
                                float hi = 1.0f) {
    dstk::Tensor t(std::move(shape));
    dstk::Rng rng(dstk::mix64(seed, 0x7e57));
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

// Magnitudes in [min_mag, max_mag] with random signs: keeps relu inputs away
// from the kink so the finite-difference step never crosses it.
inline dstk::Tensor rand_tensor_signed(std::vector<int> shape, uint64_t seed,
                                       float min_mag = 0.1f, float max_mag = 1.0f) {
    dstk::Tensor t(std::move(shape));
    dstk::Rng rng(dstk::mix64(seed, 0x51f7));
    for (auto& x : t.v) {
        float mag = rng.uniform(min_mag, max_mag);
        x = rng.bernoulli() ? mag : -mag;
    }
    return t;
}

// A random permutation of evenly spaced values: all entries distinct with
// gaps far wider than the finite-difference step, so pooling argmaxes are
// stable under perturbation.
inline dstk::Tensor spaced_permutation(std::vector<int> shape, uint64_t seed) {
    dstk::Tensor t(std::move(shape));
    std::vector<int> order((size_t)t.numel());
    std::iota(order.begin(), order.end(), 0);
    dstk::Rng rng(dstk::mix64(seed, 0x9a9a));
    rng.shuffle(order);
    for (int64_t i = 0; i < t.numel(); ++i)
        t.v[(size_t)i] = -1.0f + 2.0f * (float)order[(size_t)i] / (float)t.numel();
    return t;
}

inline std::vector<int> rand_labels(int n, int k, uint64_t seed) {
    std::vector<int> y((size_t)n);
    dstk::Rng rng(dstk::mix64(seed, 0x1abe1));
    for (auto& v : y) v = (int)rng.below((uint64_t)k);
    return y;
}

} // namespace testsupport
