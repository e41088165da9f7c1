#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dstk/errors.hpp"

namespace dstk {

// Dense row-major float32 tensor. Layout conventions across the library:
//   rank-4 activations  (N, H, W, C)
//   rank-4 conv kernels (kh, kw, in_ch, out_ch)
//   rank-2 activations  (N, features)
//   rank-2 dense kernel (in_features, units)
//   rank-1 bias/scale   (features)
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(checked_numel(shape), 0.0f) {}
    Tensor(std::vector<int> s, std::vector<float> data) : shape(std::move(s)), v(std::move(data)) {
        if ((int64_t)v.size() != checked_numel(shape))
            throw DimensionError("tensor data size does not match shape " + shape_str());
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float x) {
        Tensor t(std::move(s));
        for (auto& e : t.v) e = x;
        return t;
    }
    static Tensor scalar(float x) { return Tensor({1}, {x}); }

    int rank() const { return (int)shape.size(); }
    int dim(int i) const { return shape[(size_t)i]; }
    int64_t numel() const { return (int64_t)v.size(); }
    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    float& at2(int a, int b) { return v[(size_t)a * shape[1] + b]; }
    float at2(int a, int b) const { return v[(size_t)a * shape[1] + b]; }
    float& at4(int n, int y, int x, int c) {
        return v[(((size_t)n * shape[1] + y) * shape[2] + x) * shape[3] + c];
    }
    float at4(int n, int y, int x, int c) const {
        return v[(((size_t)n * shape[1] + y) * shape[2] + x) * shape[3] + c];
    }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const { return shape_to_string(shape); }

    static std::string shape_to_string(const std::vector<int>& s) {
        std::string out = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + ")";
    }

    static int64_t checked_numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(s));
            n *= d;
        }
        return n;
    }
};

inline void require_rank(const Tensor& t, int r, const char* what) {
    if (t.rank() != r)
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) +
                             ", got shape " + t.shape_str());
}

} // namespace dstk
