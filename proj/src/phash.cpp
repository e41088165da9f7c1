#include "dstk/phash.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>

#include "dstk/errors.hpp"

namespace dstk {

namespace {

constexpr int kSide = 32;

// Orthonormal type-II DCT basis: D[k][n] = s(k) cos(pi (2n+1) k / (2 kSide)).
const std::array<double, kSide * kSide>& dct_basis() {
    static const auto basis = [] {
        std::array<double, kSide * kSide> d{};
        const double pi = std::acos(-1.0);
        for (int k = 0; k < kSide; ++k) {
            double s = std::sqrt((k == 0 ? 1.0 : 2.0) / kSide);
            for (int n = 0; n < kSide; ++n)
                d[(size_t)(k * kSide + n)] = s * std::cos(pi * (2 * n + 1) * k / (2.0 * kSide));
        }
        return d;
    }();
    return basis;
}

} // namespace

uint64_t compute_phash(const Tensor& gray) {
    require_rank(gray, 2, "compute_phash");
    Tensor small = resize_bilinear(gray, kSide, kSide);

    const auto& d = dct_basis();
    // rows = D * X, coeffs = rows * D^T; doubles end to end.
    std::array<double, kSide * kSide> rows{};
    for (int k = 0; k < kSide; ++k)
        for (int n = 0; n < kSide; ++n) {
            double acc = 0;
            for (int j = 0; j < kSide; ++j)
                acc += d[(size_t)(k * kSide + j)] * (double)small.v[(size_t)(j * kSide + n)];
            rows[(size_t)(k * kSide + n)] = acc;
        }
    std::array<double, 64> block{};
    for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) {
            double acc = 0;
            for (int j = 0; j < kSide; ++j)
                acc += rows[(size_t)(k * kSide + j)] * d[(size_t)(l * kSide + j)];
            block[(size_t)(k * 8 + l)] = acc;
        }

    // Snap transform round-off to exact zero so degenerate inputs (constant
    // image => all AC coefficients zero) hit the median tie rule cleanly.
    for (auto& c : block)
        if (std::fabs(c) < 1e-10) c = 0.0;

    std::array<double, 64> sorted = block;
    std::sort(sorted.begin(), sorted.end());
    double median = 0.5 * (sorted[31] + sorted[32]);

    uint64_t hash = 0;
    for (int i = 0; i < 64; ++i)
        if (block[(size_t)i] > median) hash |= uint64_t{1} << (63 - i);
    return hash;
}

uint64_t phash_of_image(const ImageU8& img) { return compute_phash(to_gray_f32(img)); }

uint64_t phash_of_bytes(const std::vector<uint8_t>& bytes) {
    return phash_of_image(decode_image(bytes));
}

int hamming64(uint64_t a, uint64_t b) { return std::popcount(a ^ b); }

double phash_similarity(uint64_t a, uint64_t b) { return 1.0 - hamming64(a, b) / 64.0; }

} // namespace dstk
