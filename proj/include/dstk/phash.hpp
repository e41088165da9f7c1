#pragma once

// Perceptual hashing: 32x32 luma raster, orthonormal type-II DCT, top-left
// 8x8 coefficient block (DC included) thresholded against its median.

#include <cstdint>
#include <vector>

#include "dstk/image.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

// Hash of a grayscale raster (any size, rank-2 tensor). Bit 63 corresponds to
// coefficient (0,0) and bits descend in row-major order over the 8x8 block;
// a bit is 1 iff its coefficient exceeds the median of the 64 (ties give 0).
uint64_t compute_phash(const Tensor& gray);

// Decode + luma + hash in one step.
uint64_t phash_of_image(const ImageU8& img);
uint64_t phash_of_bytes(const std::vector<uint8_t>& bytes);

int hamming64(uint64_t a, uint64_t b);

// 1 - hamming/64.
double phash_similarity(uint64_t a, uint64_t b);

} // namespace dstk
