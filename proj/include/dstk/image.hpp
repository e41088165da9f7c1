#pragma once

// Image decode/encode (JPEG via libjpeg, PNG via libpng) plus the small
// raster helpers the pipeline needs: float conversion, luma extraction and
// bilinear resizing.

#include <cstdint>
#include <vector>

#include "dstk/tensor.hpp"

namespace dstk {

// Interleaved 8-bit RGB.
struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> pix; // h*w*3

    uint8_t* row(int y) { return pix.data() + (size_t)y * (size_t)w * 3; }
    const uint8_t* row(int y) const { return pix.data() + (size_t)y * (size_t)w * 3; }
};

// Decodes JPEG or PNG bytes to RGB. Throws DataError on anything undecodable.
ImageU8 decode_image(const std::vector<uint8_t>& bytes);

std::vector<uint8_t> encode_png(const ImageU8& img);
std::vector<uint8_t> encode_jpeg(const ImageU8& img, int quality = 90);

// (h, w, 3) float tensor scaled by 1/255.
Tensor to_float(const ImageU8& img);

// (h, w) luma in [0, 1]: 0.299 R + 0.587 G + 0.114 B.
Tensor to_gray_f32(const ImageU8& img);

// Bilinear resize with half-pixel sample centers and edge clamping. Accepts
// (h, w) or (h, w, c) tensors; a no-op size change returns the input values
// exactly.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

} // namespace dstk
