#include "dstk/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "dstk/errors.hpp"

namespace dstk {

namespace {

struct JpegErr {
    jpeg_error_mgr mgr;
    jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    longjmp(err->jump, 1);
}

ImageU8 decode_jpeg(const std::vector<uint8_t>& bytes) {
    jpeg_decompress_struct cinfo{};
    JpegErr err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError(std::string("jpeg decode failed: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), (unsigned long)bytes.size());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 img;
    img.h = (int)cinfo.output_height;
    img.w = (int)cinfo.output_width;
    img.pix.resize((size_t)img.h * (size_t)img.w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.row((int)cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

ImageU8 decode_png(const std::vector<uint8_t>& bytes) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
        throw DataError(std::string("png decode failed: ") + pi.message);
    pi.format = PNG_FORMAT_RGB;
    ImageU8 img;
    img.h = (int)pi.height;
    img.w = (int)pi.width;
    img.pix.resize(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, img.pix.data(), 0, nullptr)) {
        std::string msg = pi.message;
        png_image_free(&pi);
        throw DataError("png decode failed: " + msg);
    }
    return img;
}

} // namespace

ImageU8 decode_image(const std::vector<uint8_t>& bytes) {
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF)
        return decode_jpeg(bytes);
    static const uint8_t png_sig[8] = {0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return decode_png(bytes);
    throw DataError("unrecognized image format");
}

std::vector<uint8_t> encode_png(const ImageU8& img) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = (png_uint_32)img.w;
    pi.height = (png_uint_32)img.h;
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pix.data(), 0, nullptr))
        throw DataError(std::string("png encode failed: ") + pi.message);
    std::vector<uint8_t> out(size);
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pix.data(), 0, nullptr))
        throw DataError(std::string("png encode failed: ") + pi.message);
    out.resize(size);
    return out;
}

std::vector<uint8_t> encode_jpeg(const ImageU8& img, int quality) {
    jpeg_compress_struct cinfo{};
    JpegErr err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        free(buf);
        throw DataError(std::string("jpeg encode failed: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buf, &buf_size);
    cinfo.image_width = (JDIMENSION)img.w;
    cinfo.image_height = (JDIMENSION)img.h;
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(img.row((int)cinfo.next_scanline));
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    std::vector<uint8_t> out(buf, buf + buf_size);
    jpeg_destroy_compress(&cinfo);
    free(buf);
    return out;
}

Tensor to_float(const ImageU8& img) {
    Tensor t({img.h, img.w, 3});
    const float scale = 1.0f / 255.0f;
    for (size_t i = 0; i < img.pix.size(); ++i) t.v[i] = (float)img.pix[i] * scale;
    return t;
}

Tensor to_gray_f32(const ImageU8& img) {
    Tensor t({img.h, img.w});
    const float scale = 1.0f / 255.0f;
    for (int64_t i = 0; i < t.numel(); ++i) {
        const uint8_t* p = img.pix.data() + (size_t)i * 3;
        t.v[(size_t)i] = (0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2]) * scale;
    }
    return t;
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 2 && img.rank() != 3)
        throw DimensionError("resize_bilinear expects rank 2 or 3, got " + img.shape_str());
    if (out_h <= 0 || out_w <= 0) throw DimensionError("resize_bilinear target must be positive");
    const int h = img.dim(0), w = img.dim(1);
    const int c = img.rank() == 3 ? img.dim(2) : 1;
    if (h == out_h && w == out_w) return img;

    std::vector<int> out_shape = img.rank() == 3 ? std::vector<int>{out_h, out_w, c}
                                                 : std::vector<int>{out_h, out_w};
    Tensor out(std::move(out_shape));
    const float sy = (float)h / (float)out_h;
    const float sx = (float)w / (float)out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        float fy = ((float)oy + 0.5f) * sy - 0.5f;
        int y0 = (int)std::floor(fy);
        float wy = fy - (float)y0;
        int y1 = std::min(y0 + 1, h - 1);
        y0 = std::max(y0, 0);
        for (int ox = 0; ox < out_w; ++ox) {
            float fx = ((float)ox + 0.5f) * sx - 0.5f;
            int x0 = (int)std::floor(fx);
            float wx = fx - (float)x0;
            int x1 = std::min(x0 + 1, w - 1);
            x0 = std::max(x0, 0);
            for (int ch = 0; ch < c; ++ch) {
                auto px = [&](int y, int x) {
                    return img.v[((size_t)y * (size_t)w + (size_t)x) * (size_t)c + (size_t)ch];
                };
                float top = px(y0, x0) + wx * (px(y0, x1) - px(y0, x0));
                float bot = px(y1, x0) + wx * (px(y1, x1) - px(y1, x0));
                out.v[((size_t)oy * (size_t)out_w + (size_t)ox) * (size_t)c + (size_t)ch] =
                    top + wy * (bot - top);
            }
        }
    }
    return out;
}

} // namespace dstk
