#include "dstk/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace dstk {

namespace {

// Bilinear sample with edge clamp, coordinates in pixel centers.
void sample_bilinear(const float* src, int h, int w, int c, float y, float x, float* out) {
    float yc = std::clamp(y, 0.0f, (float)(h - 1));
    float xc = std::clamp(x, 0.0f, (float)(w - 1));
    int y0 = (int)yc, x0 = (int)xc;
    int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    float fy = yc - (float)y0, fx = xc - (float)x0;
    for (int ch = 0; ch < c; ++ch) {
        float a = src[((size_t)y0 * w + x0) * c + ch];
        float b = src[((size_t)y0 * w + x1) * c + ch];
        float d = src[((size_t)y1 * w + x0) * c + ch];
        float e = src[((size_t)y1 * w + x1) * c + ch];
        float top = a + (b - a) * fx;
        float bot = d + (e - d) * fx;
        out[ch] = top + (bot - top) * fy;
    }
}

void resample_inverse(float* img, int h, int w, int c,
                      const std::function<void(float, float, float&, float&)>& dst_to_src) {
    std::vector<float> src(img, img + (size_t)h * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float sy, sx;
            dst_to_src((float)y, (float)x, sy, sx);
            sample_bilinear(src.data(), h, w, c, sy, sx, img + ((size_t)y * w + x) * c);
        }
}

} // namespace

void flip_horizontal_image(float* img, int h, int w, int c) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x)
            for (int ch = 0; ch < c; ++ch)
                std::swap(img[((size_t)y * w + x) * c + ch],
                          img[((size_t)y * w + (w - 1 - x)) * c + ch]);
}

void flip_vertical_image(float* img, int h, int w, int c) {
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                std::swap(img[((size_t)y * w + x) * c + ch],
                          img[((size_t)(h - 1 - y) * w + x) * c + ch]);
}

void rotate_image(float* img, int h, int w, int c, float radians) {
    if (radians == 0.0f) return;
    float cy = (float)(h - 1) / 2.0f, cx = (float)(w - 1) / 2.0f;
    float cs = std::cos(radians), sn = std::sin(radians);
    resample_inverse(img, h, w, c, [&](float y, float x, float& sy, float& sx) {
        float dy = y - cy, dx = x - cx;
        // rotate the sampling grid by -angle so the image rotates by +angle
        sy = cy + cs * dy - sn * dx;
        sx = cx + sn * dy + cs * dx;
    });
}

void zoom_image(float* img, int h, int w, int c, float factor) {
    if (factor == 1.0f) return;
    if (!(factor > 0)) throw DataError("zoom factor must be positive");
    float cy = (float)(h - 1) / 2.0f, cx = (float)(w - 1) / 2.0f;
    resample_inverse(img, h, w, c, [&](float y, float x, float& sy, float& sx) {
        sy = cy + (y - cy) / factor;
        sx = cx + (x - cx) / factor;
    });
}

void contrast_image(float* img, int h, int w, int c, float factor) {
    if (factor == 1.0f) return; // bit-exact no-op, floats would drift
    size_t n = (size_t)h * w * c;
    double sum = 0;
    for (size_t i = 0; i < n; ++i) sum += img[i];
    float mean = (float)(sum / (double)n);
    for (size_t i = 0; i < n; ++i)
        img[i] = std::clamp(mean + factor * (img[i] - mean), 0.0f, 1.0f);
}

Tensor augment_batch(const Tensor& batch, const AugmentConfig& cfg, Rng& rng) {
    require_rank(batch, 4, "augment_batch input");
    Tensor out = batch;
    if (!cfg.enabled) return out;
    const int N = batch.dim(0), H = batch.dim(1), W = batch.dim(2), C = batch.dim(3);
    const float two_pi = 6.2831853f;
    for (int n = 0; n < N; ++n) {
        float* img = out.data() + (size_t)n * H * W * C;
        if (cfg.flip_horizontal && rng.bernoulli()) flip_horizontal_image(img, H, W, C);
        if (cfg.flip_vertical && rng.bernoulli()) flip_vertical_image(img, H, W, C);
        if (cfg.rotation_fraction > 0)
            rotate_image(img, H, W, C,
                         rng.uniform(-cfg.rotation_fraction * two_pi, cfg.rotation_fraction * two_pi));
        if (cfg.zoom_fraction > 0)
            zoom_image(img, H, W, C, rng.uniform(1.0f - cfg.zoom_fraction, 1.0f + cfg.zoom_fraction));
        if (cfg.contrast_fraction > 0)
            contrast_image(img, H, W, C,
                           rng.uniform(1.0f - cfg.contrast_fraction, 1.0f + cfg.contrast_fraction));
    }
    return out;
}

} // namespace dstk
