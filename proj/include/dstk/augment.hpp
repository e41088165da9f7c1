#pragma once

#include "dstk/rng.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

// Random augmentation of [0,1] float image batches. Per image, in order:
// horizontal flip (Bernoulli 1/2), vertical flip (Bernoulli 1/2), rotation by
// U(-fraction*2pi, +fraction*2pi), zoom by U(1-fraction, 1+fraction), and
// contrast scaling around the per-image mean by U(1-fraction, 1+fraction).
// A transform draws from the stream only when its knob is switched on, and
// resampling is bilinear with edge-pixel fill. Identity draws (angle 0,
// zoom 1, contrast 1) reproduce the input bit for bit.
struct AugmentConfig {
    bool enabled = false;
    bool flip_horizontal = false;
    bool flip_vertical = false;
    float rotation_fraction = 0.0f;
    float zoom_fraction = 0.0f;
    float contrast_fraction = 0.0f;
};

Tensor augment_batch(const Tensor& batch, const AugmentConfig& cfg, Rng& rng);

// Deterministic single-image primitives, exposed for direct testing.
void flip_horizontal_image(float* img, int h, int w, int c);
void flip_vertical_image(float* img, int h, int w, int c);
void rotate_image(float* img, int h, int w, int c, float radians);
void zoom_image(float* img, int h, int w, int c, float factor);
void contrast_image(float* img, int h, int w, int c, float factor);

} // namespace dstk
