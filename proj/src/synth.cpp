#include "dstk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dstk/errors.hpp"
#include "dstk/rng.hpp"

namespace dstk {

namespace {

struct Color {
    uint8_t r, g, b;
};

// Shared palette so classes differ by geometry, not colour.
constexpr Color kPalette[6] = {{208, 82, 62},  {64, 120, 196}, {222, 184, 68},
                               {88, 160, 96},  {150, 90, 170}, {230, 230, 218}};

void fill(ImageU8& img, int y, int x, Color c) {
    uint8_t* p = img.row(y) + (size_t)x * 3;
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
}

uint8_t jitter(Rng& rng, uint8_t v, int amp) {
    int d = (int)rng.below((uint64_t)(2 * amp + 1)) - amp;
    return (uint8_t)std::clamp((int)v + d, 0, 255);
}

} // namespace

ImageU8 synth_pattern_image(ClassLabel label, int size, uint64_t seed) {
    if (size < 8) throw DimensionError("synth_pattern_image needs size >= 8");
    Rng rng(mix64(seed, (uint64_t)label, 0x5e3d));
    ImageU8 img;
    img.h = img.w = size;
    img.pix.resize((size_t)size * (size_t)size * 3);

    int fg_i = (int)rng.below(6);
    int bg_i = (fg_i + 1 + (int)rng.below(5)) % 6;
    Color fg = kPalette[fg_i], bg = kPalette[bg_i];
    int period = size / 8;
    int stripe = std::max(period / 2, 1);
    int phase = (int)rng.below((uint64_t)period);
    float cx = size * 0.5f + (float)phase - period * 0.5f;
    float cy = size * 0.5f + (float)((int)rng.below((uint64_t)period)) - period * 0.5f;
    float radius = size * 0.28f;

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            bool on = false;
            switch (label) {
                case ClassLabel::earthquake: // horizontal stripes
                    on = ((y + phase) / stripe) % 2 == 0;
                    break;
                case ClassLabel::flood: // vertical stripes
                    on = ((x + phase) / stripe) % 2 == 0;
                    break;
                case ClassLabel::volcano: { // filled disk
                    float dx = (float)x - cx, dy = (float)y - cy;
                    on = dx * dx + dy * dy <= radius * radius;
                    break;
                }
                case ClassLabel::wildfire: // checkerboard
                    on = (((y + phase) / period) + ((x + phase) / period)) % 2 == 0;
                    break;
            }
            fill(img, y, x, on ? fg : bg);
        }
    for (auto& p : img.pix) p = jitter(rng, p, 10);
    return img;
}

SynthDataset synth_dataset(int per_class, int size, uint64_t seed) {
    SynthDataset ds;
    ds.x = Tensor({per_class * 4, size, size, 3});
    ds.y.resize((size_t)per_class * 4);
    const size_t stride = (size_t)size * (size_t)size * 3;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < per_class; ++i) {
            ImageU8 img = synth_pattern_image(class_from_code(c), size, mix64(seed, (uint64_t)c, (uint64_t)i));
            Tensor f = to_float(img);
            size_t row = (size_t)(c * per_class + i);
            std::copy(f.v.begin(), f.v.end(), ds.x.v.begin() + (int64_t)(row * stride));
            ds.y[row] = c;
        }
    return ds;
}

int write_synth_corpus(const std::string& root, int per_class, int size, uint64_t seed) {
    namespace fs = std::filesystem;
    int written = 0;
    for (int c = 0; c < 4; ++c) {
        ClassLabel label = class_from_code(c);
        fs::path dir = fs::path(root) / to_string(label);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        for (int i = 0; i < per_class; ++i) {
            ImageU8 img = synth_pattern_image(label, size, mix64(seed, (uint64_t)c, (uint64_t)i));
            std::vector<uint8_t> png = encode_png(img);
            char name[32];
            std::snprintf(name, sizeof name, "img_%04d.png", i);
            std::ofstream out(dir / name, std::ios::binary);
            if (!out || !out.write((const char*)png.data(), (std::streamsize)png.size()))
                throw IoError("cannot write " + (dir / name).string());
            ++written;
        }
    }
    return written;
}

} // namespace dstk
