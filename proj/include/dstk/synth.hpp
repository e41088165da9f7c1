#pragma once

// Procedural test corpus: four visually distinct seeded patterns, one per
// class. Stripes (horizontal vs vertical), a filled disk and a checkerboard
// are cheap to generate, easy for a small convnet to separate, and stable
// enough for deduplication fixtures.

#include <cstdint>
#include <string>
#include <vector>

#include "dstk/image.hpp"
#include "dstk/model.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

// One pattern image with seeded phase/geometry jitter and pixel noise.
ImageU8 synth_pattern_image(ClassLabel label, int size, uint64_t seed);

struct SynthDataset {
    Tensor x;           // (n, size, size, 3) in [0, 1]
    std::vector<int> y; // class codes
};

// per_class images of each class, interleaved by class then index; floats.
SynthDataset synth_dataset(int per_class, int size, uint64_t seed);

// Writes root/<class>/img_NNNN.png for each class; returns file count.
int write_synth_corpus(const std::string& root, int per_class, int size, uint64_t seed);

} // namespace dstk
