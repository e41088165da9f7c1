#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "dstk/model.hpp"
#include "dstk/optimizer.hpp"

namespace dstk {

// Binary checkpoint, little-endian throughout:
//   "DSTK" magic, u16 version (=1)
//   u32 spec length, canonical model-spec text
//   u32 epoch, f32 val_accuracy, 32-byte SHA-256 of the spec text
//   u32 tensor count, tensors as (u32 name len, name, u32 rank, u32 dims..., f32 data)
//   u8 optimizer flag; when set: u64 t, f32 beta1/beta2/epsilon,
//   u32 moment count, moment tensors named "m:<param>" / "v:<param>"
struct CheckpointMeta {
    uint32_t epoch = 0;
    float val_accuracy = 0.0f;
    std::array<uint8_t, 32> spec_hash{};
};

struct Checkpoint {
    ModelSpec spec;
    ModelWeights weights;
    std::optional<AdamState> optimizer;
    CheckpointMeta meta;
};

void save_checkpoint(const ModelSpec& spec, const ModelWeights& weights,
                     const AdamState* optimizer, uint32_t epoch, float val_accuracy,
                     const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

// Rejects a checkpoint whose stored spec hash differs from `expected`'s.
void require_spec_match(const Checkpoint& ck, const ModelSpec& expected);

// Exact serialized size in bytes, for write verification.
uint64_t checkpoint_byte_size(const ModelSpec& spec, const ModelWeights& weights,
                              const AdamState* optimizer);

} // namespace dstk
