#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dstk/model.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-7f;
};

// Per-parameter first/second moment estimates plus the shared step counter.
struct AdamState {
    AdamConfig cfg;
    uint64_t t = 0;
    std::map<std::string, Tensor> m, v;
};

// Zero moments for every trainable tensor of `w`.
AdamState adam_init(const ModelWeights& w, const AdamConfig& cfg = {});

// One bias-corrected Adam update over every entry of `grads`. The step
// counter increments once per call, not per tensor.
void adam_step(ModelWeights& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, float learning_rate);

} // namespace dstk
