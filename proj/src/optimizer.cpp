#include "dstk/optimizer.hpp"

#include <cmath>

namespace dstk {

AdamState adam_init(const ModelWeights& w, const AdamConfig& cfg) {
    AdamState s;
    s.cfg = cfg;
    for (const std::string& name : w.trainable_names()) {
        const Tensor& t = w.tensors.at(name);
        s.m[name] = Tensor(t.shape);
        s.v[name] = Tensor(t.shape);
    }
    return s;
}

void adam_step(ModelWeights& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, float learning_rate) {
    if (!(learning_rate > 0)) throw DataError("adam_step: learning rate must be positive");
    state.t += 1;
    const float b1 = state.cfg.beta1, b2 = state.cfg.beta2, eps = state.cfg.epsilon;
    const float bc1 = 1.0f - std::pow(b1, (float)state.t);
    const float bc2 = 1.0f - std::pow(b2, (float)state.t);
    for (const auto& [name, g] : grads) {
        auto pit = params.tensors.find(name);
        if (pit == params.tensors.end())
            throw DataError("adam_step: gradient for unknown parameter '" + name + "'");
        Tensor& p = pit->second;
        if (!p.same_shape(g))
            throw DimensionError("adam_step: gradient " + g.shape_str() + " vs parameter " +
                                 p.shape_str() + " for '" + name + "'");
        auto mit = state.m.find(name);
        auto vit = state.v.find(name);
        if (mit == state.m.end() || vit == state.v.end())
            throw DataError("adam_step: no moments for parameter '" + name + "'");
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (int64_t i = 0; i < p.numel(); ++i) {
            size_t k = (size_t)i;
            m.v[k] = b1 * m.v[k] + (1.0f - b1) * g.v[k];
            v.v[k] = b2 * v.v[k] + (1.0f - b2) * g.v[k] * g.v[k];
            float mhat = m.v[k] / bc1;
            float vhat = v.v[k] / bc2;
            p.v[k] -= learning_rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace dstk
