#include "dstk/tape.hpp"

#include <memory>

namespace dstk {

int Tape::push_value(Tensor v) {
    slots_.push_back(Slot{std::move(v), Tensor(), false});
    return (int)slots_.size() - 1;
}

int Tape::check(int id) const {
    if (id < 0 || id >= (int)slots_.size())
        throw DataError("tape: unknown tensor id " + std::to_string(id));
    return id;
}

int Tape::leaf(Tensor value) { return push_value(std::move(value)); }

const Tensor& Tape::val(int id) const { return slots_[(size_t)check(id)].value; }

Tensor& Tape::grad(int id) {
    Slot& s = slots_[(size_t)check(id)];
    if (!s.has_grad) {
        s.grad = Tensor(s.value.shape);
        s.has_grad = true;
    }
    return s.grad;
}

int Tape::add(int a, int b) {
    int out = push_value(dstk::add(val(a), val(b)));
    nodes_.push_back([this, a, b, out] {
        const Tensor& g = grad(out);
        Tensor& ga = grad(a);
        Tensor& gb = grad(b);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga.v[(size_t)i] += g.v[(size_t)i];
            gb.v[(size_t)i] += g.v[(size_t)i];
        }
    });
    return out;
}

int Tape::relu(int x) {
    int out = push_value(dstk::relu(val(x)));
    nodes_.push_back([this, x, out] { relu_backward(val(x), grad(out), grad(x)); });
    return out;
}

int Tape::conv2d(int x, int kernel, int bias, int stride, Padding padding) {
    ConvParams p{val(kernel), val(bias), stride, padding};
    int out = push_value(dstk::conv2d(val(x), p));
    nodes_.push_back([this, x, kernel, bias, stride, padding, out] {
        ConvParams bp{val(kernel), val(bias), stride, padding};
        conv2d_backward(val(x), bp, grad(out), &grad(x), &grad(kernel), &grad(bias));
    });
    return out;
}

int Tape::max_pool2d(int x, int window, int stride, Padding padding) {
    auto argmax = std::make_shared<std::vector<int32_t>>();
    int out = push_value(dstk::max_pool2d(val(x), window, stride, padding, argmax.get()));
    nodes_.push_back([this, x, out, argmax] {
        max_pool2d_backward(val(x), val(out), *argmax, grad(out), grad(x));
    });
    return out;
}

int Tape::global_avg_pool(int x) {
    int out = push_value(dstk::global_avg_pool(val(x)));
    nodes_.push_back([this, x, out] {
        global_avg_pool_backward(val(x).shape, grad(out), grad(x));
    });
    return out;
}

int Tape::flatten(int x) {
    int out = push_value(dstk::flatten(val(x)));
    nodes_.push_back([this, x, out] {
        const Tensor& g = grad(out);
        Tensor& gx = grad(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx.v[(size_t)i] += g.v[(size_t)i];
    });
    return out;
}

int Tape::dense(int x, int w, int b) {
    int out = push_value(dstk::dense(val(x), val(w), val(b)));
    nodes_.push_back([this, x, w, b, out] {
        dense_backward(val(x), val(w), grad(out), &grad(x), &grad(w), &grad(b));
    });
    return out;
}

int Tape::batch_norm(int x, int gamma, int beta, Tensor& running_mean, Tensor& running_var,
                     float momentum, float epsilon) {
    auto cache = std::make_shared<BnCache>();
    BatchNormParams p{val(gamma), val(beta), running_mean, running_var, momentum, epsilon};
    int out = push_value(batch_norm_train(val(x), p, cache.get()));
    running_mean = p.running_mean;
    running_var = p.running_var;
    nodes_.push_back([this, x, gamma, beta, out, cache] {
        batch_norm_backward(*cache, val(gamma), grad(out), &grad(x), &grad(gamma), &grad(beta));
    });
    return out;
}

int Tape::softmax(int x) {
    int out = push_value(dstk::softmax(val(x)));
    nodes_.push_back([this, x, out] { softmax_backward(val(out), grad(out), grad(x)); });
    return out;
}

int Tape::sparse_ce_loss(int logits, std::vector<int> labels) {
    auto cache = std::make_shared<CeCache>();
    float loss = dstk::sparse_ce_loss(val(logits), labels, cache.get());
    int out = push_value(Tensor::scalar(loss));
    nodes_.push_back([this, logits, out, cache, labels = std::move(labels)] {
        sparse_ce_backward(*cache, labels, grad(out).v[0], grad(logits));
    });
    return out;
}

void Tape::backward(int root) {
    const Tensor& r = val(root);
    if (r.numel() != 1)
        throw DimensionError("backward: root must be scalar, got shape " + r.shape_str());
    grad(root).v[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

} // namespace dstk
