#pragma once

#include <functional>
#include <vector>

#include "dstk/kernels.hpp"
#include "dstk/tensor.hpp"

namespace dstk {

// Reverse-mode autodiff over a recorded op tape. Each op call runs the
// forward kernel immediately, stores the result, and pushes a closure that
// routes the output gradient to the inputs. backward() replays the closures
// in reverse push order (reverse topological order by construction) and
// accumulates gradients, so fan-out (e.g. residual shortcuts) sums naturally.
class Tape {
public:
    // Registers a tensor (parameter or input) with no backward closure.
    int leaf(Tensor value);

    const Tensor& val(int id) const;
    // Gradient buffer for id, allocated as zeros on first access.
    Tensor& grad(int id);

    int add(int a, int b);
    int relu(int x);
    int conv2d(int x, int kernel, int bias, int stride, Padding padding);
    int max_pool2d(int x, int window, int stride, Padding padding = Padding::valid);
    int global_avg_pool(int x);
    int flatten(int x);
    int dense(int x, int w, int b);
    // Training-mode batch norm; running_mean/running_var are caller-owned
    // buffers folded toward the batch statistics as a side effect.
    int batch_norm(int x, int gamma, int beta, Tensor& running_mean, Tensor& running_var,
                   float momentum, float epsilon);
    int softmax(int x);
    int sparse_ce_loss(int logits, std::vector<int> labels);

    // Seeds d(root)/d(root) = 1 and runs all closures in reverse. The root
    // must be scalar.
    void backward(int root);

    size_t num_ops() const { return nodes_.size(); }

private:
    struct Slot {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
    };

    int push_value(Tensor v);
    int check(int id) const;

    std::vector<Slot> slots_;
    std::vector<std::function<void()>> nodes_;
};

} // namespace dstk
