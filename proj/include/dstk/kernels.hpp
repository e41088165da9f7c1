#pragma once

#include <cstdint>
#include <vector>

#include "dstk/tensor.hpp"

namespace dstk {

enum class Padding { valid, same };

// conv2d: input (N,H,W,C), kernel (kh,kw,in,out), bias (out).
// Output spatial size = floor((n + pad_total - k) / stride) + 1 per axis.
// "same" pads with zeros so out = ceil(n / stride); an odd pad total puts the
// extra row/column on the bottom/right.
struct ConvParams {
    Tensor kernel;
    Tensor bias;
    int stride = 1;
    Padding padding = Padding::valid;
};

struct BatchNormParams {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    float momentum = 0.99f;
    float epsilon = 1e-5f;
};

int conv_out_dim(int n, int k, int stride, Padding pad);
int pad_before(int n, int k, int stride, Padding pad);

Tensor conv2d(const Tensor& x, const ConvParams& p);
void conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dout,
                     Tensor* dx, Tensor* dkernel, Tensor* dbias);

// Zero-padding never wins the max: windows track the argmax over in-image
// cells only (with "same" padding, clipped windows shrink at the border).
Tensor max_pool2d(const Tensor& x, int window, int stride, Padding pad = Padding::valid,
                  std::vector<int32_t>* argmax = nullptr);
void max_pool2d_backward(const Tensor& x, const Tensor& out, const std::vector<int32_t>& argmax,
                         const Tensor& dout, Tensor& dx);

Tensor global_avg_pool(const Tensor& x); // (N,H,W,C) -> (N,C)
void global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& dout, Tensor& dx);

Tensor flatten(const Tensor& x); // (N,...) -> (N,prod)

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b); // (N,F)x(F,U)+(U)
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dout,
                    Tensor* dx, Tensor* dw, Tensor* db);

Tensor relu(const Tensor& x);
void relu_backward(const Tensor& x, const Tensor& dout, Tensor& dx); // derivative at 0 is 0

// Batch norm over the trailing channel axis of a rank-2 or rank-4 tensor.
// Training mode normalizes with biased batch statistics and folds them into
// the running estimates: running = momentum*running + (1-momentum)*batch.
struct BnCache {
    Tensor xhat;
    std::vector<float> inv_std;
};
Tensor batch_norm_train(const Tensor& x, BatchNormParams& p, BnCache* cache = nullptr);
Tensor batch_norm_infer(const Tensor& x, const BatchNormParams& p);
void batch_norm_backward(const BnCache& cache, const Tensor& gamma, const Tensor& dout,
                         Tensor* dx, Tensor* dgamma, Tensor* dbeta);

Tensor softmax(const Tensor& logits); // rows of (N,K)
void softmax_backward(const Tensor& y, const Tensor& dout, Tensor& dx);

// Mean negative log-likelihood of integer labels under softmax(logits),
// computed via log-sum-exp without materializing large exponents.
struct CeCache {
    Tensor probs;
};
float sparse_ce_loss(const Tensor& logits, const std::vector<int>& labels,
                     CeCache* cache = nullptr);
void sparse_ce_backward(const CeCache& cache, const std::vector<int>& labels,
                        float dloss, Tensor& dlogits);

Tensor add(const Tensor& a, const Tensor& b);

} // namespace dstk
