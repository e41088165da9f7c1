#include "dstk/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dstk/gemm.hpp"
#include "dstk/threading.hpp"

namespace dstk {

int conv_out_dim(int n, int k, int stride, Padding pad) {
    if (stride < 1) throw DataError("stride must be >= 1");
    if (pad == Padding::same) return (n + stride - 1) / stride;
    if (k > n)
        throw DimensionError("window " + std::to_string(k) + " exceeds input extent " +
                             std::to_string(n) + " with valid padding");
    return (n - k) / stride + 1;
}

int pad_before(int n, int k, int stride, Padding pad) {
    if (pad == Padding::valid) return 0;
    int out = (n + stride - 1) / stride;
    int total = (out - 1) * stride + k - n;
    if (total < 0) total = 0;
    return total / 2; // odd totals put the extra row/column after the image
}

namespace {

// Gathers conv patches for output rows [m_lo, m_hi) into col (row-major
// M x kh*kw*C); out-of-image cells are zero.
void im2col_rows(const Tensor& x, int kh, int kw, int stride, int pt, int pl, int oh, int ow,
                 float* col, int64_t m_lo, int64_t m_hi) {
    const int H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int K = kh * kw * C;
    for (int64_t m = m_lo; m < m_hi; ++m) {
        int n = (int)(m / ((int64_t)oh * ow));
        int rem = (int)(m % ((int64_t)oh * ow));
        int oy = rem / ow, ox = rem % ow;
        float* row = col + (m - m_lo) * K;
        int iy0 = oy * stride - pt, ix0 = ox * stride - pl;
        for (int ky = 0; ky < kh; ++ky) {
            int iy = iy0 + ky;
            float* dst = row + (size_t)ky * kw * C;
            if (iy < 0 || iy >= H) {
                std::memset(dst, 0, sizeof(float) * (size_t)kw * C);
                continue;
            }
            for (int kx = 0; kx < kw; ++kx) {
                int ix = ix0 + kx;
                if (ix < 0 || ix >= W) {
                    std::memset(dst + (size_t)kx * C, 0, sizeof(float) * C);
                } else {
                    const float* src = x.data() + (((size_t)n * H + iy) * W + ix) * C;
                    std::memcpy(dst + (size_t)kx * C, src, sizeof(float) * C);
                }
            }
        }
    }
}

void check_conv_args(const Tensor& x, const ConvParams& p) {
    require_rank(x, 4, "conv2d input");
    require_rank(p.kernel, 4, "conv2d kernel");
    require_rank(p.bias, 1, "conv2d bias");
    if (p.kernel.dim(2) != x.dim(3))
        throw DimensionError("conv2d: input channels " + x.shape_str() +
                             " do not match kernel " + p.kernel.shape_str());
    if (p.bias.dim(0) != p.kernel.dim(3))
        throw DimensionError("conv2d: bias " + p.bias.shape_str() + " does not match kernel " +
                             p.kernel.shape_str());
    if (p.stride < 1) throw DataError("conv2d: stride must be >= 1");
}

} // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    check_conv_args(x, p);
    const int N = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int kh = p.kernel.dim(0), kw = p.kernel.dim(1), OC = p.kernel.dim(3);
    const int oh = conv_out_dim(H, kh, p.stride, p.padding);
    const int ow = conv_out_dim(W, kw, p.stride, p.padding);
    const int pt = pad_before(H, kh, p.stride, p.padding);
    const int pl = pad_before(W, kw, p.stride, p.padding);
    const int K = kh * kw * x.dim(3);
    const int64_t M = (int64_t)N * oh * ow;

    Tensor out({N, oh, ow, OC});
    std::vector<float> col((size_t)M * K);
    // One worker per image: every write stays inside that image's rows.
    parallel_ranges(N, [&](int64_t n_lo, int64_t n_hi) {
        int64_t rows = (int64_t)oh * ow;
        im2col_rows(x, kh, kw, p.stride, pt, pl, oh, ow, col.data() + n_lo * rows * K,
                    n_lo * rows, n_hi * rows);
    });
    float* o = out.data();
    for (int64_t m = 0; m < M; ++m)
        std::memcpy(o + m * OC, p.bias.data(), sizeof(float) * OC);
    sgemm_acc((int)M, OC, K, col.data(), p.kernel.data(), o);
    return out;
}

void conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dout,
                     Tensor* dx, Tensor* dkernel, Tensor* dbias) {
    check_conv_args(x, p);
    const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int kh = p.kernel.dim(0), kw = p.kernel.dim(1), OC = p.kernel.dim(3);
    const int oh = conv_out_dim(H, kh, p.stride, p.padding);
    const int ow = conv_out_dim(W, kw, p.stride, p.padding);
    const int pt = pad_before(H, kh, p.stride, p.padding);
    const int pl = pad_before(W, kw, p.stride, p.padding);
    const int K = kh * kw * C;
    const int64_t M = (int64_t)N * oh * ow;
    if (dout.shape != std::vector<int>{N, oh, ow, OC})
        throw DimensionError("conv2d_backward: dout " + dout.shape_str() + " does not match");

    if (dbias) {
        for (int c = 0; c < OC; ++c) {
            double acc = 0;
            for (int64_t m = 0; m < M; ++m) acc += dout.v[(size_t)m * OC + c];
            dbias->v[(size_t)c] += (float)acc;
        }
    }
    if (dkernel || dx) {
        std::vector<float> col((size_t)M * K);
        parallel_ranges(N, [&](int64_t n_lo, int64_t n_hi) {
            int64_t rows = (int64_t)oh * ow;
            im2col_rows(x, kh, kw, p.stride, pt, pl, oh, ow, col.data() + n_lo * rows * K,
                        n_lo * rows, n_hi * rows);
        });
        if (dkernel) sgemm_tA_acc((int)M, OC, K, col.data(), dout.data(), dkernel->data());
        if (dx) {
            std::vector<float> wt((size_t)OC * K);
            transpose(p.kernel.data(), K, OC, wt.data());
            std::vector<float>& dcol = col; // reuse as the dcol buffer
            std::fill(dcol.begin(), dcol.end(), 0.0f);
            sgemm_acc((int)M, K, OC, dout.data(), wt.data(), dcol.data());
            parallel_ranges(N, [&](int64_t n_lo, int64_t n_hi) {
                int64_t rows = (int64_t)oh * ow;
                for (int64_t m = n_lo * rows; m < n_hi * rows; ++m) {
                    int n = (int)(m / rows);
                    int rem = (int)(m % rows);
                    int oy = rem / ow, ox = rem % ow;
                    const float* row = dcol.data() + (size_t)m * K;
                    int iy0 = oy * p.stride - pt, ix0 = ox * p.stride - pl;
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = iy0 + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            float* dst = dx->data() + (((size_t)n * H + iy) * W + ix) * C;
                            const float* src = row + ((size_t)ky * kw + kx) * C;
                            for (int c = 0; c < C; ++c) dst[c] += src[c];
                        }
                    }
                }
            });
        }
    }
}

Tensor max_pool2d(const Tensor& x, int window, int stride, Padding pad,
                  std::vector<int32_t>* argmax) {
    require_rank(x, 4, "max_pool2d input");
    if (window < 1) throw DataError("max_pool2d: window must be >= 1");
    const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int oh = conv_out_dim(H, window, stride, pad);
    const int ow = conv_out_dim(W, window, stride, pad);
    const int pt = pad_before(H, window, stride, pad);
    const int pl = pad_before(W, window, stride, pad);
    Tensor out({N, oh, ow, C});
    if (argmax) argmax->assign((size_t)out.numel(), -1);
    for (int n = 0; n < N; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int y0 = std::max(oy * stride - pt, 0);
                int x0 = std::max(ox * stride - pl, 0);
                int y1 = std::min(oy * stride - pt + window, H);
                int x1 = std::min(ox * stride - pl + window, W);
                for (int c = 0; c < C; ++c) {
                    float best = -std::numeric_limits<float>::infinity();
                    int64_t best_idx = -1;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) {
                            int64_t idx = (((int64_t)n * H + iy) * W + ix) * C + c;
                            float v = x.v[(size_t)idx];
                            if (v > best) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    int64_t oidx = (((int64_t)n * oh + oy) * ow + ox) * C + c;
                    out.v[(size_t)oidx] = best;
                    if (argmax) (*argmax)[(size_t)oidx] = (int32_t)best_idx;
                }
            }
    return out;
}

void max_pool2d_backward(const Tensor& x, const Tensor& out, const std::vector<int32_t>& argmax,
                         const Tensor& dout, Tensor& dx) {
    (void)x;
    if (!out.same_shape(dout))
        throw DimensionError("max_pool2d_backward: dout " + dout.shape_str() + " vs " +
                             out.shape_str());
    for (size_t i = 0; i < argmax.size(); ++i) dx.v[(size_t)argmax[i]] += dout.v[i];
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool input");
    const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (H * W == 0) throw DataError("global_avg_pool: empty spatial extent");
    Tensor out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = 0;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) acc += x.at4(n, y, xx, c);
            out.at2(n, c) = (float)(acc / (H * W));
        }
    return out;
}

void global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& dout, Tensor& dx) {
    const int N = in_shape[0], H = in_shape[1], W = in_shape[2], C = in_shape[3];
    const float scale = 1.0f / (float)(H * W);
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                for (int c = 0; c < C; ++c) dx.at4(n, y, xx, c) += dout.at2(n, c) * scale;
}

Tensor flatten(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("flatten: need rank >= 2, got " + x.shape_str());
    int64_t f = x.numel() / x.dim(0);
    Tensor out({x.dim(0), (int)f});
    out.v = x.v;
    return out;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "dense input");
    require_rank(w, 2, "dense kernel");
    require_rank(b, 1, "dense bias");
    if (x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1))
        throw DimensionError("dense: shapes " + x.shape_str() + " x " + w.shape_str() + " + " +
                             b.shape_str() + " are inconsistent");
    const int N = x.dim(0), F = x.dim(1), U = w.dim(1);
    Tensor out({N, U});
    for (int n = 0; n < N; ++n)
        std::memcpy(out.data() + (size_t)n * U, b.data(), sizeof(float) * U);
    sgemm_acc(N, U, F, x.data(), w.data(), out.data());
    return out;
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dout,
                    Tensor* dx, Tensor* dw, Tensor* db) {
    const int N = x.dim(0), F = x.dim(1), U = w.dim(1);
    if (dout.shape != std::vector<int>{N, U})
        throw DimensionError("dense_backward: dout " + dout.shape_str() + " does not match");
    if (db)
        for (int u = 0; u < U; ++u) {
            double acc = 0;
            for (int n = 0; n < N; ++n) acc += dout.at2(n, u);
            db->v[(size_t)u] += (float)acc;
        }
    if (dw) sgemm_tA_acc(N, U, F, x.data(), dout.data(), dw->data());
    if (dx) {
        std::vector<float> wt((size_t)U * F);
        transpose(w.data(), F, U, wt.data());
        sgemm_acc(N, F, U, dout.data(), wt.data(), dx->data());
    }
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) out.v[(size_t)i] = x.v[(size_t)i] > 0 ? x.v[(size_t)i] : 0.0f;
    return out;
}

void relu_backward(const Tensor& x, const Tensor& dout, Tensor& dx) {
    for (int64_t i = 0; i < x.numel(); ++i)
        if (x.v[(size_t)i] > 0) dx.v[(size_t)i] += dout.v[(size_t)i];
}

namespace {

int bn_channels(const Tensor& x) {
    if (x.rank() != 2 && x.rank() != 4)
        throw DimensionError("batch_norm: expected rank 2 or 4, got " + x.shape_str());
    return x.dim(x.rank() - 1);
}

void check_bn_params(const Tensor& x, const BatchNormParams& p, int c) {
    if (p.gamma.shape != std::vector<int>{c} || p.beta.shape != std::vector<int>{c} ||
        p.running_mean.shape != std::vector<int>{c} || p.running_var.shape != std::vector<int>{c})
        throw DimensionError("batch_norm: parameter shapes do not match " +
                             std::to_string(c) + " channels of input " + x.shape_str());
}

} // namespace

Tensor batch_norm_train(const Tensor& x, BatchNormParams& p, BnCache* cache) {
    const int C = bn_channels(x);
    check_bn_params(x, p, C);
    const int64_t m = x.numel() / C;
    if (m == 0) throw DataError("batch_norm: empty batch");

    std::vector<double> mean(C, 0.0), var(C, 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int c = 0; c < C; ++c) mean[(size_t)c] += x.v[(size_t)(i * C + c)];
    for (int c = 0; c < C; ++c) mean[(size_t)c] /= (double)m;
    for (int64_t i = 0; i < m; ++i)
        for (int c = 0; c < C; ++c) {
            double d = x.v[(size_t)(i * C + c)] - mean[(size_t)c];
            var[(size_t)c] += d * d;
        }
    for (int c = 0; c < C; ++c) var[(size_t)c] /= (double)m; // biased

    std::vector<float> inv_std((size_t)C), mu((size_t)C);
    for (int c = 0; c < C; ++c) {
        inv_std[(size_t)c] = (float)(1.0 / std::sqrt(var[(size_t)c] + (double)p.epsilon));
        mu[(size_t)c] = (float)mean[(size_t)c];
        p.running_mean.v[(size_t)c] =
            p.momentum * p.running_mean.v[(size_t)c] + (1.0f - p.momentum) * (float)mean[(size_t)c];
        p.running_var.v[(size_t)c] =
            p.momentum * p.running_var.v[(size_t)c] + (1.0f - p.momentum) * (float)var[(size_t)c];
    }

    Tensor out(x.shape);
    Tensor xhat(x.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int c = 0; c < C; ++c) {
            size_t idx = (size_t)(i * C + c);
            float h = (x.v[idx] - mu[(size_t)c]) * inv_std[(size_t)c];
            xhat.v[idx] = h;
            out.v[idx] = p.gamma.v[(size_t)c] * h + p.beta.v[(size_t)c];
        }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std.assign(inv_std.begin(), inv_std.end());
    }
    return out;
}

Tensor batch_norm_infer(const Tensor& x, const BatchNormParams& p) {
    const int C = bn_channels(x);
    check_bn_params(x, p, C);
    const int64_t m = x.numel() / C;
    std::vector<float> scale((size_t)C), shift((size_t)C);
    for (int c = 0; c < C; ++c) {
        float inv = 1.0f / std::sqrt(p.running_var.v[(size_t)c] + p.epsilon);
        scale[(size_t)c] = p.gamma.v[(size_t)c] * inv;
        shift[(size_t)c] = p.beta.v[(size_t)c] - p.running_mean.v[(size_t)c] * scale[(size_t)c];
    }
    Tensor out(x.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int c = 0; c < C; ++c) {
            size_t idx = (size_t)(i * C + c);
            out.v[idx] = x.v[idx] * scale[(size_t)c] + shift[(size_t)c];
        }
    return out;
}

void batch_norm_backward(const BnCache& cache, const Tensor& gamma, const Tensor& dout,
                         Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
    const Tensor& xhat = cache.xhat;
    const int C = xhat.dim(xhat.rank() - 1);
    const int64_t m = xhat.numel() / C;
    if (!xhat.same_shape(dout))
        throw DimensionError("batch_norm_backward: dout " + dout.shape_str() + " vs " +
                             xhat.shape_str());
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int c = 0; c < C; ++c) {
            size_t idx = (size_t)(i * C + c);
            sum_dy[(size_t)c] += dout.v[idx];
            sum_dy_xhat[(size_t)c] += (double)dout.v[idx] * xhat.v[idx];
        }
    if (dgamma)
        for (int c = 0; c < C; ++c) dgamma->v[(size_t)c] += (float)sum_dy_xhat[(size_t)c];
    if (dbeta)
        for (int c = 0; c < C; ++c) dbeta->v[(size_t)c] += (float)sum_dy[(size_t)c];
    if (dx) {
        std::vector<float> mean_dy((size_t)C), mean_dy_xhat((size_t)C);
        for (int c = 0; c < C; ++c) {
            mean_dy[(size_t)c] = (float)(sum_dy[(size_t)c] / (double)m);
            mean_dy_xhat[(size_t)c] = (float)(sum_dy_xhat[(size_t)c] / (double)m);
        }
        for (int64_t i = 0; i < m; ++i)
            for (int c = 0; c < C; ++c) {
                size_t idx = (size_t)(i * C + c);
                dx->v[idx] += gamma.v[(size_t)c] * cache.inv_std[(size_t)c] *
                              (dout.v[idx] - mean_dy[(size_t)c] - xhat.v[idx] * mean_dy_xhat[(size_t)c]);
            }
    }
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax input");
    const int N = logits.dim(0), K = logits.dim(1);
    if (K < 1) throw DimensionError("softmax: empty rows");
    Tensor out({N, K});
    for (int n = 0; n < N; ++n) {
        const float* row = logits.data() + (size_t)n * K;
        float* o = out.data() + (size_t)n * K;
        float m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        float s = 0;
        for (int k = 0; k < K; ++k) {
            o[k] = std::exp(row[k] - m);
            s += o[k];
        }
        for (int k = 0; k < K; ++k) o[k] /= s;
    }
    return out;
}

void softmax_backward(const Tensor& y, const Tensor& dout, Tensor& dx) {
    const int N = y.dim(0), K = y.dim(1);
    for (int n = 0; n < N; ++n) {
        const float* yr = y.data() + (size_t)n * K;
        const float* dr = dout.data() + (size_t)n * K;
        double dot = 0;
        for (int k = 0; k < K; ++k) dot += (double)dr[k] * yr[k];
        float* dxr = dx.data() + (size_t)n * K;
        for (int k = 0; k < K; ++k) dxr[k] += yr[k] * (dr[k] - (float)dot);
    }
}

float sparse_ce_loss(const Tensor& logits, const std::vector<int>& labels, CeCache* cache) {
    require_rank(logits, 2, "sparse_ce_loss logits");
    const int N = logits.dim(0), K = logits.dim(1);
    if ((int)labels.size() != N)
        throw DimensionError("sparse_ce_loss: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(N));
    if (N == 0) throw DataError("sparse_ce_loss: empty batch");
    Tensor probs({N, K});
    double total = 0;
    for (int n = 0; n < N; ++n) {
        int y = labels[(size_t)n];
        if (y < 0 || y >= K)
            throw DataError("sparse_ce_loss: label " + std::to_string(y) + " at row " +
                            std::to_string(n) + " outside [0," + std::to_string(K) + ")");
        const float* row = logits.data() + (size_t)n * K;
        float m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double s = 0;
        for (int k = 0; k < K; ++k) s += std::exp((double)row[k] - m);
        double lse = m + std::log(s);
        total += lse - row[y];
        float* p = probs.data() + (size_t)n * K;
        for (int k = 0; k < K; ++k) p[k] = (float)(std::exp((double)row[k] - m) / s);
    }
    if (cache) cache->probs = std::move(probs);
    return (float)(total / N);
}

void sparse_ce_backward(const CeCache& cache, const std::vector<int>& labels, float dloss,
                        Tensor& dlogits) {
    const int N = cache.probs.dim(0), K = cache.probs.dim(1);
    const float scale = dloss / (float)N;
    for (int n = 0; n < N; ++n) {
        const float* p = cache.probs.data() + (size_t)n * K;
        float* d = dlogits.data() + (size_t)n * K;
        for (int k = 0; k < K; ++k)
            d[k] += scale * (p[k] - (k == labels[(size_t)n] ? 1.0f : 0.0f));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("add: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
    Tensor out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out.v[(size_t)i] = a.v[(size_t)i] + b.v[(size_t)i];
    return out;
}

} // namespace dstk
