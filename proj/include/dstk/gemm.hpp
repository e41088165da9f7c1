#pragma once

namespace dstk {

// Hand-blocked single-precision GEMM kernels. All matrices are dense
// row-major. Every output element accumulates its reduction in a fixed
// ascending order, independent of blocking and worker count, so repeated
// runs (and different batch sizes) are bit-identical per row.

// C[M x N] += A[M x K] * B[K x N]; reduction over k ascending.
void sgemm_acc(int M, int N, int K, const float* A, const float* B, float* C);

// C[K x N] += A[M x K]^T * B[M x N]; reduction over m ascending.
void sgemm_tA_acc(int M, int N, int K, const float* A, const float* B, float* C);

// dst[cols x rows] = src[rows x cols]^T
void transpose(const float* src, int rows, int cols, float* dst);

} // namespace dstk
