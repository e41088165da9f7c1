#include "dstk/gemm.hpp"

#include "dstk/threading.hpp"

namespace dstk {

namespace {

// Register-block sizes. MR*JB floats of C live in registers inside the k
// loop; with AVX-512 that is 10 vector registers plus two for the B panel.
constexpr int MR = 5;
constexpr int JB = 32;

// One MR x JB block of C, full K reduction.
inline void kernel_block(int K, int N, const float* A, int lda, const float* B,
                         float* C, int ldc) {
    float acc[MR][JB];
    for (int r = 0; r < MR; ++r)
        for (int j = 0; j < JB; ++j) acc[r][j] = C[(size_t)r * ldc + j];
    for (int k = 0; k < K; ++k) {
        const float* b = B + (size_t)k * N;
        for (int r = 0; r < MR; ++r) {
            float a = A[(size_t)r * lda + k];
            for (int j = 0; j < JB; ++j) acc[r][j] += a * b[j];
        }
    }
    for (int r = 0; r < MR; ++r)
        for (int j = 0; j < JB; ++j) C[(size_t)r * ldc + j] = acc[r][j];
}

// Generic edge path: any rows x cols block, same k order per element.
inline void kernel_edge(int K, int N, int rows, int cols, const float* A, int lda,
                        const float* B, float* C, int ldc) {
    for (int r = 0; r < rows; ++r) {
        const float* a = A + (size_t)r * lda;
        float* c = C + (size_t)r * ldc;
        for (int j = 0; j < cols; ++j) {
            float acc = c[j];
            const float* b = B + j;
            for (int k = 0; k < K; ++k) acc += a[k] * b[(size_t)k * N];
            c[j] = acc;
        }
    }
}

} // namespace

void sgemm_acc(int M, int N, int K, const float* A, const float* B, float* C) {
    if (M <= 0 || N <= 0 || K <= 0) return;
    int64_t row_blocks = (M + MR - 1) / MR;
    parallel_ranges(row_blocks, [&](int64_t lo, int64_t hi) {
        for (int64_t blk = lo; blk < hi; ++blk) {
            int i0 = (int)(blk * MR);
            int rows = M - i0 < MR ? M - i0 : MR;
            int j0 = 0;
            if (rows == MR)
                for (; j0 + JB <= N; j0 += JB)
                    kernel_block(K, N, A + (size_t)i0 * K, K, B + j0, C + (size_t)i0 * N + j0, N);
            if (j0 < N || rows < MR)
                kernel_edge(K, N, rows, N - j0, A + (size_t)i0 * K, K, B + j0,
                            C + (size_t)i0 * N + j0, N);
        }
    });
}

void sgemm_tA_acc(int M, int N, int K, const float* A, const float* B, float* C) {
    if (M <= 0 || N <= 0 || K <= 0) return;
    // Output rows are indexed by k; reduction runs over m. Same register
    // blocking as sgemm_acc with the roles of the A indices swapped.
    int64_t row_blocks = (K + MR - 1) / MR;
    parallel_ranges(row_blocks, [&](int64_t lo, int64_t hi) {
        for (int64_t blk = lo; blk < hi; ++blk) {
            int k0 = (int)(blk * MR);
            int rows = K - k0 < MR ? K - k0 : MR;
            int j0 = 0;
            if (rows == MR) {
                for (; j0 + JB <= N; j0 += JB) {
                    float acc[MR][JB];
                    for (int r = 0; r < MR; ++r)
                        for (int j = 0; j < JB; ++j)
                            acc[r][j] = C[(size_t)(k0 + r) * N + j0 + j];
                    for (int m = 0; m < M; ++m) {
                        const float* b = B + (size_t)m * N + j0;
                        const float* a = A + (size_t)m * K + k0;
                        for (int r = 0; r < MR; ++r) {
                            float av = a[r];
                            for (int j = 0; j < JB; ++j) acc[r][j] += av * b[j];
                        }
                    }
                    for (int r = 0; r < MR; ++r)
                        for (int j = 0; j < JB; ++j)
                            C[(size_t)(k0 + r) * N + j0 + j] = acc[r][j];
                }
            }
            if (j0 < N || rows < MR) {
                for (int r = 0; r < rows; ++r) {
                    float* c = C + (size_t)(k0 + r) * N;
                    for (int j = j0; j < N; ++j) {
                        float acc = c[j];
                        for (int m = 0; m < M; ++m)
                            acc += A[(size_t)m * K + k0 + r] * B[(size_t)m * N + j];
                        c[j] = acc;
                    }
                }
            }
        }
    });
}

void transpose(const float* src, int rows, int cols, float* dst) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) dst[(size_t)c * rows + r] = src[(size_t)r * cols + c];
}

} // namespace dstk
