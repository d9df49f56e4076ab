#pragma once

#include <algorithm>
#include <cstddef>

// Row-major single-threaded matrix products. The innermost loop always runs
// over a contiguous output row so it vectorizes without reassociating sums;
// every output element accumulates in ascending k order.
namespace boxprompt::num::gemm {

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B, T* __restrict C,
        bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    T* __restrict crow = C + i * N;
    if (!accumulate) std::fill(crow, crow + N, T(0));
    const T* arow = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* __restrict brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[M,N] (+)= A^T * B with A stored as [K,M].
template <typename T>
void tn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, const T* __restrict B, T* __restrict C,
        bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T(0));
  for (std::size_t k = 0; k < K; ++k) {
    const T* arow = A + k * M;
    const T* __restrict brow = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = arow[i];
      T* __restrict crow = C + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// out[cols, rows] = in[rows, cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* __restrict in, T* __restrict out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

}  // namespace boxprompt::num::gemm
