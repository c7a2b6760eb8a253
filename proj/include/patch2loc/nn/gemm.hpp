#pragma once

#include <algorithm>
#include <cstddef>

// Row-major matrix products. Every output element is reduced in a fixed
// sequential order that does not depend on the other matrix dimensions, so
// evaluating a batch in chunks gives bit-identical results.
namespace patch2loc::nn {
namespace detail {

// C[M x N] (+)= op(A) * B[K x N], op(A)(i, k) = A[i*K + k] or A[k*M + i].
template <class T, bool TransA>
void gemm_rows(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  constexpr int kTile = 128;
  alignas(64) T acc[4][kTile];
  auto a_at = [&](int i, int k) -> T {
    if constexpr (TransA) {
      return A[static_cast<std::size_t>(k) * M + i];
    } else {
      return A[static_cast<std::size_t>(i) * K + k];
    }
  };
  for (int j0 = 0; j0 < N; j0 += kTile) {
    const int jn = std::min(kTile, N - j0);
    int i = 0;
    for (; i + 4 <= M; i += 4) {
      for (int r = 0; r < 4; ++r) {
        const T* c = C + static_cast<std::size_t>(i + r) * N + j0;
        for (int j = 0; j < jn; ++j) acc[r][j] = accumulate ? c[j] : T(0);
      }
      for (int k = 0; k < K; ++k) {
        const T* b = B + static_cast<std::size_t>(k) * N + j0;
        const T a0 = a_at(i, k);
        const T a1 = a_at(i + 1, k);
        const T a2 = a_at(i + 2, k);
        const T a3 = a_at(i + 3, k);
        for (int j = 0; j < jn; ++j) {
          const T bj = b[j];
          acc[0][j] += a0 * bj;
          acc[1][j] += a1 * bj;
          acc[2][j] += a2 * bj;
          acc[3][j] += a3 * bj;
        }
      }
      for (int r = 0; r < 4; ++r) {
        T* c = C + static_cast<std::size_t>(i + r) * N + j0;
        for (int j = 0; j < jn; ++j) c[j] = acc[r][j];
      }
    }
    for (; i < M; ++i) {
      T* c = C + static_cast<std::size_t>(i) * N + j0;
      for (int j = 0; j < jn; ++j) acc[0][j] = accumulate ? c[j] : T(0);
      for (int k = 0; k < K; ++k) {
        const T* b = B + static_cast<std::size_t>(k) * N + j0;
        const T a0 = a_at(i, k);
        for (int j = 0; j < jn; ++j) acc[0][j] += a0 * b[j];
      }
      for (int j = 0; j < jn; ++j) c[j] = acc[0][j];
    }
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  alignas(64) T lanes[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[j + l] * b[j + l];
  }
  T s = T(0);
  for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
  for (; j < n; ++j) s += a[j] * b[j];
  return s;
}

}  // namespace detail

/// C[M x N] (+)= A[M x K] * B[K x N]
template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate = false) {
  detail::gemm_rows<T, false>(M, N, K, A, B, C, accumulate);
}

/// C[M x N] (+)= A[K x M]^T * B[K x N]
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate = false) {
  detail::gemm_rows<T, true>(M, N, K, A, B, C, accumulate);
}

/// C[M x K] (+)= A[M x N] * B[K x N]^T
template <class T>
void gemm_nt(int M, int K, int N, const T* A, const T* B, T* C, bool accumulate = false) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * N;
    T* c = C + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T v = detail::dot(a, B + static_cast<std::size_t>(k) * N, static_cast<std::size_t>(N));
      c[k] = accumulate ? c[k] + v : v;
    }
  }
}

}  // namespace patch2loc::nn
