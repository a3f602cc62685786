// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Row-major GEMM variants used by the graph ops. All accumulate into C.
// Loops are ordered so the innermost loop is unit-stride; reductions use
// OpenMP SIMD (compiled with -fopenmp-simd), which keeps the summation order
// fixed for a given build.
namespace s2kg::nn::kernels {

// C[n,m] += A[n,k] * B[k,m]
template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  for (std::size_t i = 0; i < n; ++i) {
    T* __restrict ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = ai[p];
      if (s == T{0}) continue;
      const T* __restrict bp = b + p * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) ci[j] += s * bp[j];
    }
  }
}

// C[n,m] += A[n,k] * B[m,k]^T
template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* __restrict ai = a + i * k;
    T* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T* __restrict bj = b + j * k;
      T acc{0};
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k,m] += A[n,k]^T * B[n,m]
template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* __restrict bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = ai[p];
      if (s == T{0}) continue;
      T* __restrict cp = c + p * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) cp[j] += s * bi[j];
    }
  }
}

template <class T>
T dot(std::size_t n, const T* __restrict a, const T* __restrict b) {
  T acc{0};
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void axpy(std::size_t n, T s, const T* __restrict x, T* __restrict y) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

}  // namespace s2kg::nn::kernels
