// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small row-major GEMM kernels used by the im2col convolutions. All of them
// accumulate into C. Columns are processed in tiles so the working set of B
// stays cache resident.

#include <algorithm>
#include <cstddef>

namespace v4d::ops::gemm {

inline constexpr std::size_t kColumnTile = 512;

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnTile) {
    const std::size_t j1 = std::min(n, j0 + kColumnTile);
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T w = arow[p];
        if (w == T{0}) continue;
        const T* brow = b + p * n;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) crow[j] += w * brow[j];
      }
    }
  }
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnTile) {
    const std::size_t j1 = std::min(n, j0 + kColumnTile);
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      const T* acol = a + p * m;
      for (std::size_t i = 0; i < m; ++i) {
        const T w = acol[i];
        if (w == T{0}) continue;
        T* crow = c + i * n;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) crow[j] += w * brow[j];
      }
    }
  }
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

}  // namespace v4d::ops::gemm
