// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Row-major C = A B where every element is accumulated in increasing k by
// the same multiply-add sequence, whatever the matrix shapes. Eigen picks
// kernels (and reduction orders) by size, so a row's result could change
// when unrelated rows were added; forward passes use this kernel instead so
// outputs do not depend on how many tokens share the call.

#pragma once

#include <cstddef>

namespace strata::detail {

template <typename T>
struct Lanes {
  static constexpr std::size_t kWidth = 32 / sizeof(T);
  typedef T Vec __attribute__((vector_size(32)));
  typedef T UVec __attribute__((vector_size(32), aligned(alignof(T))));
  static Vec load(const T* p) { return *reinterpret_cast<const UVec*>(p); }
  static void store(T* p, Vec v) { *reinterpret_cast<UVec*>(p) = v; }
};

/// c [m x n] = a [m x k] * b [k x n], all row-major and densely packed.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using L = Lanes<T>;
  using V = typename L::Vec;
  constexpr std::size_t W = L::kWidth;
  for (std::size_t i = 0; i < m; i += 4) {
    const std::size_t rows = m - i < 4 ? m - i : 4;
    // Rows past the end alias the block's first row and are stored first,
    // so the real row's value lands last.
    const T* __restrict a0 = a + i * k;
    const T* __restrict a1 = a + (i + (rows > 1 ? 1 : 0)) * k;
    const T* __restrict a2 = a + (i + (rows > 2 ? 2 : 0)) * k;
    const T* __restrict a3 = a + (i + (rows > 3 ? 3 : 0)) * k;
    T* c0 = c + i * n;
    T* c1 = c + (i + (rows > 1 ? 1 : 0)) * n;
    T* c2 = c + (i + (rows > 2 ? 2 : 0)) * n;
    T* c3 = c + (i + (rows > 3 ? 3 : 0)) * n;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
      V s00{}, s01{}, s10{}, s11{}, s20{}, s21{}, s30{}, s31{};
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T* br = b + kk * n + j;
        const V b0 = L::load(br), b1 = L::load(br + W);
        const T x0 = a0[kk], x1 = a1[kk], x2 = a2[kk], x3 = a3[kk];
        s00 += x0 * b0;
        s01 += x0 * b1;
        s10 += x1 * b0;
        s11 += x1 * b1;
        s20 += x2 * b0;
        s21 += x2 * b1;
        s30 += x3 * b0;
        s31 += x3 * b1;
      }
      L::store(c3 + j, s30);
      L::store(c3 + j + W, s31);
      L::store(c2 + j, s20);
      L::store(c2 + j + W, s21);
      L::store(c1 + j, s10);
      L::store(c1 + j + W, s11);
      L::store(c0 + j, s00);
      L::store(c0 + j + W, s01);
    }
    for (; j + W <= n; j += W) {
      V s0{}, s1{}, s2{}, s3{};
      for (std::size_t kk = 0; kk < k; ++kk) {
        const V b0 = L::load(b + kk * n + j);
        s0 += a0[kk] * b0;
        s1 += a1[kk] * b0;
        s2 += a2[kk] * b0;
        s3 += a3[kk] * b0;
      }
      L::store(c3 + j, s3);
      L::store(c2 + j, s2);
      L::store(c1 + j, s1);
      L::store(c0 + j, s0);
    }
    for (; j < n; ++j) {
      T s0{}, s1{}, s2{}, s3{};
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T bj = b[kk * n + j];
        s0 += a0[kk] * bj;
        s1 += a1[kk] * bj;
        s2 += a2[kk] * bj;
        s3 += a3[kk] * bj;
      }
      c3[j] = s3;
      c2[j] = s2;
      c1[j] = s1;
      c0[j] = s0;
    }
  }
}

}  // namespace strata::detail
