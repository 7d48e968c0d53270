// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "strata/autograd.hpp"

namespace strata {

/// Attention permission matrix: allow[r * cols + c] != 0 means query r may
/// read key c. Rows with no allowed key produce a zero output.
struct AttnMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  AttnMask() = default;
  AttnMask(std::size_t r, std::size_t c, bool value = false)
      : rows(r), cols(c), allow(r * c, value ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return allow[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { allow[r * cols + c] = v ? 1 : 0; }
  std::size_t count() const;
  std::size_t row_count(std::size_t r) const;
  bool operator==(const AttnMask&) const = default;
};

/// One independent attention problem inside a longer token sequence:
/// queries [q_begin, q_begin + mask.rows) read keys [k_begin, k_begin + mask.cols).
struct AttentionBlock {
  std::size_t q_begin = 0;
  std::size_t k_begin = 0;
  AttnMask mask;
};

/// Tally of allowed (query, key) pairs actually evaluated.
struct AttentionCounter {
  std::uint64_t pairs = 0;
  std::uint64_t calls = 0;
};

// Linear algebra -----------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

/// x[L x in] * w[in x out] (+ b[out]).
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b = std::nullopt);

// Elementwise ----------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T c);
template <typename T>
Var<T> add_scalar(Var<T> a, T c);
/// x[L x D] + b[D] broadcast over rows.
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b);
/// x[L x D] * g[D] broadcast over rows.
template <typename T>
Var<T> mul_rowvec(Var<T> x, Var<T> g);
/// Row r of x scaled by the constant w[r].
template <typename T>
Var<T> scale_rows(Var<T> x, std::span<const T> w);
template <typename T>
Var<T> silu(Var<T> x);

// Structure ----------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
/// out[i] = x[index[i]]; gradients scatter-add back.
template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> index);

// Normalization, attention -------------------------------------------------

/// x / sqrt(mean(x^2) + eps) * gain, per row.
template <typename T>
Var<T> rmsnorm(Var<T> x, Var<T> gain, T eps);

/// Multi-head masked softmax attention. Blocked logits take no part in the
/// softmax (and receive no gradient); fully blocked rows output zeros.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const AttentionBlock> blocks,
                 std::size_t heads, AttentionCounter* counter = nullptr);

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttnMask& mask, std::size_t heads,
                 AttentionCounter* counter = nullptr);

/// w_out * (silu(x * w_a) .* (x * w_b)).
template <typename T>
Var<T> swiglu_ffn(Var<T> x, Var<T> w_a, Var<T> w_b, Var<T> w_out);

// Reductions and losses ---------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
/// mean((a - b)^2)
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);
/// Per-row cosine similarity, shape [L]. Zero rows give 0.
template <typename T>
Var<T> cosine_rows(Var<T> a, Var<T> b, T eps = T(1e-8));
/// mean(max(0, |x| - margin)^2)
template <typename T>
Var<T> hinge_sq_mean(Var<T> x, T margin);

}  // namespace strata
