// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "strata/geometry.hpp"
#include "strata/ops.hpp"

namespace strata {

/// Owns a model's parameters in registration order (which is also the
/// checkpoint order). Names are unique.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value);
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>& at(const std::string& name);

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  /// Parameters whose names start with `prefix`.
  std::vector<Parameter<T>*> with_prefix(const std::string& prefix);

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

/// Deterministic initializers.
template <typename T>
Tensor<T> init_normal(Shape shape, std::mt19937_64& rng, double stddev);

/// Keys and values a block produced for its tokens, already rotated.
template <typename T>
struct BlockKV {
  Tensor<T> k;
  Tensor<T> v;

  std::size_t rows() const { return k.empty() ? 0 : k.rows(); }
  void append(const BlockKV& more);
};

/// Per-token adaptive-norm modulation, each [L x D].
template <typename T>
struct Modulation {
  Var<T> shift_attn, scale_attn, gate_attn;
  Var<T> shift_ffn, scale_ffn, gate_ffn;
};

/// Everything a block needs besides its input rows.
template <typename T>
struct BlockContext {
  const RotaryTable<T>* rope = nullptr;    // one entry per query row
  std::span<const AttentionBlock> attn;    // masks over [prefix keys ; own keys]
  const Modulation<T>* mod = nullptr;
  std::optional<Var<T>> cond_tokens;        // cross-attention memory
  const BlockKV<T>* prefix = nullptr;      // cached keys/values placed before own keys
  BlockKV<T>* kv_out = nullptr;            // receives this call's own keys/values
  AttentionCounter* counter = nullptr;
};

struct BlockShape {
  std::size_t width = 64;
  std::size_t heads = 2;
  std::size_t ffn_hidden = 128;
  bool cross_attention = false;
};

/// Pre-norm transformer block: RMSNorm -> masked multi-head self-attention
/// with rotary positions -> (optional cross-attention) -> RMSNorm -> SwiGLU.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(ParameterStore<T>& store, const std::string& prefix, const BlockShape& shape,
                   std::mt19937_64& rng, double out_scale);

  Var<T> forward(Tape<T>& tape, Var<T> x, const BlockContext<T>& ctx) const;

  const BlockShape& shape() const noexcept { return shape_; }

 private:
  BlockShape shape_;
  Parameter<T>* norm1_;
  Parameter<T>* wq_;
  Parameter<T>* wk_;
  Parameter<T>* wv_;
  Parameter<T>* wo_;
  Parameter<T>* norm2_;
  Parameter<T>* ffn_a_;
  Parameter<T>* ffn_b_;
  Parameter<T>* ffn_out_;
  Parameter<T>* normc_ = nullptr;
  Parameter<T>* cq_ = nullptr;
  Parameter<T>* ck_ = nullptr;
  Parameter<T>* cv_ = nullptr;
  Parameter<T>* co_ = nullptr;
};

}  // namespace strata
