// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Hierarchical latent tokenizer. Pixels of each patch are read by n learned
// latent queries (pixel->latent attention), mixed across patches by
// level-causal blocks, and decoded back by pixel queries whose count follows
// the requested output scale (latent->pixel attention).

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "json.hpp"
#include "strata/checkpoint.hpp"
#include "strata/latent.hpp"
#include "strata/nn.hpp"

namespace strata {

struct TokenizerConfig {
  int k = 4;                       // patches along the shorter side
  int k_t = 1;                     // temporal patches per second
  std::uint32_t levels = 4;        // n
  std::size_t latent_dim = 8;      // d
  std::size_t patch_width = 64;    // patchifier / depatchifier width
  std::size_t patch_heads = 1;
  std::size_t patch_layers = 1;
  std::size_t ae_width = 64;       // level-causal encoder / decoder width
  std::size_t ae_heads = 4;
  std::size_t ae_layers = 2;
  std::size_t ffn_mult = 2;
  bool temporal_causal = true;
  RopeConfig rope;

  void validate() const;
};

nlohmann::json to_json(const TokenizerConfig& cfg);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

/// Padded keeps every level up to the largest budget and masks the rest;
/// Compacted drops tokens above their patch budget.
enum class DropMode { Padded, Compacted };

/// Latent layout for a grid under a budget: level-major, truncated to the
/// largest active level.
TokenLayout budget_layout(const GridDims& grid, const LevelBudget& budget, DropMode mode);

/// Inter-patch coordinates plus level for each latent token.
PositionTable latent_positions(const TokenLayout& layout, const GridDims& grid);

/// Ground-truth pixels gathered per patch: rows (patch, local) x 3.
template <typename T>
Tensor<T> patch_pixels(const Sample& sample, const PatchGeometry& geom);

/// Inverse of patch_pixels, clamping to [0, 1].
template <typename T>
Sample scatter_pixels(const Tensor<T>& rows, const PatchGeometry& geom);

template <typename T>
class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed);
  Tokenizer(const Tokenizer&) = delete;
  Tokenizer& operator=(const Tokenizer&) = delete;

  const TokenizerConfig& config() const noexcept { return cfg_; }
  ParameterStore<T>& params() noexcept { return store_; }
  const ParameterStore<T>& params() const noexcept { return store_; }

  PatchGeometry geometry(const ScaleSpec& scale) const { return patch_sizes(scale, cfg_.k, cfg_.k_t); }

  // Recorded building blocks -------------------------------------------------

  /// Patchifier: latent rows [layout x patch_width] read from the pixels.
  Var<T> patchify(Tape<T>& tape, const Sample& sample, const PatchGeometry& geom,
                  const TokenLayout& layout, const LevelBudget& budget) const;

  /// Level-causal encoder: [layout x patch_width] -> [layout x d], rows
  /// above budget zeroed.
  Var<T> encode_stack(Tape<T>& tape, Var<T> h, const TokenLayout& layout,
                      const LevelBudget& budget, const GridDims& grid) const;

  Var<T> encode_tokens(Tape<T>& tape, const Sample& sample, const TokenLayout& layout,
                       const LevelBudget& budget) const;

  /// Level-causal decoder over `layout` queries. With `cache`, keys/values
  /// of `prefix_layout` tokens are read from it (one entry per block) and
  /// this call's keys/values are appended.
  Var<T> decode_stack(Tape<T>& tape, Var<T> z, const TokenLayout& layout,
                      const LevelBudget& budget, const GridDims& grid,
                      std::vector<BlockKV<T>>* cache = nullptr,
                      const TokenLayout* prefix_layout = nullptr) const;

  /// Depatchifier: decoder rows in `layout` order -> pixel rows
  /// (patch, local) x 3 at the target geometry.
  Var<T> depatchify(Tape<T>& tape, Var<T> h, const TokenLayout& layout,
                    const LevelBudget& budget, const PatchGeometry& target) const;

  Var<T> decode_tokens(Tape<T>& tape, Var<T> z, const TokenLayout& layout,
                       const LevelBudget& budget, const PatchGeometry& target) const;

  // Inference ----------------------------------------------------------------

  LatentGrid encode(const Sample& sample, const LevelBudget& budget,
                    DropMode mode = DropMode::Compacted) const;
  /// Decodes with the grid's own budget.
  Sample decode(const LatentGrid& latents, const ScaleSpec& target,
                DropMode mode = DropMode::Compacted) const;
  Sample decode(const LatentGrid& latents, const ScaleSpec& target, const LevelBudget& budget,
                DropMode mode = DropMode::Compacted) const;

  std::size_t decoder_blocks() const noexcept { return dec_.size(); }

 private:
  Var<T> run_lca(Tape<T>& tape, const std::vector<TransformerBlock<T>>& blocks, Var<T> h,
                 const TokenLayout& layout, const LevelBudget& budget, const GridDims& grid,
                 std::vector<BlockKV<T>>* cache, const TokenLayout* prefix_layout) const;

  TokenizerConfig cfg_;
  ParameterStore<T> store_;
  std::vector<TransformerBlock<T>> patch_enc_, enc_, dec_, patch_dec_;
  Parameter<T>* pix_in_w_;
  Parameter<T>* pix_in_b_;
  Parameter<T>* queries_;
  Parameter<T>* patch_enc_norm_;
  Parameter<T>* enc_in_w_;
  Parameter<T>* enc_in_b_;
  Parameter<T>* enc_norm_;
  Parameter<T>* enc_out_w_;
  Parameter<T>* enc_out_b_;
  Parameter<T>* dec_in_w_;
  Parameter<T>* dec_in_b_;
  Parameter<T>* dec_norm_;
  Parameter<T>* dec_out_w_;
  Parameter<T>* dec_out_b_;
  Parameter<T>* pixel_query_;
  Parameter<T>* patch_dec_norm_;
  Parameter<T>* pix_out_w_;
  Parameter<T>* pix_out_b_;
};

void save_tokenizer(const Tokenizer<float>& tok, const std::string& dir);
std::unique_ptr<Tokenizer<float>> load_tokenizer(const std::string& dir);
std::unique_ptr<Tokenizer<float>> tokenizer_from_checkpoint(const Checkpoint& ckpt);

/// Progressive decoding: level-causal decoder keys/values of finalized
/// levels are cached so each new level only runs its own tokens.
template <typename T>
class DecoderState {
 public:
  DecoderState(const Tokenizer<T>& tok, const GridDims& grid);

  /// Appends level levels()+1 from its rows [patches x d].
  void add_level(const Tensor<float>& rows);
  std::uint32_t levels() const noexcept { return levels_; }
  /// Decoder outputs of all finalized levels, level-major.
  const Tensor<T>& stack_output() const noexcept { return out_; }
  Sample render(const ScaleSpec& target) const;

 private:
  const Tokenizer<T>* tok_;
  GridDims grid_;
  std::uint32_t levels_ = 0;
  std::vector<BlockKV<T>> cache_;
  Tensor<T> out_;
};

}  // namespace strata
