// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Attention-permission construction for the level-causal token flow:
//   PLA  pixel -> latent (patchifier)
//   LPA  latent -> pixel (depatchifier)
//   LCA  level-causal attention across patches (autoencoder, DiT)
// plus per-patch level budgets (token drop) and inference compaction.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/geometry.hpp"
#include "strata/ops.hpp"

namespace strata {

enum class TokenKind : std::uint8_t { Pixel, Latent };

struct TokenDesc {
  TokenKind kind = TokenKind::Latent;
  std::uint32_t patch = 0;
  std::uint32_t level = 0;    // 1..n for latents, 0 for pixels
  std::uint32_t segment = 0;  // temporal segment of the patch
  std::uint32_t local = 0;    // pixel index inside the patch

  bool operator==(const TokenDesc&) const = default;
};

using TokenLayout = std::vector<TokenDesc>;

/// Number of active latent levels per patch.
struct LevelBudget {
  std::vector<std::uint32_t> levels;
  std::uint32_t max_levels = 1;

  static LevelBudget uniform(std::size_t patches, std::uint32_t m, std::uint32_t n);

  std::size_t patches() const noexcept { return levels.size(); }
  std::uint32_t max_active() const;
  double mean() const;
  bool active(const TokenDesc& tok) const {
    return tok.kind == TokenKind::Pixel || tok.level <= levels.at(tok.patch);
  }
  /// Throws unless 1 <= m_p <= max_levels for every patch.
  void validate() const;
  bool operator==(const LevelBudget&) const = default;
};

/// Pixel tokens of one patch followed by its latents, levels 1..levels.
TokenLayout patch_layout(std::uint32_t patch, std::uint32_t segment, std::uint32_t pixels,
                         std::uint32_t levels);

/// Latent tokens of every patch in level-major order (all level-1 tokens,
/// then level-2, ...), levels 1..levels.
TokenLayout latent_layout(const GridDims& grid, std::uint32_t levels);

/// Latent tokens of one level across all patches.
TokenLayout level_layout(const GridDims& grid, std::uint32_t level);

AttnMask build_pla_mask(const TokenLayout& layout, const LevelBudget& budget);
AttnMask build_lpa_mask(const TokenLayout& layout, const LevelBudget& budget);

/// Query token (p, i, s) may read key (p', i', s') iff both are within
/// budget, i' <= i, and (when temporal_causal) s' <= s.
AttnMask build_lca_mask(const TokenLayout& queries, const TokenLayout& keys,
                        const LevelBudget& budget, bool temporal_causal);
AttnMask build_lca_mask(const TokenLayout& layout, const LevelBudget& budget,
                        bool temporal_causal);

struct Compaction {
  TokenLayout layout;
  /// index[i] is the position in the original layout of compacted token i.
  std::vector<std::size_t> index;
};

/// Drops latent tokens above their patch budget.
Compaction compact(const TokenLayout& layout, const LevelBudget& budget);

/// Rows of `mask` restricted to `rows` and columns to `cols`.
AttnMask submask(const AttnMask& mask, const std::vector<std::size_t>& rows,
                 const std::vector<std::size_t>& cols);

/// Plain PBM (P1) rendering: allowed cells are black.
std::string to_pbm(const AttnMask& mask);
void write_pbm(const AttnMask& mask, const std::string& path);

}  // namespace strata
