// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Pixel samples and the hierarchical latent grid shared by the tokenizer,
// the diffusion model and the service.

#pragma once

#include <vector>

#include "strata/geometry.hpp"
#include "strata/masks.hpp"
#include "strata/tensor.hpp"

namespace strata {

/// Pixels [frames x height x width x 3], values in [0, 1].
struct Sample {
  Tensor<float> pixels;
  ScaleSpec scale;

  Sample() = default;
  explicit Sample(const ScaleSpec& s)
      : pixels({static_cast<std::size_t>(s.frames), static_cast<std::size_t>(s.height),
                static_cast<std::size_t>(s.width), 3}),
        scale(s) {}

  float& at(int frame, int y, int x, int c) {
    return pixels[((static_cast<std::size_t>(frame) * scale.height + y) * scale.width + x) * 3 + c];
  }
  float at(int frame, int y, int x, int c) const {
    return pixels[((static_cast<std::size_t>(frame) * scale.height + y) * scale.width + x) * 3 + c];
  }
  /// Copy of one frame as an image sample.
  Sample frame(int index) const;
};

/// Latents [T' x H' x W' x n x d]; entries above each patch's budget are 0.
struct LatentGrid {
  Tensor<float> values;
  GridDims grid;
  LevelBudget budget;
  std::uint32_t levels = 0;  // n
  std::size_t dim = 0;       // d

  LatentGrid() = default;
  LatentGrid(const GridDims& g, std::uint32_t n, std::size_t d, LevelBudget b);

  std::size_t offset(std::uint32_t patch, std::uint32_t level) const {
    return (static_cast<std::size_t>(patch) * levels + (level - 1)) * dim;
  }
  std::span<float> token(std::uint32_t patch, std::uint32_t level) {
    return {values.data() + offset(patch, level), dim};
  }
  std::span<const float> token(std::uint32_t patch, std::uint32_t level) const {
    return {values.data() + offset(patch, level), dim};
  }

  /// Rows [layout.size() x d] in layout order.
  Tensor<float> rows(const TokenLayout& layout) const;
  /// Writes rows back; tokens not in the layout are left unchanged.
  void set_rows(const TokenLayout& layout, const Tensor<float>& rows);
  /// Zeroes every entry above the budget.
  void apply_budget();
};

}  // namespace strata
