// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Entropy-guided content-adaptive token allocation: patches with more luma
// entropy get more latent levels under a fixed mean budget.

#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "strata/data.hpp"
#include "strata/latent.hpp"
#include "strata/tokenizer.hpp"

namespace strata {

/// Shannon entropy in bits of each patch's 8-bit luma histogram.
struct EntropyMap {
  GridDims grid;
  std::vector<double> bits;  // one per patch, in [0, 8]
};

struct AllocationParams {
  double target = 2.0;  // desired mean tokens per patch
  std::uint32_t min_tokens = 1;
  std::uint32_t max_tokens = 3;
  int iterations = 10;  // K
  double theta1 = 0.995;
  double theta2 = 0.999;

  void validate() const;
};

nlohmann::json to_json(const AllocationParams& p);
AllocationParams allocation_params_from_json(const nlohmann::json& j);

struct AllocationGrid {
  GridDims grid;
  std::vector<std::uint32_t> tokens;  // one per patch

  double mean() const;
  /// Per-patch budget for a tokenizer with `levels` levels.
  LevelBudget budget(std::uint32_t levels) const;
};

/// JSON {grid_dims, tokens_per_patch (rows of patches), mean, params}.
nlohmann::json to_json(const AllocationGrid& g, const AllocationParams& p);

/// Luma 0.299 R + 0.587 G + 0.114 B, quantized to round(255 Y).
std::uint8_t luma8(float r, float g, float b);

EntropyMap patch_entropy(const Sample& image, const PatchGeometry& geom);

/// Round half away from zero.
double round_half_away(double x);

/// Affine map of [min E, max E] onto [lo, hi]; all entries map to the
/// midpoint when the entropies are all equal.
std::vector<double> normalize_weights(const std::vector<double>& e, double lo, double hi);

/// The iterative rescale / suppress / shrink allocation.
AllocationGrid allocate(const EntropyMap& entropy, const AllocationParams& params);

struct AllocationReport {
  std::size_t images = 0;
  std::uint32_t uniform_tokens = 0;
  double uniform_psnr = 0;   // mean over images
  double adaptive_psnr = 0;  // mean over images
  double delta = 0;          // adaptive - uniform
  double adaptive_mean_tokens = 0;
  std::vector<double> per_image_delta;

  nlohmann::json to_json() const;
};

/// Reconstructs each scene at `size` x `size` with a uniform budget of
/// floor(target) levels and with the entropy-guided grid.
AllocationReport allocation_rd_report(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes,
                                      const AllocationParams& params, int size);

}  // namespace strata
