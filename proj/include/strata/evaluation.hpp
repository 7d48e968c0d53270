// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Held-out reconstruction studies over the synthetic corpus.

#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "strata/data.hpp"
#include "strata/tokenizer.hpp"

namespace strata {

/// PSNR per level count for simple and busy scenes, and how many levels the
/// simple ones need to match the busy ones at full budget.
struct ComplexityReport {
  int low_max = 2;   // scenes with at most this many primitives are "low"
  int high_min = 6;  // scenes with at least this many are "high"
  std::size_t low_count = 0;
  std::size_t high_count = 0;
  std::vector<double> low_psnr;   // mean per m = 1..n
  std::vector<double> high_psnr;  // mean per m = 1..n
  /// Mean over low scenes of the smallest m whose PSNR reaches the high
  /// scenes' mean n-level PSNR; a scene that never does counts as n + 1.
  double low_levels_needed = 0;
  std::size_t low_unreached = 0;

  nlohmann::json to_json() const;
};

ComplexityReport complexity_report(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes, int size,
                                   int low_max = 2, int high_min = 6);

/// Encodes at `base`^2, decodes at `base`^2 and at `large`^2, and scores the
/// corner-aligned downsample of the large decode against the same ground
/// truth as the direct one.
struct MultiScaleReport {
  int base = 32;
  int large = 64;
  std::size_t scenes = 0;
  double direct_psnr = 0;       // mean
  double downsampled_psnr = 0;  // mean
  double gap = 0;               // direct - downsampled

  nlohmann::json to_json() const;
};

MultiScaleReport multiscale_report(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes,
                                   int base = 32, int large = 64);

}  // namespace strata
