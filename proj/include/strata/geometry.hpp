// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Scale-aware patch geometry and the rotary position coordinates derived
// from it. The number of patches is fixed (k along the shorter side, k_t per
// second); patch sizes follow from the input scale.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "strata/autograd.hpp"

namespace strata {

/// Pixel-space extent of a sample. Images have fps == frames == 1.
struct ScaleSpec {
  int height = 1;
  int width = 1;
  int fps = 1;
  int frames = 1;

  bool is_image() const noexcept { return fps == 1 && frames == 1; }
  void validate() const;
  bool operator==(const ScaleSpec&) const = default;

  static ScaleSpec image(int h, int w) { return {h, w, 1, 1}; }
};

/// Patch counts along (time, height, width).
struct GridDims {
  int t = 1;
  int h = 1;
  int w = 1;

  int patches() const noexcept { return t * h * w; }
  bool operator==(const GridDims&) const = default;
};

struct PatchGeometry {
  int k = 1;    // patches along the shorter spatial side
  int k_t = 1;  // patches per second
  int p_hw = 1; // spatial patch size in pixels
  int p_t = 1;  // temporal patch size in frames
  GridDims grid;
  ScaleSpec scale;

  int num_patches() const noexcept { return grid.patches(); }
  int pixels_per_patch() const noexcept { return p_t * p_hw * p_hw; }

  /// Flat index (frame, row, col) into a t x h x w sample for local pixel
  /// `local` of patch `patch`. Patches are ordered (t', y', x'); local pixels
  /// (frame, row, col).
  std::size_t pixel_index(int patch, int local) const;
};

/// p_hw = min(h, w) / k and p_t = fps / k_t, both exact. Images use p_t = 1.
/// Throws GeometryError naming the required multiple otherwise.
PatchGeometry patch_sizes(const ScaleSpec& scale, int k, int k_t);

/// Geometry for rendering an existing latent grid at `target`. The shorter
/// grid side fixes k; the target aspect must reproduce the grid exactly.
PatchGeometry geometry_for_grid(const ScaleSpec& target, const GridDims& grid, int k_t);

/// Rotary coordinate axes, in channel-group order.
enum class Axis : std::uint8_t { Time = 0, Y = 1, X = 2, Level = 3 };
inline constexpr std::size_t kAxisCount = 4;

struct Coord {
  std::array<double, kAxisCount> v{0, 0, 0, 0};

  double t() const { return v[0]; }
  double y() const { return v[1]; }
  double x() const { return v[2]; }
  double level() const { return v[3]; }
  bool operator==(const Coord&) const = default;
};

using PositionTable = std::vector<Coord>;

/// Pixel coordinates inside one patch, ordered (frame, row, col). Spatial
/// axes are corner-aligned onto [0, 1]; frame j of p_t sits at j / p_t.
PositionTable intra_patch_positions(const PatchGeometry& geom);

/// One coordinate per patch, ordered (t', y', x'). The shorter spatial side
/// spans [0, 1], the longer [0, long/short]; segment s of T' sits at (s + 1) / T'.
PositionTable inter_patch_positions(const GridDims& grid);

struct RopeConfig {
  double base = 10000.0;
  /// Multiplier applied to coordinates before the frequency ladder; the
  /// coordinates are normalized to ~[0, 1] so they need spreading out.
  double coord_scale = 16.0;
};

/// Per-token cos/sin for every rotation pair of one head.
template <typename T>
struct RotaryTable {
  std::size_t tokens = 0;
  std::size_t head_dim = 0;
  std::vector<T> cos;  // [tokens x head_dim / 2]
  std::vector<T> sin;
};

/// head_dim is split into kAxisCount groups of equal width; each group
/// rotates pairs by coord * coord_scale * base^(-2i / group_width).
template <typename T>
RotaryTable<T> make_rotary_table(const PositionTable& positions, std::size_t head_dim,
                                 const RopeConfig& cfg = {});

/// Rotates every head of x[L x heads*head_dim] by the table (recorded op).
template <typename T>
Var<T> rope_rotate(Var<T> x, const RotaryTable<T>& table);

/// Untracked variant for plain tensors.
template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, const RotaryTable<T>& table);

}  // namespace strata
