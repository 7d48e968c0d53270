// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural scenes with exact ground truth at any resolution and frame
// rate, corner-aligned resizing and pixel metrics.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "strata/latent.hpp"

namespace strata {

enum class PrimitiveKind { Rect, Circle, Gradient };

/// Shapes live in the unit square, which is stretched over the frame.
/// Rect and Gradient use box = (x0, y0, x1, y1); Circle uses (cx, cy, r, -).
/// Gradient fills its box with a ramp from color to color2 along `angle`.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Rect;
  std::array<double, 4> box{0, 0, 0, 0};
  std::array<float, 3> color{0, 0, 0};
  std::array<float, 3> color2{0, 0, 0};
  double angle = 0.0;
  double vx = 0.0;  // unit square per second
  double vy = 0.0;

  bool operator==(const Primitive&) const = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int class_id = 0;
  std::array<float, 3> background{0, 0, 0};
  std::vector<Primitive> primitives;

  std::size_t complexity() const noexcept { return primitives.size(); }
  bool operator==(const SceneSpec&) const = default;
};

struct RenderOptions {
  int supersample = 4;
  /// Edge ramp width in unit-square coordinates.
  double softness = 0.04;
};

/// Longest clip (seconds) over which moving primitives stay inside the frame.
inline constexpr double kMaxClipSeconds = 2.0;

/// Frame f (0-based) of a video sits at time (f + 1) / fps; images at time 0.
Sample render(const SceneSpec& scene, const ScaleSpec& target, const RenderOptions& opt = {});

/// Bilinear resize with corner pixels mapped onto corner pixels. Frame count
/// must match.
Sample resize_corner_aligned(const Sample& sample, int height, int width);

/// Peak signal-to-noise ratio in dB, capped at 99 (identical inputs).
double psnr(const Sample& a, const Sample& b, double peak = 1.0);
inline constexpr double kPsnrCap = 99.0;

/// Mean SSIM over channels and frames with an 11x11 Gaussian window
/// (sigma 1.5), k1 = 0.01, k2 = 0.03, dynamic range 1. The window is
/// clipped at borders and renormalized.
double ssim(const Sample& a, const Sample& b);

struct CorpusOptions {
  std::size_t count = 0;
  int min_complexity = 1;
  int max_complexity = 8;
  int classes = 4;
  std::uint64_t seed = 0;
  bool motion = false;
};

/// Deterministic scenes; complexity cycles through the strata so every
/// stratum count is within one of the others.
std::vector<SceneSpec> make_corpus(const CorpusOptions& opt);

/// One scene from its seed, class and primitive count.
SceneSpec make_scene(std::uint64_t seed, int class_id, int complexity, bool motion);

nlohmann::json to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json corpus_to_json(const std::vector<SceneSpec>& corpus);
std::vector<SceneSpec> corpus_from_json(const nlohmann::json& j);

void save_corpus(const std::vector<SceneSpec>& corpus, const std::string& path);
std::vector<SceneSpec> load_corpus(const std::string& path);

}  // namespace strata
