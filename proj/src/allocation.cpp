// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/allocation.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace strata {

void AllocationParams::validate() const {
  STRATA_CHECK(min_tokens >= 1, "allocation lower bound must be >= 1");
  STRATA_CHECK(min_tokens <= max_tokens, "allocation bounds [", min_tokens, ", ", max_tokens, "] are empty");
  STRATA_CHECK(target >= min_tokens && target <= max_tokens, "target mean ", target, " outside [",
               min_tokens, ", ", max_tokens, "]");
  STRATA_CHECK(iterations >= 1, "allocation needs at least one iteration");
  STRATA_CHECK(theta1 > 0 && theta1 < 1 && theta2 > 0 && theta2 < 1, "theta1/theta2 must lie in (0, 1)");
}

nlohmann::json to_json(const AllocationParams& p) {
  return {{"target", p.target},         {"min_tokens", p.min_tokens}, {"max_tokens", p.max_tokens},
          {"iterations", p.iterations}, {"theta1", p.theta1},         {"theta2", p.theta2}};
}

AllocationParams allocation_params_from_json(const nlohmann::json& j) {
  AllocationParams p;
  p.target = j.value("target", p.target);
  p.min_tokens = j.value("min_tokens", p.min_tokens);
  p.max_tokens = j.value("max_tokens", p.max_tokens);
  p.iterations = j.value("iterations", p.iterations);
  p.theta1 = j.value("theta1", p.theta1);
  p.theta2 = j.value("theta2", p.theta2);
  p.validate();
  return p;
}

double AllocationGrid::mean() const {
  if (tokens.empty()) return 0.0;
  double s = 0;
  for (auto t : tokens) s += t;
  return s / static_cast<double>(tokens.size());
}

LevelBudget AllocationGrid::budget(std::uint32_t levels) const {
  LevelBudget b{tokens, levels};
  b.validate();
  return b;
}

nlohmann::json to_json(const AllocationGrid& g, const AllocationParams& p) {
  nlohmann::json rows = nlohmann::json::array();
  const auto w = static_cast<std::size_t>(g.grid.w);
  for (std::size_t r = 0; r * w < g.tokens.size(); ++r) {
    rows.push_back(std::vector<std::uint32_t>(g.tokens.begin() + static_cast<std::ptrdiff_t>(r * w),
                                              g.tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * w)));
  }
  return {{"grid_dims", {{"t", g.grid.t}, {"h", g.grid.h}, {"w", g.grid.w}}},
          {"tokens_per_patch", rows},
          {"mean", g.mean()},
          {"params", to_json(p)}};
}

std::uint8_t luma8(float r, float g, float b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::floor(255.0 * y + 0.5), 0.0, 255.0));
}

EntropyMap patch_entropy(const Sample& image, const PatchGeometry& geom) {
  STRATA_CHECK_SHAPE(image.scale == geom.scale, "image scale does not match the patch geometry");
  EntropyMap out{geom.grid, {}};
  const int P = geom.num_patches();
  const int Np = geom.pixels_per_patch();
  out.bits.reserve(static_cast<std::size_t>(P));
  for (int p = 0; p < P; ++p) {
    std::array<int, 256> hist{};
    for (int l = 0; l < Np; ++l) {
      const std::size_t px = geom.pixel_index(p, l) * 3;
      ++hist[luma8(image.pixels[px], image.pixels[px + 1], image.pixels[px + 2])];
    }
    double h = 0;
    for (int c : hist) {
      if (c == 0) continue;
      const double q = static_cast<double>(c) / Np;
      h -= q * std::log2(q);
    }
    out.bits.push_back(std::max(0.0, h));
  }
  return out;
}

double round_half_away(double x) { return x < 0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5); }

std::vector<double> normalize_weights(const std::vector<double>& e, double lo, double hi) {
  std::vector<double> w(e.size());
  if (e.empty()) return w;
  const auto [mn, mx] = std::minmax_element(e.begin(), e.end());
  const double span = *mx - *mn;
  for (std::size_t i = 0; i < e.size(); ++i) {
    w[i] = span > 0 ? lo + (e[i] - *mn) / span * (hi - lo) : 0.5 * (lo + hi);
  }
  return w;
}

namespace {

double mean_rounded(const std::vector<double>& w) {
  double s = 0;
  for (double x : w) s += round_half_away(x);
  return s / static_cast<double>(w.size());
}

std::vector<std::uint32_t> clamp_rounded(const std::vector<double>& w, std::uint32_t lo, std::uint32_t hi) {
  std::vector<std::uint32_t> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    g[i] = static_cast<std::uint32_t>(std::clamp(round_half_away(w[i]), double(lo), double(hi)));
  }
  return g;
}

}  // namespace

AllocationGrid allocate(const EntropyMap& entropy, const AllocationParams& params) {
  params.validate();
  STRATA_CHECK(static_cast<int>(entropy.bits.size()) == entropy.grid.patches(), "entropy map has ",
               entropy.bits.size(), " entries for ", entropy.grid.patches(), " patches");
  AllocationGrid out{entropy.grid, {}};
  if (entropy.bits.empty()) return out;
  const double n = params.target;
  std::vector<double> w = normalize_weights(entropy.bits, params.min_tokens, params.max_tokens);
  std::vector<double> best = w;
  for (int t = 0; t < params.iterations; ++t) {
    const double est = mean_rounded(w);
    // Every weight rounded to zero: nothing to rescale from.
    if (est > 0) {
      for (double& x : w) x *= n / est;
    }
    const double est_new = mean_rounded(w);
    if (std::abs(est_new - n) < std::abs(mean_rounded(best) - n)) best = w;
    if (est_new > n) {
      for (double& x : w) x *= params.theta1;
    }
  }
  out.tokens = clamp_rounded(best, params.min_tokens, params.max_tokens);
  while (out.mean() > n) {
    for (double& x : best) x *= params.theta2;
    out.tokens = clamp_rounded(best, params.min_tokens, params.max_tokens);
  }
  return out;
}

nlohmann::json AllocationReport::to_json() const {
  return {{"images", images},
          {"uniform_tokens", uniform_tokens},
          {"uniform_psnr", uniform_psnr},
          {"adaptive_psnr", adaptive_psnr},
          {"delta", delta},
          {"adaptive_mean_tokens", adaptive_mean_tokens}};
}

AllocationReport allocation_rd_report(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes,
                                      const AllocationParams& params, int size) {
  params.validate();
  const std::uint32_t n = tok.config().levels;
  STRATA_CHECK(params.max_tokens <= n, "allocation upper bound ", params.max_tokens,
               " exceeds the tokenizer's ", n, " levels");
  AllocationReport rep;
  rep.uniform_tokens = static_cast<std::uint32_t>(std::floor(params.target));
  const ScaleSpec scale = ScaleSpec::image(size, size);
  const PatchGeometry geom = tok.geometry(scale);
  const auto P = static_cast<std::size_t>(geom.num_patches());
  for (const auto& scene : scenes) {
    const Sample gt = render(scene, scale);
    const LatentGrid z = tok.encode(gt, LevelBudget::uniform(P, n, n));
    const double pu = psnr(tok.decode(z, scale, LevelBudget::uniform(P, rep.uniform_tokens, n)), gt);
    const AllocationGrid g = allocate(patch_entropy(gt, geom), params);
    const double pa = psnr(tok.decode(z, scale, g.budget(n)), gt);
    rep.uniform_psnr += pu;
    rep.adaptive_psnr += pa;
    rep.adaptive_mean_tokens += g.mean();
    rep.per_image_delta.push_back(pa - pu);
  }
  rep.images = scenes.size();
  if (rep.images > 0) {
    const auto k = static_cast<double>(rep.images);
    rep.uniform_psnr /= k;
    rep.adaptive_psnr /= k;
    rep.adaptive_mean_tokens /= k;
  }
  rep.delta = rep.adaptive_psnr - rep.uniform_psnr;
  return rep;
}

}  // namespace strata
