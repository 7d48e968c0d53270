// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/evaluation.hpp"

namespace strata {

nlohmann::json ComplexityReport::to_json() const {
  return {{"low_max", low_max},           {"high_min", high_min},
          {"low_count", low_count},       {"high_count", high_count},
          {"low_psnr", low_psnr},         {"high_psnr", high_psnr},
          {"low_levels_needed", low_levels_needed}, {"low_unreached", low_unreached}};
}

ComplexityReport complexity_report(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes, int size,
                                   int low_max, int high_min) {
  STRATA_CHECK(low_max < high_min, "low stratum (<= ", low_max, ") overlaps high (>= ", high_min, ")");
  const std::uint32_t n = tok.config().levels;
  const ScaleSpec scale = ScaleSpec::image(size, size);
  const auto P = static_cast<std::size_t>(tok.geometry(scale).num_patches());
  ComplexityReport r;
  r.low_max = low_max;
  r.high_min = high_min;
  r.low_psnr.assign(n, 0.0);
  r.high_psnr.assign(n, 0.0);
  std::vector<std::vector<double>> low_curves;
  for (const auto& scene : scenes) {
    const auto c = static_cast<int>(scene.complexity());
    const bool low = c <= low_max;
    if (!low && c < high_min) continue;
    const Sample gt = render(scene, scale);
    const LatentGrid z = tok.encode(gt, LevelBudget::uniform(P, n, n));
    std::vector<double> curve(n);
    for (std::uint32_t m = 1; m <= n; ++m) curve[m - 1] = psnr(tok.decode(z, scale, LevelBudget::uniform(P, m, n)), gt);
    auto& acc = low ? r.low_psnr : r.high_psnr;
    for (std::uint32_t m = 0; m < n; ++m) acc[m] += curve[m];
    if (low) {
      ++r.low_count;
      low_curves.push_back(std::move(curve));
    } else {
      ++r.high_count;
    }
  }
  STRATA_CHECK(r.low_count > 0 && r.high_count > 0, "need scenes in both strata, got ", r.low_count, " low and ",
               r.high_count, " high");
  for (double& v : r.low_psnr) v /= static_cast<double>(r.low_count);
  for (double& v : r.high_psnr) v /= static_cast<double>(r.high_count);
  const double bar = r.high_psnr.back();
  double total = 0;
  for (const auto& curve : low_curves) {
    std::uint32_t need = n + 1;
    for (std::uint32_t m = 1; m <= n; ++m) {
      if (curve[m - 1] >= bar) {
        need = m;
        break;
      }
    }
    if (need > n) ++r.low_unreached;
    total += need;
  }
  r.low_levels_needed = total / static_cast<double>(r.low_count);
  return r;
}

nlohmann::json MultiScaleReport::to_json() const {
  return {{"base", base},
          {"large", large},
          {"scenes", scenes},
          {"direct_psnr", direct_psnr},
          {"downsampled_psnr", downsampled_psnr},
          {"gap", gap}};
}

MultiScaleReport multiscale_report(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes, int base,
                                   int large) {
  const std::uint32_t n = tok.config().levels;
  const ScaleSpec small = ScaleSpec::image(base, base);
  const ScaleSpec big = ScaleSpec::image(large, large);
  const auto P = static_cast<std::size_t>(tok.geometry(small).num_patches());
  MultiScaleReport r;
  r.base = base;
  r.large = large;
  for (const auto& scene : scenes) {
    const Sample gt = render(scene, small);
    const LatentGrid z = tok.encode(gt, LevelBudget::uniform(P, n, n));
    r.direct_psnr += psnr(tok.decode(z, small), gt);
    r.downsampled_psnr += psnr(resize_corner_aligned(tok.decode(z, big), base, base), gt);
  }
  r.scenes = scenes.size();
  if (r.scenes > 0) {
    r.direct_psnr /= static_cast<double>(r.scenes);
    r.downsampled_psnr /= static_cast<double>(r.scenes);
  }
  r.gap = r.direct_psnr - r.downsampled_psnr;
  return r;
}

}  // namespace strata
