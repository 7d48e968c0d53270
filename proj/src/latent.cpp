// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/latent.hpp"

#include <algorithm>

namespace strata {

Sample Sample::frame(int index) const {
  STRATA_CHECK(index >= 0 && index < scale.frames, "frame ", index, " out of range [0, ",
               scale.frames, ")");
  Sample out(ScaleSpec::image(scale.height, scale.width));
  const std::size_t n = static_cast<std::size_t>(scale.height) * scale.width * 3;
  std::copy_n(pixels.data() + static_cast<std::size_t>(index) * n, n, out.pixels.data());
  return out;
}

LatentGrid::LatentGrid(const GridDims& g, std::uint32_t n, std::size_t d, LevelBudget b)
    : values({static_cast<std::size_t>(g.t), static_cast<std::size_t>(g.h),
              static_cast<std::size_t>(g.w), n, d}),
      grid(g),
      budget(std::move(b)),
      levels(n),
      dim(d) {
  STRATA_CHECK(budget.patches() == static_cast<std::size_t>(g.patches()), "budget covers ",
               budget.patches(), " patches but the grid has ", g.patches());
  STRATA_CHECK(budget.max_levels == n, "budget max_levels ", budget.max_levels,
               " does not match n=", n);
}

Tensor<float> LatentGrid::rows(const TokenLayout& layout) const {
  Tensor<float> out({layout.size(), dim});
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto src = token(layout[i].patch, layout[i].level);
    std::copy(src.begin(), src.end(), out.data() + i * dim);
  }
  return out;
}

void LatentGrid::set_rows(const TokenLayout& layout, const Tensor<float>& rows) {
  STRATA_CHECK_SHAPE(rows.rows() == layout.size() && rows.cols() == dim, "set_rows: got ",
                     to_string(rows.shape()), " for ", layout.size(), " tokens of width ", dim);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    auto dst = token(layout[i].patch, layout[i].level);
    std::copy_n(rows.data() + i * dim, dim, dst.begin());
  }
}

void LatentGrid::apply_budget() {
  for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(grid.patches()); ++p) {
    for (std::uint32_t l = budget.levels[p] + 1; l <= levels; ++l) {
      auto t = token(p, l);
      std::fill(t.begin(), t.end(), 0.0f);
    }
  }
}

}  // namespace strata
