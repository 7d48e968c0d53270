// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/masks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace strata {

LevelBudget LevelBudget::uniform(std::size_t patches, std::uint32_t m, std::uint32_t n) {
  LevelBudget b;
  b.levels.assign(patches, m);
  b.max_levels = n;
  b.validate();
  return b;
}

std::uint32_t LevelBudget::max_active() const {
  return levels.empty() ? 0 : *std::max_element(levels.begin(), levels.end());
}

double LevelBudget::mean() const {
  if (levels.empty()) return 0.0;
  return std::accumulate(levels.begin(), levels.end(), 0.0) / static_cast<double>(levels.size());
}

void LevelBudget::validate() const {
  STRATA_CHECK(max_levels >= 1, "level budget needs max_levels >= 1");
  for (std::size_t p = 0; p < levels.size(); ++p) {
    STRATA_CHECK(levels[p] >= 1 && levels[p] <= max_levels, "level budget of patch ", p, " is ",
                 levels[p], ", outside [1, ", max_levels, "]");
  }
}

TokenLayout patch_layout(std::uint32_t patch, std::uint32_t segment, std::uint32_t pixels,
                         std::uint32_t levels) {
  TokenLayout out;
  out.reserve(pixels + levels);
  for (std::uint32_t i = 0; i < pixels; ++i) {
    out.push_back({TokenKind::Pixel, patch, 0, segment, i});
  }
  for (std::uint32_t l = 1; l <= levels; ++l) {
    out.push_back({TokenKind::Latent, patch, l, segment, 0});
  }
  return out;
}

TokenLayout level_layout(const GridDims& grid, std::uint32_t level) {
  TokenLayout out;
  const auto per_segment = static_cast<std::uint32_t>(grid.h * grid.w);
  out.reserve(static_cast<std::size_t>(grid.patches()));
  for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(grid.patches()); ++p) {
    out.push_back({TokenKind::Latent, p, level, p / per_segment, 0});
  }
  return out;
}

TokenLayout latent_layout(const GridDims& grid, std::uint32_t levels) {
  TokenLayout out;
  out.reserve(static_cast<std::size_t>(grid.patches()) * levels);
  for (std::uint32_t l = 1; l <= levels; ++l) {
    TokenLayout lvl = level_layout(grid, l);
    out.insert(out.end(), lvl.begin(), lvl.end());
  }
  return out;
}

AttnMask build_pla_mask(const TokenLayout& layout, const LevelBudget& budget) {
  const std::size_t n = layout.size();
  AttnMask mask(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const TokenDesc& q = layout[r];
    if (!budget.active(q)) continue;
    for (std::size_t c = 0; c < n; ++c) {
      const TokenDesc& k = layout[c];
      if (!budget.active(k)) continue;
      bool allow;
      if (q.kind == TokenKind::Pixel) {
        allow = k.kind == TokenKind::Pixel;
      } else {
        allow = k.kind == TokenKind::Pixel || k.level <= q.level;
      }
      if (allow) mask.set(r, c);
    }
  }
  return mask;
}

AttnMask build_lpa_mask(const TokenLayout& layout, const LevelBudget& budget) {
  const std::size_t n = layout.size();
  AttnMask mask(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const TokenDesc& q = layout[r];
    if (!budget.active(q)) continue;
    for (std::size_t c = 0; c < n; ++c) {
      const TokenDesc& k = layout[c];
      if (!budget.active(k)) continue;
      bool allow;
      if (q.kind == TokenKind::Pixel) {
        allow = true;
      } else {
        allow = k.kind == TokenKind::Latent && k.level <= q.level;
      }
      if (allow) mask.set(r, c);
    }
  }
  return mask;
}

AttnMask build_lca_mask(const TokenLayout& queries, const TokenLayout& keys,
                        const LevelBudget& budget, bool temporal_causal) {
  AttnMask mask(queries.size(), keys.size());
  for (std::size_t r = 0; r < queries.size(); ++r) {
    const TokenDesc& q = queries[r];
    if (!budget.active(q)) continue;
    std::uint8_t* row = mask.allow.data() + r * keys.size();
    for (std::size_t c = 0; c < keys.size(); ++c) {
      const TokenDesc& k = keys[c];
      if (k.level > q.level || !budget.active(k)) continue;
      if (temporal_causal && k.segment > q.segment) continue;
      row[c] = 1;
    }
  }
  return mask;
}

AttnMask build_lca_mask(const TokenLayout& layout, const LevelBudget& budget,
                        bool temporal_causal) {
  return build_lca_mask(layout, layout, budget, temporal_causal);
}

Compaction compact(const TokenLayout& layout, const LevelBudget& budget) {
  Compaction out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (budget.active(layout[i])) {
      out.layout.push_back(layout[i]);
      out.index.push_back(i);
    }
  }
  return out;
}

AttnMask submask(const AttnMask& mask, const std::vector<std::size_t>& rows,
                 const std::vector<std::size_t>& cols) {
  AttnMask out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) out.set(r, c, mask(rows[r], cols[c]));
  }
  return out;
}

std::string to_pbm(const AttnMask& mask) {
  std::ostringstream os;
  os << "P1\n" << mask.cols << " " << mask.rows << "\n";
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      os << (mask(r, c) ? '1' : '0') << (c + 1 == mask.cols ? '\n' : ' ');
    }
  }
  return os.str();
}

void write_pbm(const AttnMask& mask, const std::string& path) {
  std::ofstream f(path);
  STRATA_CHECK(f.good(), "cannot open ", path, " for writing");
  f << to_pbm(mask);
}

}  // namespace strata
