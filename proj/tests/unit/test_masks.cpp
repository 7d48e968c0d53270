// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "strata/masks.hpp"
#include "strata/nn.hpp"

using namespace strata;

namespace {

// Brute-force rule enumeration, independent of the builder's loop structure.
std::size_t lca_pairs_oracle(const std::vector<std::uint32_t>& budgets, bool temporal,
                             const std::vector<std::uint32_t>& segments) {
  std::size_t count = 0;
  const std::size_t P = budgets.size();
  for (std::size_t p = 0; p < P; ++p) {
    for (std::uint32_t i = 1; i <= budgets[p]; ++i) {
      for (std::size_t p2 = 0; p2 < P; ++p2) {
        for (std::uint32_t i2 = 1; i2 <= budgets[p2]; ++i2) {
          if (i2 > i) continue;
          if (temporal && segments[p2] > segments[p]) continue;
          ++count;
        }
      }
    }
  }
  return count;
}

std::size_t find_token(const TokenLayout& layout, std::uint32_t patch, std::uint32_t level) {
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].kind == TokenKind::Latent && layout[i].patch == patch && layout[i].level == level) {
      return i;
    }
  }
  return layout.size();
}

}  // namespace

TEST_CASE("PLA mask: pixel rows, latent rows, deactivation") {
  auto layout = patch_layout(0, 0, 4, 4);
  auto m = build_pla_mask(layout, LevelBudget::uniform(1, 4, 4));
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(m.row_count(r) == 4);
    for (std::size_t c = 0; c < 4; ++c) CHECK(m(r, c));
  }
  CHECK(m.row_count(4) == 5);
  for (std::size_t lvl = 1; lvl <= 4; ++lvl) CHECK(m.row_count(3 + lvl) == 4 + lvl);

  auto d = build_pla_mask(layout, LevelBudget::uniform(1, 2, 4));
  for (std::size_t t = 6; t < 8; ++t) {
    CHECK(d.row_count(t) == 0);
    for (std::size_t r = 0; r < 8; ++r) CHECK_FALSE(d(r, t));
  }
  CHECK(d.row_count(5) == 6);
}

TEST_CASE("LPA mask: rule enumeration") {
  auto small = build_lpa_mask(patch_layout(0, 0, 1, 2), LevelBudget::uniform(1, 2, 2));
  CHECK(small.row_count(0) == 3);
  CHECK(small(2, 1));
  CHECK(small(2, 2));
  CHECK_FALSE(small(2, 0));
  CHECK(small.row_count(1) == 1);

  auto layout = patch_layout(0, 0, 3, 4);
  auto m = build_lpa_mask(layout, LevelBudget::uniform(1, 1, 4));
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(m.row_count(r) == 4);
    CHECK(m(r, 3));
    for (std::size_t c = 4; c < 7; ++c) CHECK_FALSE(m(r, c));
  }
}

TEST_CASE("LCA mask: pair count, per-patch budgets, temporal causality") {
  GridDims grid{1, 2, 2};
  auto layout = latent_layout(grid, 4);
  auto full = build_lca_mask(layout, LevelBudget::uniform(4, 4, 4), false);
  CHECK(full.count() == 160);
  CHECK(full.count() == lca_pairs_oracle({4, 4, 4, 4}, false, {0, 0, 0, 0}));

  LevelBudget b{{1, 2, 3, 4}, 4};
  auto m = build_lca_mask(layout, b, false);
  CHECK(m.count() == lca_pairs_oracle(b.levels, false, {0, 0, 0, 0}));
  // Third patch (index 2), level 3 sees second patch (index 1) levels 1, 2.
  const std::size_t q = find_token(layout, 2, 3);
  CHECK(m(q, find_token(layout, 1, 1)));
  CHECK(m(q, find_token(layout, 1, 2)));
  std::size_t seen = 0;
  for (std::size_t c = 0; c < layout.size(); ++c) {
    if (layout[c].patch == 1 && m(q, c)) ++seen;
  }
  CHECK(seen == 2);
  // Inactive rows/columns.
  const std::size_t dead = find_token(layout, 0, 2);
  CHECK(m.row_count(dead) == 0);
  for (std::size_t r = 0; r < layout.size(); ++r) CHECK_FALSE(m(r, dead));

  GridDims vid{2, 1, 2};
  auto vl = latent_layout(vid, 2);
  auto vm = build_lca_mask(vl, LevelBudget::uniform(4, 2, 2), true);
  CHECK(vm.count() == lca_pairs_oracle({2, 2, 2, 2}, true, {0, 0, 1, 1}));
  for (std::size_t r = 0; r < vl.size(); ++r) {
    for (std::size_t c = 0; c < vl.size(); ++c) {
      if (vl[r].segment == 0 && vl[c].segment == 1) CHECK_FALSE(vm(r, c));
    }
  }
}

TEST_CASE("LCA mask: randomized oracle, monotonicity, non-empty active rows") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    GridDims grid{1 + int(rng() % 3), 1 + int(rng() % 3), 1 + int(rng() % 3)};
    const std::uint32_t n = 1 + rng() % 4;
    LevelBudget b;
    b.max_levels = n;
    std::vector<std::uint32_t> segs;
    for (int p = 0; p < grid.patches(); ++p) {
      b.levels.push_back(1 + rng() % n);
      segs.push_back(static_cast<std::uint32_t>(p / (grid.h * grid.w)));
    }
    const bool temporal = rng() % 2;
    auto layout = latent_layout(grid, n);
    auto m = build_lca_mask(layout, b, temporal);
    CHECK(m.count() == lca_pairs_oracle(b.levels, temporal, segs));
    for (std::size_t r = 0; r < layout.size(); ++r) {
      if (b.active(layout[r])) {
        CHECK(m.row_count(r) >= 1);
        CHECK(m(r, r));
      }
    }
    // Raising one patch's budget only adds permissions.
    for (std::size_t p = 0; p < b.levels.size(); ++p) {
      if (b.levels[p] == n) continue;
      LevelBudget b2 = b;
      ++b2.levels[p];
      auto m2 = build_lca_mask(layout, b2, temporal);
      CHECK(m2.count() > m.count());
      for (std::size_t i = 0; i < m.allow.size(); ++i) {
        if (m.allow[i]) CHECK(m2.allow[i]);
      }
    }
  }
}

TEST_CASE("compact: identity, counts, sub-matrix equality") {
  GridDims grid{1, 2, 2};
  auto layout = latent_layout(grid, 4);
  auto id = compact(layout, LevelBudget::uniform(4, 4, 4));
  CHECK(id.layout == layout);
  for (std::size_t i = 0; i < id.index.size(); ++i) CHECK(id.index[i] == i);

  CHECK(compact(layout, LevelBudget::uniform(4, 1, 4)).layout.size() == 4);

  LevelBudget b{{1, 3, 2, 4}, 4};
  auto c = compact(layout, b);
  CHECK(c.layout.size() == 10);
  for (bool temporal : {false, true}) {
    auto full = build_lca_mask(layout, b, temporal);
    auto sub = build_lca_mask(c.layout, b, temporal);
    CHECK(sub == submask(full, c.index, c.index));
  }
  auto pl = patch_layout(0, 0, 4, 4);
  LevelBudget pb{{2}, 4};
  auto pc = compact(pl, pb);
  CHECK(pc.layout.size() == 6);
  CHECK(build_pla_mask(pc.layout, pb) == submask(build_pla_mask(pl, pb), pc.index, pc.index));
  CHECK(build_lpa_mask(pc.layout, pb) == submask(build_lpa_mask(pl, pb), pc.index, pc.index));
}

TEST_CASE("compact: forward on compacted tokens equals masked padded forward") {
  std::mt19937_64 rng(5);
  ParameterStore<double> store;
  std::vector<TransformerBlock<double>> blocks;
  for (int i = 0; i < 2; ++i) blocks.emplace_back(store, "b" + std::to_string(i), BlockShape{16, 2, 32, false}, rng, 1.0);
  GridDims grid{2, 1, 2};
  auto layout = latent_layout(grid, 3);
  LevelBudget b{{1, 3, 2, 3}, 3};
  auto inter = inter_patch_positions(grid);
  auto positions = [&](const TokenLayout& l) {
    PositionTable pos;
    for (const auto& t : l) {
      Coord c = inter[t.patch];
      c.v[3] = t.level;
      pos.push_back(c);
    }
    return pos;
  };
  auto x = testing::random_tensor({layout.size(), 16}, 6);
  auto run = [&](const TokenLayout& l, const Tensor<double>& in) {
    const auto rope = make_rotary_table<double>(positions(l), 8);
    const AttentionBlock attn{0, 0, build_lca_mask(l, b, true)};
    Tape<double> tape(false);
    BlockContext<double> ctx;
    ctx.rope = &rope;
    ctx.attn = std::span<const AttentionBlock>(&attn, 1);
    Var<double> h = tape.constant(in);
    for (const auto& blk : blocks) h = blk.forward(tape, h, ctx);
    return h.value();
  };
  auto padded = run(layout, x);
  auto c = compact(layout, b);
  Tensor<double> xc({c.index.size(), 16});
  for (std::size_t i = 0; i < c.index.size(); ++i) {
    for (std::size_t j = 0; j < 16; ++j) xc.at(i, j) = x.at(c.index[i], j);
  }
  auto compacted = run(c.layout, xc);
  double worst = 0;
  for (std::size_t i = 0; i < c.index.size(); ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      worst = std::max(worst, std::abs(compacted.at(i, j) - padded.at(c.index[i], j)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("level causality: perturbing level j leaves lower levels bitwise unchanged") {
  std::mt19937_64 rng(8);
  ParameterStore<float> store;
  std::vector<TransformerBlock<float>> blocks;
  for (int i = 0; i < 3; ++i) blocks.emplace_back(store, "b" + std::to_string(i), BlockShape{16, 2, 32, false}, rng, 1.0);
  GridDims grid{1, 2, 2};
  const std::uint32_t n = 4;
  auto layout = latent_layout(grid, n);
  auto inter = inter_patch_positions(grid);
  PositionTable pos;
  for (const auto& t : layout) {
    Coord c = inter[t.patch];
    c.v[3] = t.level;
    pos.push_back(c);
  }
  const auto rope = make_rotary_table<float>(pos, 8);
  const AttentionBlock attn{0, 0, build_lca_mask(layout, LevelBudget::uniform(4, n, n), false)};
  auto run = [&](const Tensor<float>& in) {
    Tape<float> tape(false);
    BlockContext<float> ctx;
    ctx.rope = &rope;
    ctx.attn = std::span<const AttentionBlock>(&attn, 1);
    Var<float> h = tape.constant(in);
    for (const auto& blk : blocks) h = blk.forward(tape, h, ctx);
    return h.value();
  };
  auto x = Tensor<float>::randn({layout.size(), 16}, rng);
  auto base = run(x);
  for (std::uint32_t j = 2; j <= n; ++j) {
    auto y = x;
    for (std::size_t r = 0; r < layout.size(); ++r) {
      if (layout[r].level == j) {
        for (std::size_t c = 0; c < 16; ++c) y.at(r, c) += 3.0f;
      }
    }
    auto out = run(y);
    bool lower_same = true, level_changed = false;
    for (std::size_t r = 0; r < layout.size(); ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        if (layout[r].level < j) lower_same = lower_same && out.at(r, c) == base.at(r, c);
        if (layout[r].level == j) level_changed = level_changed || out.at(r, c) != base.at(r, c);
      }
    }
    CHECK(lower_same);
    CHECK(level_changed);
  }
}

TEST_CASE("pbm dump") {
  AttnMask m(2, 3);
  m.set(0, 1);
  m.set(1, 0);
  m.set(1, 2);
  CHECK(to_pbm(m) == "P1\n3 2\n0 1 0\n1 0 1\n");
}

TEST_CASE("budget validation") {
  CHECK_THROWS_AS(LevelBudget::uniform(2, 0, 4), Error);
  CHECK_THROWS_AS(LevelBudget::uniform(2, 5, 4), Error);
  LevelBudget b{{1, 2, 4}, 4};
  CHECK(b.max_active() == 4);
  CHECK(b.mean() == doctest::Approx(7.0 / 3.0));
}
