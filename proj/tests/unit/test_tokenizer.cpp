// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "strata/data.hpp"
#include "strata/tokenizer.hpp"

using namespace strata;

namespace {

TokenizerConfig small_config() {
  TokenizerConfig c;
  c.k = 2;
  c.levels = 4;
  c.latent_dim = 8;
  c.patch_width = 16;
  c.patch_heads = 2;
  c.ae_width = 32;
  c.ae_heads = 2;
  c.ae_layers = 2;
  return c;
}

float max_abs(const Tensor<float>& a, const Tensor<float>& b) {
  return static_cast<float>(max_abs_diff(a, b));
}

}  // namespace

TEST_CASE("encode: latent shape law") {
  TokenizerConfig c = small_config();
  c.k = 16;
  c.latent_dim = 16;
  Tokenizer<float> tok(c, 1);
  Sample img = render(make_scene(1, 0, 3, false), ScaleSpec::image(256, 256), {1, 0.04});
  auto z = tok.encode(img, LevelBudget::uniform(256, 4, 4));
  CHECK(z.values.shape() == Shape{1, 16, 16, 4, 16});

  TokenizerConfig v = small_config();
  v.k_t = 6;
  Tokenizer<float> vtok(v, 2);
  Sample clip = render(make_scene(2, 1, 2, true), {8, 8, 24, 24}, {1, 0.04});
  auto g = vtok.geometry(clip.scale);
  CHECK(g.p_t == 4);
  auto zv = vtok.encode(clip, LevelBudget::uniform(static_cast<std::size_t>(g.num_patches()), 2, 4));
  CHECK(zv.values.shape() == Shape{6, 2, 2, 4, 8});

  // Sweep of valid scales.
  Tokenizer<float> t2(small_config(), 3);
  for (auto s : {ScaleSpec::image(8, 8), ScaleSpec::image(8, 16), ScaleSpec{4, 8, 2, 4}}) {
    auto geom = t2.geometry(s);
    auto lat = t2.encode(Sample(s), LevelBudget::uniform(static_cast<std::size_t>(geom.num_patches()), 4, 4));
    CHECK(lat.values.shape() == Shape{static_cast<std::size_t>(s.frames / geom.p_t),
                                      static_cast<std::size_t>(s.height / geom.p_hw),
                                      static_cast<std::size_t>(s.width / geom.p_hw), 4, 8});
  }
}

TEST_CASE("encode: budget deactivation zeroes upper levels") {
  Tokenizer<float> tok(small_config(), 4);
  Sample img = render(make_scene(3, 2, 4, false), ScaleSpec::image(16, 16));
  for (DropMode mode : {DropMode::Padded, DropMode::Compacted}) {
    auto z = tok.encode(img, LevelBudget::uniform(4, 1, 4), mode);
    for (std::uint32_t p = 0; p < 4; ++p) {
      for (std::uint32_t l = 2; l <= 4; ++l) {
        for (float v : z.token(p, l)) CHECK(v == 0.0f);
      }
      bool nonzero = false;
      for (float v : z.token(p, 1)) nonzero = nonzero || v != 0.0f;
      CHECK(nonzero);
    }
  }
  CHECK_THROWS_AS(tok.encode(img, LevelBudget::uniform(4, 1, 3)), Error);
}

TEST_CASE("decode: output scale follows the target") {
  Tokenizer<float> tok(small_config(), 5);
  Sample img = render(make_scene(4, 0, 4, false), ScaleSpec::image(32, 32));
  auto z = tok.encode(img, LevelBudget::uniform(4, 4, 4));
  CHECK(tok.decode(z, ScaleSpec::image(32, 32)).scale == ScaleSpec::image(32, 32));
  CHECK(tok.decode(z, ScaleSpec::image(64, 64)).pixels.shape() == Shape{1, 64, 64, 3});
  CHECK(tok.decode(z, ScaleSpec::image(6, 6)).pixels.shape() == Shape{1, 6, 6, 3});
  CHECK_THROWS_AS(tok.decode(z, ScaleSpec::image(32, 64)), GeometryError);
  CHECK_THROWS_AS(tok.decode(z, ScaleSpec::image(31, 31)), GeometryError);
}

TEST_CASE("scale alignment: grids match across scales") {
  Tokenizer<float> tok(small_config(), 6);
  auto scene = make_scene(5, 1, 3, false);
  auto a = tok.encode(render(scene, ScaleSpec::image(16, 32)), LevelBudget::uniform(8, 4, 4));
  auto b = tok.encode(render(scene, ScaleSpec::image(32, 64)), LevelBudget::uniform(8, 4, 4));
  CHECK(a.values.shape() == b.values.shape());
  CHECK(a.grid == b.grid);
}

TEST_CASE("level causality: decode ignores levels above its budget") {
  Tokenizer<float> tok(small_config(), 7);
  Sample img = render(make_scene(6, 3, 5, false), ScaleSpec::image(16, 16));
  auto z = tok.encode(img, LevelBudget::uniform(4, 4, 4));
  std::mt19937_64 rng(1);
  for (std::uint32_t m = 1; m <= 3; ++m) {
    const auto budget = LevelBudget::uniform(4, m, 4);
    for (DropMode mode : {DropMode::Padded, DropMode::Compacted}) {
      auto base = tok.decode(z, ScaleSpec::image(16, 16), budget, mode);
      auto noisy = z;
      for (std::uint32_t p = 0; p < 4; ++p) {
        for (std::uint32_t l = m + 1; l <= 4; ++l) {
          for (float& v : noisy.token(p, l)) v = static_cast<float>(std::normal_distribution<>(0, 5)(rng));
        }
      }
      CHECK(tok.decode(noisy, ScaleSpec::image(16, 16), budget, mode).pixels == base.pixels);
    }
  }
}

TEST_CASE("level causality: encoder and decoder stacks") {
  Tokenizer<float> tok(small_config(), 8);
  Sample img = render(make_scene(7, 1, 6, false), ScaleSpec::image(16, 16));
  const auto geom = tok.geometry(img.scale);
  const auto budget = LevelBudget::uniform(4, 4, 4);
  const auto layout = budget_layout(geom.grid, budget, DropMode::Padded);
  auto encode_rows = [&] {
    Tape<float> tape(false);
    return tok.encode_tokens(tape, img, layout, budget).value();
  };
  const auto base = encode_rows();
  auto& queries = tok.params().at("patchify.queries");
  for (std::uint32_t j = 2; j <= 4; ++j) {
    const auto saved = queries.value;
    for (std::size_t c = 0; c < queries.value.cols(); ++c) queries.value.at(j - 1, c) += 1.5f;
    const auto out = encode_rows();
    queries.value = saved;
    bool lower_same = true, changed = false;
    for (std::size_t r = 0; r < layout.size(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) {
        if (layout[r].level < j) lower_same = lower_same && out.at(r, c) == base.at(r, c);
        if (layout[r].level == j) changed = changed || out.at(r, c) != base.at(r, c);
      }
    }
    CHECK(lower_same);
    CHECK(changed);
  }

  std::mt19937_64 rng(2);
  auto z = Tensor<float>::randn({layout.size(), 8}, rng);
  auto decode_rows = [&](const Tensor<float>& in) {
    Tape<float> tape(false);
    return tok.decode_stack(tape, tape.constant(in), layout, budget, geom.grid).value();
  };
  const auto dbase = decode_rows(z);
  for (std::uint32_t j = 2; j <= 4; ++j) {
    auto y = z;
    for (std::size_t r = 0; r < layout.size(); ++r) {
      if (layout[r].level == j) y.at(r, 0) += 2.0f;
    }
    const auto out = decode_rows(y);
    bool lower_same = true;
    for (std::size_t r = 0; r < layout.size(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) {
        if (layout[r].level < j) lower_same = lower_same && out.at(r, c) == dbase.at(r, c);
      }
    }
    CHECK(lower_same);
  }
}

TEST_CASE("drop equivalence: padded and compacted agree") {
  Tokenizer<float> tok(small_config(), 9);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Sample img = render(make_scene(rng(), trial % 4, 1 + trial, false), ScaleSpec::image(16, 16));
    LevelBudget b;
    b.max_levels = 4;
    for (int p = 0; p < 4; ++p) b.levels.push_back(1 + rng() % 4);
    auto zp = tok.encode(img, b, DropMode::Padded);
    auto zc = tok.encode(img, b, DropMode::Compacted);
    CHECK(max_abs(zp.values, zc.values) <= 1e-6f);
    auto dp = tok.decode(zp, ScaleSpec::image(16, 16), DropMode::Padded);
    auto dc = tok.decode(zp, ScaleSpec::image(16, 16), DropMode::Compacted);
    CHECK(max_abs(dp.pixels, dc.pixels) <= 1e-6f);
  }
}

TEST_CASE("decoder cache: progressive levels match full recomputation") {
  TokenizerConfig c = small_config();
  Tokenizer<float> tok(c, 10);
  GridDims grid{1, 2, 3};
  std::mt19937_64 rng(4);
  LatentGrid z(grid, 4, 8, LevelBudget::uniform(6, 4, 4));
  z.values = Tensor<float>::randn(z.values.shape(), rng);
  DecoderState<float> state(tok, grid);
  for (std::uint32_t l = 1; l <= 4; ++l) {
    state.add_level(z.rows(level_layout(grid, l)));
    const auto layout = latent_layout(grid, l);
    const auto budget = LevelBudget::uniform(6, l, 4);
    Tape<float> tape(false);
    const auto full = tok.decode_stack(tape, tape.constant(z.rows(layout)), layout, budget, grid);
    CHECK(max_abs_diff(state.stack_output(), full.value()) <= 1e-5);
    auto direct = tok.decode(z, ScaleSpec::image(8, 12), budget);
    CHECK(max_abs(state.render(ScaleSpec::image(8, 12)).pixels, direct.pixels) <= 1e-5f);
  }
  CHECK_THROWS_AS(state.add_level(z.rows(level_layout(grid, 1))), Error);
}

TEST_CASE("determinism and smoke") {
  Tokenizer<float> a(small_config(), 11), b(small_config(), 11);
  Sample img = render(make_scene(9, 0, 3, false), ScaleSpec::image(16, 16));
  auto za = a.encode(img, LevelBudget::uniform(4, 3, 4));
  auto zb = b.encode(img, LevelBudget::uniform(4, 3, 4));
  CHECK(za.values == zb.values);
  CHECK(a.decode(za, ScaleSpec::image(16, 16)).pixels == b.decode(zb, ScaleSpec::image(16, 16)).pixels);

  Sample zeros(ScaleSpec::image(16, 16));
  auto rec = a.decode(a.encode(zeros, LevelBudget::uniform(4, 4, 4)), zeros.scale);
  CHECK(all_finite(rec.pixels));
  const double p = psnr(rec, zeros);
  CHECK(std::isfinite(p));
  CHECK(p < 99.0);
}
