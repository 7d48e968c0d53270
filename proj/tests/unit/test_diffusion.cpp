// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "strata/diffusion.hpp"

using namespace strata;
namespace fs = std::filesystem;

namespace {

DiTConfig tiny_dit(bool cross = false) {
  DiTConfig c;
  c.width = 16;
  c.heads = 2;
  c.layers = 2;
  c.levels = 4;
  c.latent_dim = 4;
  c.num_classes = 3;
  c.cross_attention = cross;
  c.steps = 6;
  return c;
}

/// The zero-initialized output head makes a fresh model predict zero
/// everywhere; tests that look at outputs need generic weights.
template <typename T>
void randomize(DiT<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* p : model.params().all()) {
    const double s = p->value.rank() == 2 ? 0.6 / std::sqrt(static_cast<double>(p->value.shape()[0])) : 0.1;
    Tensor<T> noise = init_normal<T>(p->value.shape(), rng, s);
    for (std::size_t i = 0; i < noise.size(); ++i) p->value[i] += noise[i];
  }
}

LatentGrid random_grid(const DiTConfig& cfg, const GridDims& g, std::uint32_t m, std::uint64_t seed) {
  LatentGrid z(g, cfg.levels, cfg.latent_dim,
               LevelBudget::uniform(static_cast<std::size_t>(g.patches()), m, cfg.levels));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n01;
  for (auto& v : z.values.storage()) v = n01(rng);
  z.apply_budget();
  return z;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

}  // namespace

TEST_CASE("dit config validation and json") {
  DiTConfig c = tiny_dit(true);
  CHECK(dit_config_from_json(to_json(c)).width == c.width);
  CHECK(dit_config_from_json(to_json(c)).cross_attention);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_dit();
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_dit();
  c.cfg_interval = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("velocity contract: shape, deactivation and level causality") {
  for (bool cross : {false, true}) {
    const DiTConfig cfg = tiny_dit(cross);
    DiT<float> model(cfg, 3);
    randomize(model, 4);
    const GridDims g{2, 2, 3};
    const std::vector<double> t{0.9, 0.5, 0.3, 0.7};

    const LatentGrid z = random_grid(cfg, g, 4, 5);
    const LatentGrid v = velocity(model, z, t, 1, z.budget);
    CHECK(v.values.shape() == z.values.shape());

    const auto P = static_cast<std::size_t>(g.patches());
    const LevelBudget one = LevelBudget::uniform(P, 1, cfg.levels);
    const LatentGrid v1 = velocity(model, z, t, 1, one);
    double above = 0, below = 0;
    for (std::uint32_t p = 0; p < P; ++p) {
      for (std::uint32_t l = 1; l <= cfg.levels; ++l) {
        for (float x : v1.token(p, l)) (l == 1 ? below : above) += std::abs(x);
      }
    }
    CHECK(above == 0.0);
    CHECK(below > 0.0);

    // Perturbing level j leaves every level below j bitwise unchanged.
    for (std::uint32_t j = 2; j <= cfg.levels; ++j) {
      LatentGrid zp = z;
      for (std::uint32_t p = 0; p < P; ++p) {
        for (float& x : zp.token(p, j)) x += 0.75f;
      }
      const LatentGrid vp = velocity(model, zp, t, 1, z.budget);
      for (std::uint32_t p = 0; p < P; ++p) {
        for (std::uint32_t l = 1; l < j; ++l) CHECK(bitwise_equal(v.token(p, l), vp.token(p, l)));
      }
      double moved = 0;
      for (std::uint32_t p = 0; p < P; ++p) {
        for (std::size_t i = 0; i < cfg.latent_dim; ++i) moved += std::abs(v.token(p, j)[i] - vp.token(p, j)[i]);
      }
      CHECK(moved > 0.0);
    }
  }
}

TEST_CASE("velocity rejects mismatched grids") {
  const DiTConfig cfg = tiny_dit();
  DiT<float> model(cfg, 1);
  LatentGrid z({1, 2, 2}, cfg.levels, cfg.latent_dim + 1, LevelBudget::uniform(4, 4, cfg.levels));
  const std::vector<double> t(cfg.levels, 0.5);
  CHECK_THROWS_AS(velocity(model, z, t, 0, z.budget), ShapeError);
  const LatentGrid ok = random_grid(cfg, {1, 2, 2}, 4, 1);
  CHECK_THROWS_AS(velocity(model, ok, std::vector<double>(3, 0.5), 0, ok.budget), ShapeError);
  CHECK_THROWS_AS(velocity(model, ok, std::vector<double>{0.5, 0.5, 1.5, 0.5}, 0, ok.budget), Error);
  CHECK_THROWS_AS(velocity(model, ok, t, 7, ok.budget), Error);
}

TEST_CASE("dit gradients match finite differences") {
  DiTConfig cfg = tiny_dit(true);
  cfg.layers = 1;
  cfg.levels = 3;
  DiT<double> model(cfg, 2);
  randomize(model, 8);
  const GridDims g{2, 1, 2};
  const LevelBudget budget{{3, 2, 3, 1}, 3};
  const TokenLayout layout = latent_layout(g, 3);
  std::vector<double> t(layout.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.2 + 0.1 * layout[i].level;

  const double err = testing::grad_check({testing::random_tensor({layout.size(), cfg.latent_dim}, 3)},
                                         [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
                                           return testing::project(model.forward(tape, in[0], t, 1, layout,
                                                                                 budget, g));
                                         });
  MESSAGE("dit input grad rel err " << err);
  CHECK(err < 1e-6);

  // Parameter gradients through the modulation path.
  model.params().zero_grad();
  Tape<double> tape;
  Var<double> x = tape.constant(testing::random_tensor({layout.size(), cfg.latent_dim}, 3));
  tape.backward(testing::project(model.forward(tape, x, t, 1, layout, budget, g)));
  Parameter<double>& ada = model.params().at("block0.ada.w");
  const double h = 1e-6;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t j = rng() % ada.value.size();
    const double saved = ada.value[j];
    auto loss = [&] {
      Tape<double> tp(false);
      return testing::project(model.forward(tp, tp.constant(testing::random_tensor({layout.size(), cfg.latent_dim}, 3)),
                                            t, 1, layout, budget, g))
          .value()[0];
    };
    ada.value[j] = saved + h;
    const double lp = loss();
    ada.value[j] = saved - h;
    const double lm = loss();
    ada.value[j] = saved;
    const double fd = (lp - lm) / (2 * h);
    CHECK(ada.grad[j] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("rectified-flow training pairs") {
  const DiTConfig cfg = tiny_dit();
  const LatentGrid z = random_grid(cfg, {1, 2, 2}, 3, 9);
  std::mt19937_64 rng(10);
  for (bool shared : {false, true}) {
    const RFPair pair = rf_training_pair(z, rng, shared);
    REQUIRE(pair.t_per_level.size() == cfg.levels);
    if (shared) {
      for (double t : pair.t_per_level) CHECK(t == pair.t_per_level[0]);
    }
    for (std::uint32_t p = 0; p < 4; ++p) {
      for (std::uint32_t l = 1; l <= cfg.levels; ++l) {
        const float t = static_cast<float>(pair.t_per_level[l - 1]);
        for (std::size_t i = 0; i < cfg.latent_dim; ++i) {
          const float zi = z.token(p, l)[i];
          const float eps = pair.target.token(p, l)[i] + zi;
          if (l > 3) {
            CHECK(pair.noisy.token(p, l)[i] == 0.0f);
            CHECK(pair.target.token(p, l)[i] == 0.0f);
          } else {
            CHECK(pair.noisy.token(p, l)[i] == doctest::Approx((1 - t) * zi + t * eps).epsilon(1e-5));
          }
        }
      }
    }
  }
}

TEST_CASE("logit-normal timesteps pass Kolmogorov-Smirnov") {
  constexpr int kDraws = 100000;
  std::mt19937_64 rng(123);
  std::vector<double> t(kDraws);
  for (double& x : t) x = sample_logit_normal(rng);
  std::sort(t.begin(), t.end());
  double d = 0;
  for (int i = 0; i < kDraws; ++i) {
    const double logit = std::log(t[i] / (1 - t[i]));
    const double cdf = 0.5 * std::erfc(-logit / std::sqrt(2.0));
    d = std::max({d, std::abs(cdf - double(i) / kDraws), std::abs(cdf - double(i + 1) / kDraws)});
  }
  const double critical = 1.628 / std::sqrt(double(kDraws));  // alpha = 0.01
  MESSAGE("KS statistic " << d << " critical " << critical);
  CHECK(d < critical);
}

TEST_CASE("time grid") {
  const auto ts = time_grid(4, 1.0);
  CHECK(ts == std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0});
  const auto warped = time_grid(4, 3.0);
  CHECK(warped.front() == 1.0);
  CHECK(warped.back() == 0.0);
  CHECK(warped[2] == doctest::Approx(0.75));
  for (std::size_t i = 1; i < warped.size(); ++i) CHECK(warped[i] < warped[i - 1]);
  CHECK_THROWS_AS(time_grid(0, 1.0), Error);
}

TEST_CASE("euler sampler against closed-form fields") {
  std::mt19937_64 rng(5);
  const Tensor<double> z0 = Tensor<double>::randn({16, 4}, rng, 1.0);
  const Tensor<double> x1 = Tensor<double>::randn({16, 4}, rng, 1.0);
  auto rel_err = [&](const Tensor<double>& x, const Tensor<double>& ref) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      num += (x[i] - ref[i]) * (x[i] - ref[i]);
      den += ref[i] * ref[i];
    }
    return std::sqrt(num / den);
  };

  // Single datum: v(x, t) = (x - z0) / t.
  const std::function<Tensor<double>(const Tensor<double>&, double)> single =
      [&](const Tensor<double>& x, double t) {
        Tensor<double> v(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) v[i] = (x[i] - z0[i]) / t;
        return v;
      };
  const double e50 = rel_err(euler_integrate<double>(x1, time_grid(50, 1.0), single), z0);
  MESSAGE("single-datum error at 50 steps " << e50);
  CHECK(e50 < 0.01);

  // Gaussian data N(mu, s^2): the exact field is affine in x and the Euler
  // error is first order, so doubling the steps roughly halves it.
  const double s = 0.5;
  const std::function<Tensor<double>(const Tensor<double>&, double)> gauss =
      [&](const Tensor<double>& x, double t) {
        const double var = (1 - t) * (1 - t) * s * s + t * t;
        const double dvar = -2 * (1 - t) * s * s + 2 * t;
        Tensor<double> v(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double mean_t = (1 - t) * z0[i];
          v[i] = -z0[i] + dvar / (2 * var) * (x[i] - mean_t);
        }
        return v;
      };
  // Exact flow map: x_0 = mu + s (x_1 - 0) / 1.
  Tensor<double> exact(z0.shape());
  for (std::size_t i = 0; i < exact.size(); ++i) exact[i] = z0[i] + s * x1[i];
  double prev = 1e9;
  for (int steps : {25, 50, 100, 200}) {
    const double e = rel_err(euler_integrate<double>(x1, time_grid(steps, 1.0), gauss), exact);
    MESSAGE("gaussian-datum error at " << steps << " steps " << e);
    CHECK(e < prev);
    if (prev < 1e9) CHECK(e / prev == doctest::Approx(0.5).epsilon(0.15));
    prev = e;
  }
}

TEST_CASE("classifier-free guidance combination") {
  Tensor<float> vc({2, 2}, {1.0f, -2.0f, 0.3f, 0.7f});
  Tensor<float> vu({2, 2}, {0.5f, 0.25f, -0.1f, 0.9f});
  CHECK(bitwise_equal(guide(vc, &vu, 1.0).span(), vc.span()));
  CHECK(bitwise_equal(guide(vc, &vu, 0.0).span(), vu.span()));
  CHECK(bitwise_equal(guide(vc, nullptr, 6.0).span(), vc.span()));
  const Tensor<float> g = guide(vc, &vu, 3.0);
  CHECK(g[0] == doctest::Approx(0.5 + 3 * 0.5));

  SamplerOptions opt;
  opt.cfg_scale = 6;
  opt.cfg_interval = 0.1;
  CHECK(guidance_active(opt, 0, 3, 0.5));
  CHECK(guidance_active(opt, 0, 3, 0.1));
  CHECK_FALSE(guidance_active(opt, 0, 3, 0.05));
  CHECK_FALSE(guidance_active(opt, 3, 3, 0.5));
  opt.cfg_scale = 1;
  CHECK_FALSE(guidance_active(opt, 0, 3, 0.5));
}

TEST_CASE("sampling is deterministic and cfg 1 is the conditional path") {
  const DiTConfig cfg = tiny_dit();
  DiT<float> model(cfg, 1);
  randomize(model, 2);
  const GridDims g{1, 2, 2};
  SamplerOptions opt = SamplerOptions::defaults(cfg);
  const LatentGrid a = sample(model, 1, 3, g, opt, 42);
  const LatentGrid b = sample(model, 1, 3, g, opt, 42);
  CHECK(bitwise_equal(a.values.span(), b.values.span()));
  const LatentGrid c = sample(model, 1, 3, g, opt, 43);
  CHECK_FALSE(bitwise_equal(a.values.span(), c.values.span()));

  // cfg_scale 1: manual Euler over the conditional velocity only.
  opt.cfg_scale = 1.0;
  const LatentGrid s1 = sample(model, 2, 2, g, opt, 7);
  const auto P = static_cast<std::size_t>(g.patches());
  const LevelBudget budget = LevelBudget::uniform(P, 2, cfg.levels);
  const TokenLayout layout = latent_layout(g, 2);
  LatentGrid x(g, cfg.levels, cfg.latent_dim, budget);
  x.set_rows(level_layout(g, 1), level_noise(7, 1, P, cfg.latent_dim));
  x.set_rows(level_layout(g, 2), level_noise(7, 2, P, cfg.latent_dim));
  const auto ts = time_grid(opt.steps, opt.shift);
  Tensor<float> rows = x.rows(layout);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    Tape<float> tape(false);
    const std::vector<double> trow(layout.size(), ts[i]);
    const Tensor<float> v = model.forward(tape, tape.constant(rows), trow, 2, layout, budget, g).value();
    const auto dt = static_cast<float>(ts[i] - ts[i + 1]);
    for (std::size_t j = 0; j < rows.size(); ++j) rows[j] -= dt * v[j];
  }
  CHECK(bitwise_equal(s1.rows(layout).span(), rows.span()));

  // Lower levels do not depend on how many levels are sampled jointly.
  opt = SamplerOptions::defaults(cfg);
  const LatentGrid m1 = sample(model, 1, 1, g, opt, 42);
  const TokenLayout l1 = level_layout(g, 1);
  CHECK(bitwise_equal(m1.rows(l1).span(), a.rows(l1).span()));
}

TEST_CASE("refine: cached and recomputed paths agree at every step") {
  for (bool cross : {false, true}) {
    const DiTConfig cfg = tiny_dit(cross);
    DiT<float> model(cfg, 11);
    randomize(model, 12);
    const GridDims g{2, 2, 2};
    SamplerOptions opt = SamplerOptions::defaults(cfg);
    opt.cfg_interval = 0.4;  // some guided and some unguided steps
    GenSession cached = make_session(model, "a", 2, 99, g, opt);
    GenSession recomputed = cached;
    for (std::uint32_t l = 1; l <= cfg.levels; ++l) {
      std::vector<Tensor<float>> va, vb;
      refine(model, cached, {true, nullptr, [&](int, const Tensor<float>& v) { va.push_back(v); }});
      refine(model, recomputed, {false, nullptr, [&](int, const Tensor<float>& v) { vb.push_back(v); }});
      REQUIRE(va.size() == static_cast<std::size_t>(opt.steps));
      REQUIRE(vb.size() == va.size());
      double worst = 0;
      for (std::size_t s = 0; s < va.size(); ++s) worst = std::max(worst, max_abs_diff(va[s], vb[s]));
      MESSAGE("level " << l << " max per-step velocity difference " << worst);
      CHECK(worst <= 1e-5);
      CHECK(max_abs_diff(cached.latents.back(), recomputed.latents.back()) <= 1e-5);
      CHECK(cached.levels_done == l);
      CHECK(cached.cache.levels == l);
    }
    CHECK_THROWS_AS(refine(model, cached), Error);
  }
}

TEST_CASE("progressive refinement costs the same attention pairs as one joint pass") {
  const DiTConfig cfg = tiny_dit();
  DiT<float> model(cfg, 1);
  const GridDims g{2, 2, 3};
  SamplerOptions opt = SamplerOptions::defaults(cfg);
  std::uint64_t prev = 0;
  for (std::uint32_t m = 1; m <= cfg.levels; ++m) {
    AttentionCounter joint, progressive;
    sample(model, 0, m, g, opt, 5, &joint);
    GenSession s = make_session(model, "p", 0, 5, g, opt);
    for (std::uint32_t l = 1; l <= m; ++l) refine(model, s, {true, &progressive, {}});
    MESSAGE("m=" << m << " joint " << joint.pairs << " progressive " << progressive.pairs);
    CHECK(joint.pairs == progressive.pairs);
    CHECK(joint.pairs > prev);
    prev = joint.pairs;
  }
}

TEST_CASE("refine leaves finalized levels untouched") {
  const DiTConfig cfg = tiny_dit();
  DiT<float> model(cfg, 1);
  randomize(model, 3);
  GenSession s = make_session(model, "s", 0, 17, {1, 2, 2}, SamplerOptions::defaults(cfg));
  refine(model, s);
  const Tensor<float> first = s.latents[0];
  refine(model, s);
  refine(model, s);
  CHECK(bitwise_equal(first.span(), s.latents[0].span()));
  const LatentGrid grid = s.latent_grid(cfg.levels, cfg.latent_dim);
  CHECK(grid.budget.max_active() == 3);
  CHECK(bitwise_equal(grid.rows(level_layout(s.grid, 1)).span(), first.span()));
  CHECK_THROWS_AS(make_session(model, "bad", 9, 1, {1, 2, 2}, SamplerOptions::defaults(cfg)), Error);
  GenSession empty = make_session(model, "e", 0, 1, {1, 1, 1}, SamplerOptions::defaults(cfg));
  CHECK_THROWS_AS(empty.latent_grid(cfg.levels, cfg.latent_dim), Error);
}

TEST_CASE("dit checkpoint and session snapshot round trips") {
  const DiTConfig cfg = tiny_dit(true);
  DiT<float> model(cfg, 4);
  randomize(model, 5);
  const fs::path dir = fs::temp_directory_path() / "strata_dit_ckpt";
  fs::remove_all(dir);
  save_dit(model, dir.string());
  const auto loaded = load_dit(dir.string());
  CHECK(to_json(loaded->config()) == to_json(cfg));
  const auto a = model.params().all();
  const auto b = loaded->params().all();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(bitwise_equal(a[i]->value.span(), b[i]->value.span()));
  }

  SamplerOptions opt = SamplerOptions::defaults(cfg);
  GenSession s = make_session(model, "snap", 1, 21, {1, 2, 2}, opt);
  refine(model, s);
  refine(model, s);
  const fs::path sdir = fs::temp_directory_path() / "strata_session_ckpt";
  fs::remove_all(sdir);
  save_checkpoint(session_to_checkpoint(s), sdir.string());
  GenSession restored = session_from_checkpoint(load_checkpoint(sdir.string()));
  CHECK(restored.id == "snap");
  CHECK(restored.levels_done == 2);
  CHECK(restored.cache.levels == 0);
  for (std::uint32_t l = 0; l < 2; ++l) CHECK(bitwise_equal(restored.latents[l].span(), s.latents[l].span()));

  // Continuing from the snapshot matches continuing the live session.
  refine(model, s);
  refine(model, restored);
  CHECK(max_abs_diff(s.latents[2], restored.latents[2]) <= 1e-5);

  Checkpoint wrong = session_to_checkpoint(s);
  wrong.kind = "dit";
  CHECK_THROWS_AS(session_from_checkpoint(wrong), Error);
  CHECK_THROWS_AS(dit_from_checkpoint(session_to_checkpoint(s)), Error);
}
