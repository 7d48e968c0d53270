// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "strata/tokenizer.hpp"

namespace strata {

void DiTConfig::validate() const {
  STRATA_CHECK(heads >= 1 && width % heads == 0, "dit heads=", heads, " must divide width=", width);
  STRATA_CHECK((width / heads) % (2 * kAxisCount) == 0, "dit head width ", width / heads,
               " must be a multiple of ", 2 * kAxisCount);
  STRATA_CHECK(width % 2 == 0, "dit width must be even");
  STRATA_CHECK(layers >= 1 && ffn_mult >= 1, "dit layers and ffn_mult must be >= 1");
  STRATA_CHECK(levels >= 1 && latent_dim >= 1, "dit levels and latent_dim must be >= 1");
  STRATA_CHECK(num_classes >= 1, "dit needs at least one class");
  STRATA_CHECK(!cross_attention || cond_tokens >= 1, "cross-attention needs condition tokens");
  SamplerOptions{steps, cfg_scale, cfg_interval, shift}.validate();
}

nlohmann::json to_json(const DiTConfig& c) {
  return {{"width", c.width},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ffn_mult", c.ffn_mult},
          {"levels", c.levels},
          {"latent_dim", c.latent_dim},
          {"num_classes", c.num_classes},
          {"cross_attention", c.cross_attention},
          {"cond_tokens", c.cond_tokens},
          {"temporal_causal", c.temporal_causal},
          {"rope_base", c.rope.base},
          {"rope_coord_scale", c.rope.coord_scale},
          {"steps", c.steps},
          {"cfg_scale", c.cfg_scale},
          {"cfg_interval", c.cfg_interval},
          {"shift", c.shift}};
}

DiTConfig dit_config_from_json(const nlohmann::json& j) {
  DiTConfig c;
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.levels = j.value("levels", c.levels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.cross_attention = j.value("cross_attention", c.cross_attention);
  c.cond_tokens = j.value("cond_tokens", c.cond_tokens);
  c.temporal_causal = j.value("temporal_causal", c.temporal_causal);
  c.rope.base = j.value("rope_base", c.rope.base);
  c.rope.coord_scale = j.value("rope_coord_scale", c.rope.coord_scale);
  c.steps = j.value("steps", c.steps);
  c.cfg_scale = j.value("cfg_scale", c.cfg_scale);
  c.cfg_interval = j.value("cfg_interval", c.cfg_interval);
  c.shift = j.value("shift", c.shift);
  c.validate();
  return c;
}

namespace {

/// Sinusoidal features of 1000 t, [cos | sin], one row per entry.
template <typename T>
Tensor<T> timestep_features(std::span<const double> t, std::size_t width) {
  const std::size_t half = width / 2;
  Tensor<T> out({t.size(), width});
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = 1000.0 * t[r] * freq;
      out.at(r, i) = static_cast<T>(std::cos(arg));
      out.at(r, half + i) = static_cast<T>(std::sin(arg));
    }
  }
  return out;
}

double residual_scale(std::size_t layers) { return 1.0 / std::sqrt(2.0 * static_cast<double>(layers)); }

}  // namespace

template <typename T>
DiT<T>::DiT(const DiTConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t W = cfg_.width, d = cfg_.latent_dim;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    return &store_.add(name, init_normal<T>({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
  };
  auto zeros = [&](const std::string& name, Shape shape) { return &store_.add(name, Tensor<T>(shape)); };

  in_w_ = lin("in.w", d, W);
  in_b_ = zeros("in.b", {W});
  t_w1_ = lin("t_embed.w1", W, W);
  t_b1_ = zeros("t_embed.b1", {W});
  t_w2_ = lin("t_embed.w2", W, W);
  t_b2_ = zeros("t_embed.b2", {W});
  const auto classes = static_cast<std::size_t>(cfg_.num_classes) + 1;
  class_embed_ = &store_.add("class_embed", init_normal<T>({classes, W}, rng, 0.02));
  if (cfg_.cross_attention) {
    cond_embed_ = &store_.add("cond_embed", init_normal<T>({classes * cfg_.cond_tokens, W}, rng, 0.02));
  }
  const BlockShape shape{W, cfg_.heads, W * cfg_.ffn_mult, cfg_.cross_attention};
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const std::string name = "block" + std::to_string(i);
    blocks_.emplace_back(store_, name, shape, rng, residual_scale(cfg_.layers));
    // Zero modulation: every block starts as the identity.
    ada_w_.push_back(zeros(name + ".ada.w", {W, 6 * W}));
    ada_b_.push_back(zeros(name + ".ada.b", {6 * W}));
  }
  final_norm_ = &store_.add("final.norm", Tensor<T>({W}, T{1}));
  final_ada_w_ = zeros("final.ada.w", {W, 2 * W});
  final_ada_b_ = zeros("final.ada.b", {2 * W});
  out_w_ = zeros("out.w", {W, d});
  out_b_ = zeros("out.b", {d});
}

template <typename T>
Var<T> DiT<T>::forward(Tape<T>& tape, Var<T> x, std::span<const double> t, int class_id,
                       const TokenLayout& layout, const LevelBudget& budget, const GridDims& grid,
                       const DiTKV<T>& kv, AttentionCounter* counter) const {
  const std::size_t L = layout.size(), W = cfg_.width;
  STRATA_CHECK_SHAPE(x.rows() == L && x.cols() == cfg_.latent_dim, "dit input ", to_string(x.shape()),
                     " for ", L, " tokens of width ", cfg_.latent_dim);
  STRATA_CHECK_SHAPE(t.size() == L, "dit got ", t.size(), " timesteps for ", L, " tokens");
  STRATA_CHECK(class_id >= 0 && class_id <= cfg_.num_classes, "class id ", class_id, " outside [0, ",
               cfg_.num_classes, "]");
  for (double ti : t) STRATA_CHECK(ti >= 0.0 && ti <= 1.0, "timestep ", ti, " outside [0, 1]");
  for (const auto& tok : layout) {
    STRATA_CHECK(tok.level >= 1 && tok.level <= cfg_.levels, "latent level ", tok.level,
                 " outside [1, ", cfg_.levels, "]");
  }

  Var<T> h = linear(x, tape.param(*in_w_), std::optional<Var<T>>(tape.param(*in_b_)));
  Var<T> temb = linear(tape.constant(timestep_features<T>(t, W)), tape.param(*t_w1_),
                       std::optional<Var<T>>(tape.param(*t_b1_)));
  temb = linear(silu(temb), tape.param(*t_w2_), std::optional<Var<T>>(tape.param(*t_b2_)));
  const std::vector<std::size_t> cls(L, static_cast<std::size_t>(class_id));
  const Var<T> c = silu(add(temb, gather_rows<T>(tape.param(*class_embed_), cls)));

  std::optional<Var<T>> cond;
  if (cfg_.cross_attention) {
    std::vector<std::size_t> rows(cfg_.cond_tokens);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i] = static_cast<std::size_t>(class_id) * cfg_.cond_tokens + i;
    }
    cond = gather_rows<T>(tape.param(*cond_embed_), rows);
  }

  const RotaryTable<T> rope =
      make_rotary_table<T>(latent_positions(layout, grid), W / cfg_.heads, cfg_.rope);
  const bool temporal = cfg_.temporal_causal && grid.t > 1;
  const bool has_prefix = kv.prefix != nullptr && kv.prefix_layout != nullptr && !kv.prefix_layout->empty();
  AttentionBlock attn;
  if (has_prefix) {
    STRATA_CHECK(kv.prefix->size() == blocks_.size(), "key/value cache has ", kv.prefix->size(),
                 " blocks, model has ", blocks_.size());
    TokenLayout keys = *kv.prefix_layout;
    keys.insert(keys.end(), layout.begin(), layout.end());
    attn.mask = build_lca_mask(layout, keys, budget, temporal);
  } else {
    attn.mask = build_lca_mask(layout, budget, temporal);
  }
  if (kv.out != nullptr) kv.out->assign(blocks_.size(), BlockKV<T>{});

  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Var<T> m = linear(c, tape.param(*ada_w_[b]), std::optional<Var<T>>(tape.param(*ada_b_[b])));
    const Modulation<T> mod{slice_cols(m, 0, W),     slice_cols(m, W, W),     slice_cols(m, 2 * W, W),
                            slice_cols(m, 3 * W, W), slice_cols(m, 4 * W, W), slice_cols(m, 5 * W, W)};
    BlockContext<T> ctx;
    ctx.rope = &rope;
    ctx.attn = std::span<const AttentionBlock>(&attn, 1);
    ctx.mod = &mod;
    ctx.cond_tokens = cond;
    ctx.counter = counter;
    if (has_prefix) ctx.prefix = &(*kv.prefix)[b];
    if (kv.out != nullptr) ctx.kv_out = &(*kv.out)[b];
    h = blocks_[b].forward(tape, h, ctx);
  }

  const Var<T> fm = linear(c, tape.param(*final_ada_w_), std::optional<Var<T>>(tape.param(*final_ada_b_)));
  h = rmsnorm(h, tape.param(*final_norm_), T(1e-6));
  h = add(mul(h, add_scalar(slice_cols(fm, W, W), T{1})), slice_cols(fm, 0, W));
  h = linear(h, tape.param(*out_w_), std::optional<Var<T>>(tape.param(*out_b_)));
  std::vector<T> keep(L);
  for (std::size_t i = 0; i < L; ++i) keep[i] = budget.active(layout[i]) ? T{1} : T{0};
  return scale_rows<T>(h, keep);
}

void save_dit(const DiT<float>& model, const std::string& dir) {
  save_checkpoint(checkpoint_from_params(model.params(), "dit", to_json(model.config())), dir);
}

std::unique_ptr<DiT<float>> dit_from_checkpoint(const Checkpoint& ckpt) {
  STRATA_CHECK(ckpt.kind == "dit", "checkpoint kind is '", ckpt.kind, "', expected 'dit'");
  auto model = std::make_unique<DiT<float>>(dit_config_from_json(ckpt.config), 0);
  load_params(model->params(), ckpt);
  return model;
}

std::unique_ptr<DiT<float>> load_dit(const std::string& dir) { return dit_from_checkpoint(load_checkpoint(dir)); }

namespace {

Tensor<float> eval_rows(const DiT<float>& model, const Tensor<float>& x, std::span<const double> t,
                        int class_id, const TokenLayout& layout, const LevelBudget& budget,
                        const GridDims& grid, const DiTKV<float>& kv, AttentionCounter* counter) {
  Tape<float> tape(false);
  return model.forward(tape, tape.constant(x), t, class_id, layout, budget, grid, kv, counter).value();
}

void check_grid(const DiTConfig& cfg, const LatentGrid& z) {
  STRATA_CHECK_SHAPE(z.levels == cfg.levels && z.dim == cfg.latent_dim, "latent grid has n=", z.levels,
                     " d=", z.dim, " but the model expects n=", cfg.levels, " d=", cfg.latent_dim);
}

}  // namespace

LatentGrid velocity(const DiT<float>& model, const LatentGrid& noisy, std::span<const double> t_per_level,
                    int class_id, const LevelBudget& budget) {
  const DiTConfig& cfg = model.config();
  check_grid(cfg, noisy);
  STRATA_CHECK_SHAPE(t_per_level.size() == cfg.levels, "got ", t_per_level.size(),
                     " timesteps for ", cfg.levels, " levels");
  budget.validate();
  STRATA_CHECK(budget.max_levels == cfg.levels, "budget max_levels ", budget.max_levels,
               " does not match n=", cfg.levels);
  const TokenLayout layout = budget_layout(noisy.grid, budget, DropMode::Compacted);
  std::vector<double> t(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) t[i] = t_per_level[layout[i].level - 1];
  LatentGrid out(noisy.grid, cfg.levels, cfg.latent_dim, budget);
  out.set_rows(layout, eval_rows(model, noisy.rows(layout), t, class_id, layout, budget, noisy.grid, {}, nullptr));
  return out;
}

double sample_logit_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return 1.0 / (1.0 + std::exp(-n01(rng)));
}

RFPair rf_training_pair(const LatentGrid& z, std::mt19937_64& rng, bool shared_t) {
  RFPair out{LatentGrid(z.grid, z.levels, z.dim, z.budget), std::vector<double>(z.levels),
             LatentGrid(z.grid, z.levels, z.dim, z.budget)};
  out.t_per_level[0] = sample_logit_normal(rng);
  for (std::uint32_t l = 1; l < z.levels; ++l) {
    out.t_per_level[l] = shared_t ? out.t_per_level[0] : sample_logit_normal(rng);
  }
  std::normal_distribution<float> n01(0.0f, 1.0f);
  for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(z.grid.patches()); ++p) {
    for (std::uint32_t l = 1; l <= z.levels; ++l) {
      if (l > z.budget.levels[p]) continue;
      const auto t = static_cast<float>(out.t_per_level[l - 1]);
      const auto src = z.token(p, l);
      auto noisy = out.noisy.token(p, l);
      auto target = out.target.token(p, l);
      for (std::size_t i = 0; i < z.dim; ++i) {
        const float eps = n01(rng);
        noisy[i] = (1.0f - t) * src[i] + t * eps;
        target[i] = eps - src[i];
      }
    }
  }
  return out;
}

SamplerOptions SamplerOptions::defaults(const DiTConfig& cfg) {
  return {cfg.steps, cfg.cfg_scale, cfg.cfg_interval, cfg.shift};
}

void SamplerOptions::validate() const {
  STRATA_CHECK(steps >= 1, "sampler steps must be >= 1, got ", steps);
  STRATA_CHECK(std::isfinite(cfg_scale), "cfg_scale must be finite");
  STRATA_CHECK(cfg_interval >= 0.0 && cfg_interval <= 1.0, "cfg_interval ", cfg_interval,
               " outside [0, 1]");
  STRATA_CHECK(shift > 0.0 && std::isfinite(shift), "shift must be positive, got ", shift);
}

std::vector<double> time_grid(int steps, double shift) {
  STRATA_CHECK(steps >= 1, "time grid needs at least one step");
  std::vector<double> ts(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    const double u = 1.0 - static_cast<double>(i) / steps;
    ts[static_cast<std::size_t>(i)] = shift == 1.0 ? u : shift * u / (1.0 + (shift - 1.0) * u);
  }
  ts.back() = 0.0;
  return ts;
}

Tensor<float> level_noise(std::uint64_t seed, std::uint32_t level, std::size_t patches, std::size_t dim) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), level};
  std::mt19937_64 rng(seq);
  std::normal_distribution<float> n01(0.0f, 1.0f);
  Tensor<float> out({patches, dim});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n01(rng);
  return out;
}

Tensor<float> guide(const Tensor<float>& v_cond, const Tensor<float>* v_uncond, double scale) {
  if (v_uncond == nullptr || scale == 1.0) return v_cond;
  if (scale == 0.0) return *v_uncond;
  STRATA_CHECK_SHAPE(v_cond.shape() == v_uncond->shape(), "guided velocities differ in shape");
  Tensor<float> out(v_cond.shape());
  const auto s = static_cast<float>(scale);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*v_uncond)[i] + s * (v_cond[i] - (*v_uncond)[i]);
  return out;
}

bool guidance_active(const SamplerOptions& opt, int class_id, int null_class, double t) {
  return opt.cfg_scale != 1.0 && class_id != null_class && t >= opt.cfg_interval;
}

namespace {

bool guidance_ever(const SamplerOptions& opt, int class_id, int null_class) {
  return opt.cfg_scale != 1.0 && class_id != null_class;
}

/// Rows of `layout` filled from per-level tensors [patches x d].
Tensor<float> gather_levels(const TokenLayout& layout, const std::vector<const Tensor<float>*>& levels,
                            std::size_t dim) {
  Tensor<float> out({layout.size(), dim});
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Tensor<float>& src = *levels.at(layout[i].level - 1);
    for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = src.at(layout[i].patch, j);
  }
  return out;
}

}  // namespace

LatentGrid sample(const DiT<float>& model, int class_id, std::uint32_t m, const GridDims& grid,
                  const SamplerOptions& opt, std::uint64_t seed, AttentionCounter* counter) {
  const DiTConfig& cfg = model.config();
  opt.validate();
  STRATA_CHECK(m >= 1 && m <= cfg.levels, "level count ", m, " outside [1, ", cfg.levels, "]");
  const auto P = static_cast<std::size_t>(grid.patches());
  const LevelBudget budget = LevelBudget::uniform(P, m, cfg.levels);
  const TokenLayout layout = latent_layout(grid, m);
  std::vector<Tensor<float>> noise;
  std::vector<const Tensor<float>*> ptrs;
  for (std::uint32_t l = 1; l <= m; ++l) noise.push_back(level_noise(seed, l, P, cfg.latent_dim));
  for (const auto& n : noise) ptrs.push_back(&n);

  const std::vector<double> ts = time_grid(opt.steps, opt.shift);
  const std::function<Tensor<float>(const Tensor<float>&, double)> field = [&](const Tensor<float>& x,
                                                                               double t) {
    const std::vector<double> trow(layout.size(), t);
    const Tensor<float> vc = eval_rows(model, x, trow, class_id, layout, budget, grid, {}, counter);
    if (!guidance_active(opt, class_id, model.null_class(), t)) return vc;
    const Tensor<float> vu = eval_rows(model, x, trow, model.null_class(), layout, budget, grid, {}, counter);
    return guide(vc, &vu, opt.cfg_scale);
  };
  const Tensor<float> x0 = euler_integrate<float>(gather_levels(layout, ptrs, cfg.latent_dim), ts, field);
  LatentGrid out(grid, cfg.levels, cfg.latent_dim, budget);
  out.set_rows(layout, x0);
  return out;
}

LatentGrid GenSession::latent_grid(std::uint32_t n, std::size_t dim) const {
  STRATA_CHECK(levels_done >= 1, "session ", id, " has no generated levels");
  const auto P = static_cast<std::size_t>(grid.patches());
  LatentGrid out(grid, n, dim, LevelBudget::uniform(P, levels_done, n));
  for (std::uint32_t l = 1; l <= levels_done; ++l) {
    out.set_rows(level_layout(grid, l), latents[l - 1]);
  }
  return out;
}

GenSession make_session(const DiT<float>& model, std::string id, int class_id, std::uint64_t seed,
                        const GridDims& grid, const SamplerOptions& opt) {
  opt.validate();
  STRATA_CHECK(class_id >= 0 && class_id <= model.null_class(), "class id ", class_id, " outside [0, ",
               model.null_class(), "]");
  STRATA_CHECK(grid.t >= 1 && grid.h >= 1 && grid.w >= 1, "grid dimensions must be >= 1");
  GenSession s;
  s.id = std::move(id);
  s.class_id = class_id;
  s.seed = seed;
  s.grid = grid;
  s.options = opt;
  return s;
}

void rebuild_cache(const DiT<float>& model, GenSession& session) {
  const DiTConfig& cfg = model.config();
  session.cache.clear();
  if (session.levels_done == 0) return;
  const auto P = static_cast<std::size_t>(session.grid.patches());
  const LevelBudget budget = LevelBudget::uniform(P, session.levels_done, cfg.levels);
  const TokenLayout layout = latent_layout(session.grid, session.levels_done);
  std::vector<const Tensor<float>*> ptrs;
  for (const auto& t : session.latents) ptrs.push_back(&t);
  const Tensor<float> x = gather_levels(layout, ptrs, cfg.latent_dim);
  const std::vector<double> t0(layout.size(), 0.0);
  eval_rows(model, x, t0, session.class_id, layout, budget, session.grid, {nullptr, nullptr, &session.cache.cond},
            nullptr);
  if (guidance_ever(session.options, session.class_id, model.null_class())) {
    eval_rows(model, x, t0, model.null_class(), layout, budget, session.grid,
              {nullptr, nullptr, &session.cache.uncond}, nullptr);
  }
  session.cache.levels = session.levels_done;
}

void refine(const DiT<float>& model, GenSession& session, const RefineOptions& ropt) {
  const DiTConfig& cfg = model.config();
  STRATA_CHECK(session.levels_done < cfg.levels, "session ", session.id, " already has all ", cfg.levels,
               " levels");
  const SamplerOptions& opt = session.options;
  opt.validate();
  const std::uint32_t l = session.levels_done + 1;
  const GridDims& grid = session.grid;
  const auto P = static_cast<std::size_t>(grid.patches());
  const LevelBudget budget = LevelBudget::uniform(P, l, cfg.levels);
  const TokenLayout own = level_layout(grid, l);
  const TokenLayout lower = latent_layout(grid, l - 1);
  const TokenLayout full = latent_layout(grid, l);
  const int null = model.null_class();
  const bool guided = guidance_ever(opt, session.class_id, null);
  if (ropt.use_cache && session.cache.levels != session.levels_done) rebuild_cache(model, session);

  std::vector<const Tensor<float>*> ptrs;
  for (const auto& t : session.latents) ptrs.push_back(&t);
  const Tensor<float> lower_rows = gather_levels(lower, ptrs, cfg.latent_dim);

  auto eval = [&](const Tensor<float>& x, double t, int cls) {
    if (ropt.use_cache) {
      const auto& prefix = cls == null && guided ? session.cache.uncond : session.cache.cond;
      const std::vector<double> trow(own.size(), t);
      const DiTKV<float> kv{l > 1 ? &prefix : nullptr, &lower, nullptr};
      return eval_rows(model, x, trow, cls, own, budget, grid, kv, ropt.counter);
    }
    std::vector<double> trow(full.size(), 0.0);
    for (std::size_t i = lower.size(); i < full.size(); ++i) trow[i] = t;
    Tensor<float> rows({full.size(), cfg.latent_dim});
    std::copy(lower_rows.data(), lower_rows.data() + lower_rows.size(), rows.data());
    std::copy(x.data(), x.data() + x.size(), rows.data() + lower_rows.size());
    const Tensor<float> v = eval_rows(model, rows, trow, cls, full, budget, grid, {}, ropt.counter);
    Tensor<float> out({own.size(), cfg.latent_dim});
    std::copy(v.data() + lower_rows.size(), v.data() + v.size(), out.data());
    return out;
  };

  int step = 0;
  const std::vector<double> ts = time_grid(opt.steps, opt.shift);
  const std::function<Tensor<float>(const Tensor<float>&, double)> field = [&](const Tensor<float>& x,
                                                                               double t) {
    Tensor<float> v = eval(x, t, session.class_id);
    if (guidance_active(opt, session.class_id, null, t)) {
      const Tensor<float> vu = eval(x, t, null);
      v = guide(v, &vu, opt.cfg_scale);
    }
    if (ropt.on_step) ropt.on_step(step, v);
    ++step;
    return v;
  };
  Tensor<float> x0 = euler_integrate<float>(level_noise(session.seed, l, P, cfg.latent_dim), ts, field);

  if (ropt.use_cache) {
    // Fill: the new level's keys/values at its clean value.
    const std::vector<double> t0(own.size(), 0.0);
    auto fill = [&](std::vector<BlockKV<float>>& cache, int cls) {
      std::vector<BlockKV<float>> mine;
      eval_rows(model, x0, t0, cls, own, budget, grid, {l > 1 ? &cache : nullptr, &lower, &mine}, nullptr);
      if (cache.empty()) {
        cache = std::move(mine);
      } else {
        for (std::size_t b = 0; b < cache.size(); ++b) cache[b].append(mine[b]);
      }
    };
    fill(session.cache.cond, session.class_id);
    if (guided) fill(session.cache.uncond, null);
    session.cache.levels = l;
  } else {
    session.cache.clear();
  }
  session.latents.push_back(std::move(x0));
  session.levels_done = l;
}

Checkpoint session_to_checkpoint(const GenSession& s) {
  Checkpoint out;
  out.kind = "session";
  out.config = {{"id", s.id},
                {"class_id", s.class_id},
                {"seed", s.seed},
                {"grid", {{"t", s.grid.t}, {"h", s.grid.h}, {"w", s.grid.w}}},
                {"steps", s.options.steps},
                {"cfg_scale", s.options.cfg_scale},
                {"cfg_interval", s.options.cfg_interval},
                {"shift", s.options.shift},
                {"levels_done", s.levels_done}};
  for (std::uint32_t l = 1; l <= s.levels_done; ++l) out.add("level" + std::to_string(l), s.latents[l - 1]);
  return out;
}

GenSession session_from_checkpoint(const Checkpoint& ckpt) {
  STRATA_CHECK(ckpt.kind == "session", "checkpoint kind is '", ckpt.kind, "', expected 'session'");
  const auto& c = ckpt.config;
  GenSession s;
  s.id = c.at("id").get<std::string>();
  s.class_id = c.at("class_id").get<int>();
  s.seed = c.at("seed").get<std::uint64_t>();
  s.grid = {c.at("grid").at("t").get<int>(), c.at("grid").at("h").get<int>(), c.at("grid").at("w").get<int>()};
  s.options = {c.at("steps").get<int>(), c.at("cfg_scale").get<double>(), c.at("cfg_interval").get<double>(),
               c.at("shift").get<double>()};
  s.options.validate();
  s.levels_done = c.at("levels_done").get<std::uint32_t>();
  STRATA_CHECK(ckpt.tensors.size() == s.levels_done, "session snapshot holds ", ckpt.tensors.size(),
               " tensors for ", s.levels_done, " levels");
  for (std::uint32_t l = 1; l <= s.levels_done; ++l) {
    const Tensor<float>& t = ckpt.at("level" + std::to_string(l));
    STRATA_CHECK_SHAPE(t.rank() == 2 && t.rows() == static_cast<std::size_t>(s.grid.patches()), "level ", l,
                       " tensor has shape ", to_string(t.shape()));
    s.latents.push_back(t);
  }
  return s;
}

template class DiT<float>;
template class DiT<double>;

}  // namespace strata
