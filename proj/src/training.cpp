// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/training.hpp"

#include <cmath>
#include <fstream>

namespace strata {

void LossWeights::validate() const {
  STRATA_CHECK(perceptual >= 0 && adversarial >= 0 && margin_l2 >= 0 && direction >= 0 && margin >= 0,
               "loss weights must be non-negative");
}

std::vector<double> level_budget_pmf(std::uint32_t n) {
  STRATA_CHECK(n >= 1, "level count must be >= 1");
  const double total = n * (n + 1.0) / 2.0;
  std::vector<double> p(n);
  for (std::uint32_t m = 1; m <= n; ++m) p[m - 1] = m / total;
  return p;
}

std::uint32_t sample_level(std::uint32_t n, std::mt19937_64& rng) {
  STRATA_CHECK(n >= 1, "level count must be >= 1");
  // Integer draw over the n(n+1)/2 equally likely cells avoids any
  // floating-point bias at the bucket edges.
  const std::uint64_t total = std::uint64_t{n} * (n + 1) / 2;
  std::uint64_t u = std::uniform_int_distribution<std::uint64_t>(0, total - 1)(rng);
  for (std::uint32_t m = 1; m <= n; ++m) {
    if (u < m) return m;
    u -= m;
  }
  return n;
}

LevelBudget sample_level_budget(std::uint32_t n, std::size_t patches, std::mt19937_64& rng,
                                bool per_patch) {
  LevelBudget b;
  b.max_levels = n;
  b.levels.resize(patches);
  if (per_patch) {
    for (auto& m : b.levels) m = sample_level(n, rng);
  } else {
    const std::uint32_t m = sample_level(n, rng);
    for (auto& v : b.levels) v = m;
  }
  return b;
}

template <typename T>
LatentNoise<T> draw_latent_noise(const Shape& shape, std::mt19937_64& rng, double sigma,
                                 std::optional<double> lambda) {
  STRATA_CHECK(sigma > 0, "perturbation sigma must be positive, got ", sigma);
  LatentNoise<T> out;
  out.lambda = lambda ? *lambda : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  STRATA_CHECK(out.lambda >= 0 && out.lambda <= 1, "lambda ", out.lambda, " outside [0, 1]");
  out.offset = Tensor<T>(shape);
  std::normal_distribution<double> eps(0.0, sigma);
  const double w = 1.0 - out.lambda;
  for (T& v : out.offset.span()) v = static_cast<T>(w * eps(rng));
  return out;
}

template <typename T>
Tensor<T> perturb_latents(const Tensor<T>& z, std::mt19937_64& rng, double sigma,
                          std::optional<double> lambda) {
  const LatentNoise<T> noise = draw_latent_noise<T>(z.shape(), rng, sigma, lambda);
  Tensor<T> out = z;
  const T l = static_cast<T>(noise.lambda);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = l * z[i] + noise.offset[i];
  return out;
}

template <typename T>
Var<T> perturb_latents(Var<T> z, const LatentNoise<T>& noise) {
  return add(scale(z, static_cast<T>(noise.lambda)), z.tape->constant(noise.offset));
}

template <typename T>
Var<T> l2_margin_loss(Var<T> z, T margin) {
  STRATA_CHECK(margin >= 0, "margin must be non-negative");
  return hinge_sq_mean(z, margin);
}

template <typename T>
TokenizerLoss<T> tokenizer_loss(Var<T> pred, Var<T> gt, Var<T> z, const LossWeights& w) {
  STRATA_CHECK_SHAPE(pred.shape() == gt.shape(), "prediction ", to_string(pred.shape()),
                     " vs target ", to_string(gt.shape()));
  TokenizerLoss<T> out{pred, mse(pred, gt), l2_margin_loss(z, static_cast<T>(w.margin))};
  out.total = add(out.recon, scale(out.margin, static_cast<T>(w.margin_l2)));
  return out;
}

template <typename T>
Var<T> velocity_loss(Var<T> pred, Var<T> target, T direction) {
  STRATA_CHECK_SHAPE(pred.shape() == target.shape(), "velocity ", to_string(pred.shape()),
                     " vs target ", to_string(target.shape()));
  Var<T> l = mse(pred, target);
  if (direction != T{0}) {
    l = add(l, scale(add_scalar(scale(mean(cosine_rows(pred, target)), T{-1}), T{1}), direction));
  }
  return l;
}

// Plans -----------------------------------------------------------------------

namespace {

const char* kind_name(StageKind k) {
  switch (k) {
    case StageKind::Symmetric: return "symmetric";
    case StageKind::Asymmetric: return "asymmetric";
    case StageKind::Video: return "video";
  }
  return "?";
}

StageKind kind_from_name(const std::string& s) {
  if (s == "symmetric") return StageKind::Symmetric;
  if (s == "asymmetric") return StageKind::Asymmetric;
  if (s == "video") return StageKind::Video;
  throw Error("unknown stage kind '" + s + "' (expected symmetric, asymmetric or video)");
}

}  // namespace

int TrainPlan::total_steps() const {
  int n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

void TrainPlan::validate() const {
  STRATA_CHECK(!stages.empty(), "training plan has no stages");
  for (const auto& s : stages) {
    STRATA_CHECK(s.steps > 0, "stage '", s.name, "' needs steps > 0");
    STRATA_CHECK(!s.sizes.empty(), "stage '", s.name, "' has no sizes");
    if (s.kind == StageKind::Video) {
      STRATA_CHECK(!s.fps.empty() && s.seconds >= 1, "video stage '", s.name, "' needs fps and seconds");
    }
  }
  STRATA_CHECK(batch >= 1, "batch must be >= 1");
  STRATA_CHECK(lr > 0, "learning rate must be positive");
  STRATA_CHECK(sigma > 0, "sigma must be positive");
  STRATA_CHECK(log_every >= 1, "log_every must be >= 1");
  weights.validate();
}

nlohmann::json to_json(const TrainPlan& p) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : p.stages) {
    stages.push_back({{"name", s.name},
                      {"kind", kind_name(s.kind)},
                      {"steps", s.steps},
                      {"sizes", s.sizes},
                      {"fps", s.fps},
                      {"seconds", s.seconds}});
  }
  return {{"stages", stages},
          {"batch", p.batch},
          {"lr", p.lr},
          {"weight_decay", p.weight_decay},
          {"seed", p.seed},
          {"margin_l2", p.weights.margin_l2},
          {"margin", p.weights.margin},
          {"perceptual", p.weights.perceptual},
          {"adversarial", p.weights.adversarial},
          {"direction", p.weights.direction},
          {"denoise", p.denoise},
          {"sigma", p.sigma},
          {"freeze_encoder", p.freeze_encoder},
          {"log_every", p.log_every},
          {"eval_scenes", p.eval_scenes},
          {"eval_size", p.eval_size}};
}

TrainPlan train_plan_from_json(const nlohmann::json& j) {
  TrainPlan p;
  if (j.contains("stages")) {
    for (const auto& s : j.at("stages")) {
      TrainStage st;
      st.name = s.value("name", std::string("stage"));
      st.kind = kind_from_name(s.value("kind", std::string("symmetric")));
      st.steps = s.value("steps", 0);
      st.sizes = s.value("sizes", st.sizes);
      st.fps = s.value("fps", st.fps);
      st.seconds = s.value("seconds", st.seconds);
      p.stages.push_back(st);
    }
  }
  p.batch = j.value("batch", p.batch);
  p.lr = j.value("lr", p.lr);
  p.weight_decay = j.value("weight_decay", p.weight_decay);
  p.seed = j.value("seed", p.seed);
  p.weights.margin_l2 = j.value("margin_l2", p.weights.margin_l2);
  p.weights.margin = j.value("margin", p.weights.margin);
  p.weights.perceptual = j.value("perceptual", p.weights.perceptual);
  p.weights.adversarial = j.value("adversarial", p.weights.adversarial);
  p.weights.direction = j.value("direction", p.weights.direction);
  p.denoise = j.value("denoise", p.denoise);
  p.sigma = j.value("sigma", p.sigma);
  p.freeze_encoder = j.value("freeze_encoder", p.freeze_encoder);
  p.log_every = j.value("log_every", p.log_every);
  p.eval_scenes = j.value("eval_scenes", p.eval_scenes);
  p.eval_size = j.value("eval_size", p.eval_size);
  p.validate();
  return p;
}

TrainPlan toy_tokenizer_plan(int steps) {
  TrainPlan p;
  const int sym = steps * 3 / 4;
  p.stages.push_back({"symmetric", StageKind::Symmetric, sym, {32}, {}, 1});
  p.stages.push_back({"asymmetric", StageKind::Asymmetric, steps - sym, {16, 32, 48, 64}, {}, 1});
  return p;
}

// Training loop -----------------------------------------------------------------

std::vector<double> psnr_per_level(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes,
                                   int size) {
  const std::uint32_t n = tok.config().levels;
  std::vector<double> out(n, 0.0);
  if (scenes.empty()) return out;
  const ScaleSpec scale = ScaleSpec::image(size, size);
  const auto patches = static_cast<std::size_t>(tok.geometry(scale).num_patches());
  for (const auto& scene : scenes) {
    const Sample gt = render(scene, scale);
    const LatentGrid z = tok.encode(gt, LevelBudget::uniform(patches, n, n));
    for (std::uint32_t m = 1; m <= n; ++m) {
      out[m - 1] += psnr(tok.decode(z, scale, LevelBudget::uniform(patches, m, n)), gt);
    }
  }
  for (double& v : out) v /= static_cast<double>(scenes.size());
  return out;
}

namespace {

struct ScalePair {
  ScaleSpec in;
  ScaleSpec out;
};

ScalePair draw_scales(const TrainStage& st, std::mt19937_64& rng) {
  auto pick = [&rng](const std::vector<int>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  switch (st.kind) {
    case StageKind::Symmetric: {
      const int s = pick(st.sizes);
      return {ScaleSpec::image(s, s), ScaleSpec::image(s, s)};
    }
    case StageKind::Asymmetric: {
      const int a = pick(st.sizes);
      const int b = pick(st.sizes);
      return {ScaleSpec::image(a, a), ScaleSpec::image(b, b)};
    }
    case StageKind::Video: {
      const int s = pick(st.sizes);
      const int fa = pick(st.fps);
      const int fb = pick(st.fps);
      return {ScaleSpec{s, s, fa, fa * st.seconds}, ScaleSpec{s, s, fb, fb * st.seconds}};
    }
  }
  return {};
}

std::vector<Parameter<float>*> trainable(Tokenizer<float>& tok, bool freeze_encoder) {
  if (!freeze_encoder) return tok.params().all();
  auto out = tok.params().with_prefix("decoder.");
  for (auto* p : tok.params().with_prefix("depatchify.")) out.push_back(p);
  return out;
}

}  // namespace

TokenizerTrainResult train_tokenizer(const TrainPlan& plan, Tokenizer<float>& tok,
                                     const std::vector<SceneSpec>& train,
                                     const std::vector<SceneSpec>& heldout, const TrainLog& log) {
  plan.validate();
  STRATA_CHECK(!train.empty(), "training corpus is empty");
  const auto& cfg = tok.config();
  std::mt19937_64 rng(plan.seed);
  AdamW<float> opt({plan.lr, 0.9, 0.95, 1e-8, plan.weight_decay});
  const auto params = trainable(tok, plan.freeze_encoder);
  for (auto* p : tok.params().all()) p->zero_grad();

  std::ofstream metrics;
  if (!log.metrics_path.empty()) {
    metrics.open(log.metrics_path, std::ios::trunc);
    STRATA_CHECK(metrics.good(), "cannot write metrics to ", log.metrics_path);
  }
  const std::vector<SceneSpec> eval(heldout.begin(),
                                    heldout.begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(plan.eval_scenes, heldout.size())));

  TokenizerTrainResult res;
  res.initial_psnr = psnr_per_level(tok, eval, plan.eval_size);
  const float inv_batch = 1.0f / static_cast<float>(plan.batch);
  double window_loss = 0, window_recon = 0, window_margin = 0;
  int window = 0;

  for (const auto& stage : plan.stages) {
    for (int s = 0; s < stage.steps; ++s) {
      double step_loss = 0, step_recon = 0, step_margin = 0;
      for (int b = 0; b < plan.batch; ++b) {
        const SceneSpec& scene = train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng)];
        const ScalePair sc = draw_scales(stage, rng);
        if (stage.kind != StageKind::Symmetric) {
          ++res.asymmetric_samples;
          if (!(sc.in == sc.out)) ++res.asymmetric_pairs;
        }
        const Sample input = render(scene, sc.in);
        const Sample target = sc.in == sc.out ? input : render(scene, sc.out);
        const PatchGeometry g_in = tok.geometry(sc.in);
        const PatchGeometry g_out = tok.geometry(sc.out);
        STRATA_CHECK(g_in.grid == g_out.grid, "input and target scales give different grids");
        const LevelBudget budget =
            sample_level_budget(cfg.levels, static_cast<std::size_t>(g_in.num_patches()), rng, true);
        const TokenLayout layout = budget_layout(g_in.grid, budget, DropMode::Compacted);

        Tape<float> tape;
        Var<float> z = tok.encode_tokens(tape, input, layout, budget);
        Var<float> zin = z;
        if (plan.denoise) zin = perturb_latents(z, draw_latent_noise<float>(z.shape(), rng, plan.sigma));
        Var<float> pred = tok.decode_tokens(tape, zin, layout, budget, g_out);
        Var<float> gt = tape.constant(patch_pixels<float>(target, g_out));
        const TokenizerLoss<float> loss = tokenizer_loss(pred, gt, z, plan.weights);
        const double lv = loss.total.value()[0];
        STRATA_CHECK(std::isfinite(lv), "non-finite tokenizer loss at step ", res.steps + 1,
                     " (stage '", stage.name, "', sample ", b, ")");
        tape.backward(scale(loss.total, inv_batch));
        step_loss += lv;
        step_recon += loss.recon.value()[0];
        step_margin += loss.margin.value()[0];
      }
      opt.step(params);
      for (auto* p : tok.params().all()) p->zero_grad();
      ++res.steps;
      res.losses.push_back(step_loss / plan.batch);
      window_loss += step_loss / plan.batch;
      window_recon += step_recon / plan.batch;
      window_margin += step_margin / plan.batch;
      ++window;

      const bool last = res.steps == plan.total_steps();
      if (res.steps % plan.log_every == 0 || last) {
        nlohmann::json rec{{"step", res.steps},
                           {"stage", stage.name},
                           {"loss", window_loss / window},
                           {"recon", window_recon / window},
                           {"margin_l2", window_margin / window},
                           {"asymmetric_samples", res.asymmetric_samples},
                           {"asymmetric_pairs", res.asymmetric_pairs},
                           {"psnr_per_level", psnr_per_level(tok, eval, plan.eval_size)}};
        if (metrics.is_open()) metrics << rec.dump() << "\n" << std::flush;
        if (log.on_log) log.on_log(rec);
        window_loss = window_recon = window_margin = 0;
        window = 0;
      }
    }
  }
  res.final_psnr = psnr_per_level(tok, eval, plan.eval_size);
  return res;
}

#define STRATA_INSTANTIATE(T)                                                                  \
  template LatentNoise<T> draw_latent_noise<T>(const Shape&, std::mt19937_64&, double,        \
                                               std::optional<double>);                        \
  template Tensor<T> perturb_latents(const Tensor<T>&, std::mt19937_64&, double,              \
                                     std::optional<double>);                                  \
  template Var<T> perturb_latents(Var<T>, const LatentNoise<T>&);                             \
  template Var<T> l2_margin_loss(Var<T>, T);                                                  \
  template TokenizerLoss<T> tokenizer_loss(Var<T>, Var<T>, Var<T>, const LossWeights&);       \
  template Var<T> velocity_loss(Var<T>, Var<T>, T);
STRATA_INSTANTIATE(float)
STRATA_INSTANTIATE(double)
#undef STRATA_INSTANTIATE

}  // namespace strata
