// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>

#include "strata/training.hpp"

namespace strata {

void DiTTrainPlan::validate() const {
  STRATA_CHECK(steps >= 1, "steps must be >= 1, got ", steps);
  STRATA_CHECK(batch >= 1, "batch must be >= 1, got ", batch);
  STRATA_CHECK(lr > 0 && std::isfinite(lr), "lr must be positive, got ", lr);
  STRATA_CHECK(weight_decay >= 0, "weight_decay must be >= 0");
  STRATA_CHECK(null_prob >= 0 && null_prob <= 1, "null_prob ", null_prob, " outside [0, 1]");
  STRATA_CHECK(direction >= 0, "direction weight must be >= 0");
  STRATA_CHECK(size >= 1, "size must be >= 1, got ", size);
  STRATA_CHECK(log_every >= 1, "log_every must be >= 1");
}

nlohmann::json to_json(const DiTTrainPlan& p) {
  return {{"steps", p.steps},           {"batch", p.batch},         {"lr", p.lr},
          {"weight_decay", p.weight_decay}, {"seed", p.seed},       {"null_prob", p.null_prob},
          {"shared_t", p.shared_t},     {"direction", p.direction}, {"size", p.size},
          {"log_every", p.log_every}};
}

DiTTrainPlan dit_train_plan_from_json(const nlohmann::json& j) {
  DiTTrainPlan p;
  p.steps = j.value("steps", p.steps);
  p.batch = j.value("batch", p.batch);
  p.lr = j.value("lr", p.lr);
  p.weight_decay = j.value("weight_decay", p.weight_decay);
  p.seed = j.value("seed", p.seed);
  p.null_prob = j.value("null_prob", p.null_prob);
  p.shared_t = j.value("shared_t", p.shared_t);
  p.direction = j.value("direction", p.direction);
  p.size = j.value("size", p.size);
  p.log_every = j.value("log_every", p.log_every);
  p.validate();
  return p;
}

int draw_condition(int class_id, int null_class, double null_prob, std::mt19937_64& rng) {
  return std::bernoulli_distribution(null_prob)(rng) ? null_class : class_id;
}

DiTTrainResult train_dit(const DiTTrainPlan& plan, DiT<float>& model, const Tokenizer<float>& tok,
                         const std::vector<SceneSpec>& train, const TrainLog& log) {
  plan.validate();
  STRATA_CHECK(!train.empty(), "training corpus is empty");
  const DiTConfig& cfg = model.config();
  const TokenizerConfig& tcfg = tok.config();
  STRATA_CHECK(cfg.levels == tcfg.levels && cfg.latent_dim == tcfg.latent_dim, "model expects n=",
               cfg.levels, " d=", cfg.latent_dim, " but the tokenizer has n=", tcfg.levels,
               " d=", tcfg.latent_dim);

  const ScaleSpec extent = ScaleSpec::image(plan.size, plan.size);
  const auto patches = static_cast<std::size_t>(tok.geometry(extent).num_patches());
  std::vector<LatentGrid> latents;
  latents.reserve(train.size());
  for (const auto& scene : train) {
    STRATA_CHECK(scene.class_id >= 0 && scene.class_id < cfg.num_classes, "scene class ", scene.class_id,
                 " outside [0, ", cfg.num_classes, ")");
    latents.push_back(tok.encode(render(scene, extent), LevelBudget::uniform(patches, tcfg.levels, tcfg.levels)));
  }

  std::ofstream metrics;
  if (!log.metrics_path.empty()) {
    metrics.open(log.metrics_path, std::ios::trunc);
    STRATA_CHECK(metrics.good(), "cannot write metrics to ", log.metrics_path);
  }

  std::mt19937_64 rng(plan.seed);
  AdamW<float> opt({plan.lr, 0.9, 0.95, 1e-8, plan.weight_decay});
  const auto params = model.params().all();
  for (auto* p : params) p->zero_grad();
  const float inv_batch = 1.0f / static_cast<float>(plan.batch);
  const auto direction = static_cast<float>(plan.direction);

  DiTTrainResult res;
  double window_loss = 0;
  int window = 0;
  for (int step = 1; step <= plan.steps; ++step) {
    double step_loss = 0;
    for (int b = 0; b < plan.batch; ++b) {
      const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, latents.size() - 1)(rng);
      const LevelBudget budget = sample_level_budget(cfg.levels, patches, rng, false);
      LatentGrid z = latents[idx];
      z.budget = budget;
      z.apply_budget();
      const int cls = draw_condition(train[idx].class_id, model.null_class(), plan.null_prob, rng);
      ++res.samples;
      if (cls == model.null_class()) ++res.null_samples;
      const RFPair pair = rf_training_pair(z, rng, plan.shared_t);

      const TokenLayout layout = budget_layout(z.grid, budget, DropMode::Compacted);
      std::vector<double> t(layout.size());
      for (std::size_t i = 0; i < layout.size(); ++i) t[i] = pair.t_per_level[layout[i].level - 1];
      Tape<float> tape;
      Var<float> pred =
          model.forward(tape, tape.constant(pair.noisy.rows(layout)), t, cls, layout, budget, z.grid);
      Var<float> loss = velocity_loss(pred, tape.constant(pair.target.rows(layout)), direction);
      const double lv = loss.value()[0];
      STRATA_CHECK(std::isfinite(lv), "non-finite diffusion loss at step ", step, " (sample ", b, ")");
      tape.backward(scale(loss, inv_batch));
      step_loss += lv;
    }
    opt.step(params);
    for (auto* p : params) p->zero_grad();
    ++res.steps;
    res.losses.push_back(step_loss / plan.batch);
    window_loss += step_loss / plan.batch;
    ++window;

    if (step % plan.log_every == 0 || step == plan.steps) {
      nlohmann::json rec{{"step", step},
                         {"loss", window_loss / window},
                         {"null_fraction", static_cast<double>(res.null_samples) / res.samples}};
      if (metrics.is_open()) metrics << rec.dump() << "\n" << std::flush;
      if (log.on_log) log.on_log(rec);
      window_loss = 0;
      window = 0;
    }
  }
  return res;
}

}  // namespace strata
