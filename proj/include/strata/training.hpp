// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Losses, level-budget sampling, latent perturbation and the staged
// training loops.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "strata/data.hpp"
#include "strata/diffusion.hpp"
#include "strata/optim.hpp"
#include "strata/tokenizer.hpp"

namespace strata {

struct LossWeights {
  double perceptual = 1.0;   // inert: no perceptual network is trained against
  double adversarial = 0.2;  // inert: no discriminator
  double margin_l2 = 0.001;
  double direction = 0.1;
  double margin = 1.0;

  void validate() const;
};

// Budgets -------------------------------------------------------------------

/// p(m) = m / (n (n + 1) / 2) for m = 1..n.
std::vector<double> level_budget_pmf(std::uint32_t n);
std::uint32_t sample_level(std::uint32_t n, std::mt19937_64& rng);
/// One draw per patch when `per_patch`, else one draw shared by all patches.
LevelBudget sample_level_budget(std::uint32_t n, std::size_t patches, std::mt19937_64& rng,
                                bool per_patch);

// Latent perturbation ---------------------------------------------------------

template <typename T>
struct LatentNoise {
  double lambda = 1.0;
  Tensor<T> offset;  // (1 - lambda) * eps, eps ~ N(0, sigma^2)
};

/// Draws lambda ~ U(0, 1) (unless forced) and the noise for one sample.
template <typename T>
LatentNoise<T> draw_latent_noise(const Shape& shape, std::mt19937_64& rng, double sigma,
                                 std::optional<double> lambda = std::nullopt);

/// lambda * z + (1 - lambda) * eps.
template <typename T>
Tensor<T> perturb_latents(const Tensor<T>& z, std::mt19937_64& rng, double sigma,
                          std::optional<double> lambda = std::nullopt);
template <typename T>
Var<T> perturb_latents(Var<T> z, const LatentNoise<T>& noise);

// Losses --------------------------------------------------------------------

/// mean(max(0, |z| - margin)^2)
template <typename T>
Var<T> l2_margin_loss(Var<T> z, T margin);

template <typename T>
struct TokenizerLoss {
  Var<T> total;
  Var<T> recon;
  Var<T> margin;
};

/// MSE reconstruction plus the weighted margin penalty on the latents.
template <typename T>
TokenizerLoss<T> tokenizer_loss(Var<T> pred, Var<T> gt, Var<T> z, const LossWeights& w);

/// MSE plus direction * (1 - mean row cosine).
template <typename T>
Var<T> velocity_loss(Var<T> pred, Var<T> target, T direction);

// Tokenizer training ----------------------------------------------------------

enum class StageKind { Symmetric, Asymmetric, Video };

struct TrainStage {
  std::string name;
  StageKind kind = StageKind::Symmetric;
  int steps = 0;
  /// Square image sizes drawn for input and target (independently when
  /// asymmetric). Each must be a multiple of the tokenizer's k.
  std::vector<int> sizes{32};
  /// Video stages: frame rates drawn for input and target, clip length in
  /// seconds fixed to `seconds`.
  std::vector<int> fps{2, 4};
  int seconds = 1;
};

struct TrainPlan {
  std::vector<TrainStage> stages;
  int batch = 8;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  LossWeights weights;
  bool denoise = false;
  double sigma = 3.0;
  bool freeze_encoder = false;
  int log_every = 100;
  std::size_t eval_scenes = 16;
  int eval_size = 32;

  int total_steps() const;
  void validate() const;
};

nlohmann::json to_json(const TrainPlan& plan);
TrainPlan train_plan_from_json(const nlohmann::json& j);

/// The scripted desk-scale plan: symmetric 32^2 pretraining followed by an
/// asymmetric multi-scale stage.
TrainPlan toy_tokenizer_plan(int steps = 5000);

/// Mean PSNR of full-budget encodes decoded with the first m levels, for
/// m = 1..n, at `size` x `size`.
std::vector<double> psnr_per_level(const Tokenizer<float>& tok, const std::vector<SceneSpec>& scenes,
                                   int size);

struct TrainLog {
  std::string metrics_path;                       // JSON lines; empty to skip
  std::function<void(const nlohmann::json&)> on_log;  // optional
};

struct TokenizerTrainResult {
  int steps = 0;
  std::uint64_t asymmetric_samples = 0;
  std::uint64_t asymmetric_pairs = 0;  // samples with input scale != target scale
  std::vector<double> initial_psnr;
  std::vector<double> final_psnr;
  std::vector<double> losses;  // per step
};

/// Trains in place. Throws on a non-finite loss, naming the step.
TokenizerTrainResult train_tokenizer(const TrainPlan& plan, Tokenizer<float>& tok,
                                     const std::vector<SceneSpec>& train,
                                     const std::vector<SceneSpec>& heldout, const TrainLog& log = {});

// Diffusion training ------------------------------------------------------------

struct DiTTrainPlan {
  int steps = 2000;
  int batch = 8;
  double lr = 3e-4;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double null_prob = 0.1;  // class dropped to the null condition
  bool shared_t = false;   // one timestep for every level instead of one per level
  double direction = 0.1;  // weight of the velocity cosine term
  int size = 32;           // square render size the corpus is encoded at
  int log_every = 100;

  void validate() const;
};

nlohmann::json to_json(const DiTTrainPlan& plan);
DiTTrainPlan dit_train_plan_from_json(const nlohmann::json& j);

/// The class to train on: the null class with probability `null_prob`.
int draw_condition(int class_id, int null_class, double null_prob, std::mt19937_64& rng);

struct DiTTrainResult {
  int steps = 0;
  std::uint64_t samples = 0;
  std::uint64_t null_samples = 0;
  std::vector<double> losses;  // per step
};

/// Encodes `train` with the frozen tokenizer at full budget, then trains the
/// velocity model in place with one level budget shared by all patches of a
/// sample. Throws on a non-finite loss, naming the step.
DiTTrainResult train_dit(const DiTTrainPlan& plan, DiT<float>& model, const Tokenizer<float>& tok,
                         const std::vector<SceneSpec>& train, const TrainLog& log = {});

}  // namespace strata
