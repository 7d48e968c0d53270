// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Level-causal rectified-flow transformer over latent grids: velocity
// prediction, Euler sampling with classifier-free guidance, and
// coarse-to-fine refinement that caches finalized levels' keys/values.
//
// Time runs from t = 1 (noise) to t = 0 (data); x_t = (1 - t) z + t eps and
// the velocity target is eps - z.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "strata/checkpoint.hpp"
#include "strata/latent.hpp"
#include "strata/nn.hpp"

namespace strata {

struct DiTConfig {
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t layers = 6;
  std::size_t ffn_mult = 2;
  std::uint32_t levels = 4;    // n, must match the tokenizer
  std::size_t latent_dim = 8;  // d, must match the tokenizer
  int num_classes = 4;         // index num_classes is the null condition
  bool cross_attention = false;
  std::size_t cond_tokens = 1;  // condition tokens per class for cross-attention
  bool temporal_causal = true;
  RopeConfig rope;
  // Sampler defaults.
  int steps = 50;
  double cfg_scale = 6.0;
  double cfg_interval = 0.1;
  double shift = 1.0;

  void validate() const;
};

nlohmann::json to_json(const DiTConfig& cfg);
DiTConfig dit_config_from_json(const nlohmann::json& j);

/// Finalized levels' keys/values per block, computed at t = 0. The
/// unconditional copy is only filled when guidance is in use.
struct LevelKVCache {
  std::vector<BlockKV<float>> cond;
  std::vector<BlockKV<float>> uncond;
  std::uint32_t levels = 0;

  void clear() {
    cond.clear();
    uncond.clear();
    levels = 0;
  }
};

/// Keys/values read before the call's own tokens, and where to put the
/// call's own keys/values (both optional, one entry per block).
template <typename T>
struct DiTKV {
  const std::vector<BlockKV<T>>* prefix = nullptr;
  const TokenLayout* prefix_layout = nullptr;
  std::vector<BlockKV<T>>* out = nullptr;
};

template <typename T>
class DiT {
 public:
  DiT(const DiTConfig& cfg, std::uint64_t seed);
  DiT(const DiT&) = delete;
  DiT& operator=(const DiT&) = delete;

  const DiTConfig& config() const noexcept { return cfg_; }
  ParameterStore<T>& params() noexcept { return store_; }
  const ParameterStore<T>& params() const noexcept { return store_; }
  int null_class() const noexcept { return cfg_.num_classes; }

  /// Velocity rows [layout x d] for noisy rows `x` in layout order. `t` holds
  /// one timestep per row. Rows above the budget come out as zero.
  Var<T> forward(Tape<T>& tape, Var<T> x, std::span<const double> t, int class_id,
                 const TokenLayout& layout, const LevelBudget& budget, const GridDims& grid,
                 const DiTKV<T>& kv = {}, AttentionCounter* counter = nullptr) const;

 private:
  DiTConfig cfg_;
  ParameterStore<T> store_;
  std::vector<TransformerBlock<T>> blocks_;
  Parameter<T>* in_w_;
  Parameter<T>* in_b_;
  Parameter<T>* t_w1_;
  Parameter<T>* t_b1_;
  Parameter<T>* t_w2_;
  Parameter<T>* t_b2_;
  Parameter<T>* class_embed_;
  Parameter<T>* cond_embed_ = nullptr;
  std::vector<Parameter<T>*> ada_w_, ada_b_;
  Parameter<T>* final_norm_;
  Parameter<T>* final_ada_w_;
  Parameter<T>* final_ada_b_;
  Parameter<T>* out_w_;
  Parameter<T>* out_b_;
};

void save_dit(const DiT<float>& model, const std::string& dir);
std::unique_ptr<DiT<float>> load_dit(const std::string& dir);
std::unique_ptr<DiT<float>> dit_from_checkpoint(const Checkpoint& ckpt);

/// One forward pass over a latent grid; `t_per_level` has one entry per
/// level 1..n.
LatentGrid velocity(const DiT<float>& model, const LatentGrid& noisy,
                    std::span<const double> t_per_level, int class_id, const LevelBudget& budget);

// Rectified-flow training pairs ------------------------------------------------

/// sigmoid(N(0, 1)).
double sample_logit_normal(std::mt19937_64& rng);

struct RFPair {
  LatentGrid noisy;
  std::vector<double> t_per_level;
  LatentGrid target;
};

/// Per-level timesteps unless `shared_t`. Entries above the budget stay 0.
RFPair rf_training_pair(const LatentGrid& z, std::mt19937_64& rng, bool shared_t = false);

// Sampling ----------------------------------------------------------------------

struct SamplerOptions {
  int steps = 50;
  double cfg_scale = 6.0;
  double cfg_interval = 0.1;
  double shift = 1.0;

  static SamplerOptions defaults(const DiTConfig& cfg);
  void validate() const;
};

/// t_0 = 1 > t_1 > ... > t_steps = 0, uniform before the time warp
/// t -> shift t / (1 + (shift - 1) t).
std::vector<double> time_grid(int steps, double shift);

/// Euler integration of dx/dt = v(x, t) along `ts`.
template <typename T>
Tensor<T> euler_integrate(Tensor<T> x, std::span<const double> ts,
                          const std::function<Tensor<T>(const Tensor<T>&, double)>& v) {
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const Tensor<T> vel = v(x, ts[i]);
    const T dt = static_cast<T>(ts[i] - ts[i + 1]);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] -= dt * vel[j];
  }
  return x;
}

/// N(0, I) rows [patches x d] for one level. Depends only on (seed, level),
/// so one-shot and progressive generation start from the same noise.
Tensor<float> level_noise(std::uint64_t seed, std::uint32_t level, std::size_t patches,
                          std::size_t dim);

/// v_u + s (v_c - v_u) when guidance applies at t, else v_c. s = 1 returns
/// v_c and s = 0 returns v_u exactly.
Tensor<float> guide(const Tensor<float>& v_cond, const Tensor<float>* v_uncond, double scale);

/// True when the unconditional pass is needed at t.
bool guidance_active(const SamplerOptions& opt, int class_id, int null_class, double t);

/// Joint sampling of levels 1..m with one shared timestep.
LatentGrid sample(const DiT<float>& model, int class_id, std::uint32_t m, const GridDims& grid,
                  const SamplerOptions& opt, std::uint64_t seed, AttentionCounter* counter = nullptr);

// Progressive generation -----------------------------------------------------------

struct GenSession {
  std::string id;
  int class_id = 0;
  std::uint64_t seed = 0;
  GridDims grid;
  SamplerOptions options;
  std::uint32_t levels_done = 0;
  std::vector<Tensor<float>> latents;  // clean rows [patches x d] for levels 1..levels_done
  LevelKVCache cache;

  /// Latent grid with the finalized levels (budget levels_done).
  LatentGrid latent_grid(std::uint32_t n, std::size_t dim) const;
};

GenSession make_session(const DiT<float>& model, std::string id, int class_id, std::uint64_t seed,
                        const GridDims& grid, const SamplerOptions& opt);

struct RefineOptions {
  /// false recomputes lower-level keys/values at every velocity evaluation.
  bool use_cache = true;
  /// Counts attention pairs of velocity evaluations (cache fills excluded).
  AttentionCounter* counter = nullptr;
  /// Called with each step's (guided) velocity for the new level.
  std::function<void(int step, const Tensor<float>& v)> on_step;
};

/// Generates level levels_done + 1 with lower levels clean at t = 0.
void refine(const DiT<float>& model, GenSession& session, const RefineOptions& opt = {});

/// Recomputes the cache from the stored latents (after a restore).
void rebuild_cache(const DiT<float>& model, GenSession& session);

/// Session latents as a checkpoint (kind "session") and back. The cache is
/// not stored.
Checkpoint session_to_checkpoint(const GenSession& session);
GenSession session_from_checkpoint(const Checkpoint& ckpt);

}  // namespace strata
