// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Weight files: a directory holding manifest.json (format version, kind,
// architecture config, tensor index) and weights.bin (little-endian f32
// tensors concatenated in index order). The same layout stores session
// latent snapshots.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "strata/latent.hpp"
#include "strata/nn.hpp"
#include "strata/tensor.hpp"

namespace strata {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  void add(std::string name, Tensor<float> value) { tensors.emplace_back(std::move(name), std::move(value)); }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

/// Every parameter of `store`, in registration order.
Checkpoint checkpoint_from_params(const ParameterStore<float>& store, std::string kind,
                                  nlohmann::json config);

/// Copies tensors into `store`. Names and shapes must match exactly, with
/// no missing or extra entries.
void load_params(ParameterStore<float>& store, const Checkpoint& ckpt);

/// A latent grid as a checkpoint of kind "latents" (tensor "values", with
/// grid, n, d and per-patch budget in the config) and back.
Checkpoint latents_to_checkpoint(const LatentGrid& z);
LatentGrid latents_from_checkpoint(const Checkpoint& ckpt);

}  // namespace strata
