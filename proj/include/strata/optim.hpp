// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unordered_map>
#include <vector>

#include "strata/autograd.hpp"

namespace strata {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with bias correction and decoupled weight decay.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  /// One update of every parameter in `params` from its current gradient.
  /// Throws (naming the parameter) on a non-finite gradient, before any
  /// parameter is modified.
  void step(const std::vector<Parameter<T>*>& params);

  const AdamWConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps_taken() const noexcept { return step_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamWConfig cfg_;
  long step_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> state_;
};

}  // namespace strata
