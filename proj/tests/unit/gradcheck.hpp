// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference oracle, independent of the reverse pass.

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "strata/autograd.hpp"
#include "strata/ops.hpp"

namespace strata::testing {

using Builder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Evaluates the builder on fresh tapes; returns the scalar loss.
inline double eval_loss(const std::vector<Tensor<double>>& inputs, const Builder& f) {
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value()[0];
}

/// Reduces an arbitrary output to a scalar by a fixed random projection so
/// every output element contributes to the checked gradient.
inline Var<double> project(Var<double> out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = Tensor<double>::uniform(out.shape(), rng, -1.0, 1.0);
  return sum(mul(out, out.tape->constant(std::move(w))));
}

/// Largest relative error ||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||, tiny)
/// across inputs.
inline double grad_check(const std::vector<Tensor<double>>& inputs, const Builder& f,
                         double step = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(f(tape, vars));

  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& analytic = tape.grad(vars[i]);
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      std::vector<Tensor<double>> plus = inputs, minus = inputs;
      plus[i][j] += step;
      minus[i][j] -= step;
      const double fd = (eval_loss(plus, f) - eval_loss(minus, f)) / (2 * step);
      const double a = analytic[j];
      diff2 += (a - fd) * (a - fd);
      a2 += a * a;
      n2 += fd * fd;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::randn(std::move(shape), rng, scale);
}

}  // namespace strata::testing
