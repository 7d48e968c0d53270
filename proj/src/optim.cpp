// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/optim.hpp"

#include <cmath>

namespace strata {

template <typename T>
void AdamW<T>::step(const std::vector<Parameter<T>*>& params) {
  for (const Parameter<T>* p : params) {
    for (T g : p->grad.span()) {
      STRATA_CHECK(std::isfinite(g), "non-finite gradient in parameter '", p->name, "'");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (Parameter<T>* p : params) {
    Moments& st = state_[p];
    if (st.m.size() != p->value.size()) {
      st.m.assign(p->value.size(), 0.0);
      st.v.assign(p->value.size(), 0.0);
    }
    T* w = p->value.data();
    const T* g = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      double wi = static_cast<double>(w[i]);
      wi -= cfg_.lr * cfg_.weight_decay * wi;
      wi -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace strata
