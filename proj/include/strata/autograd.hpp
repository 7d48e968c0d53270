// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>

#include "strata/tensor.hpp"

namespace strata {

template <typename T>
class Tape;

/// Trainable tensor with an accumulated gradient. Gradients are only ever
/// added to; call zero_grad() between optimizer steps.
template <typename T>
struct Parameter {
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Linear record of operations, replayed in reverse for gradients. Node ids
/// increase in creation order, so reverse id order is a valid topological
/// order.
template <typename T>
class Tape {
 public:
  /// Called with the gradient of the node's output; must route it to inputs
  /// via accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}, nullptr); }

  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var<T> variable(Tensor<T> value) {
    return push(std::move(value), record_, {}, nullptr);
  }

  /// Leaf bound to a Parameter; backward() adds its gradient into the
  /// Parameter. Repeated calls for one Parameter return the same node.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      return {this, it->second};
    }
    Var<T> v = push(p.value, record_, {}, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  /// Records an op output. `inputs` decide whether it needs a gradient.
  Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  /// Same as emit() for ops with a variable number of inputs.
  Var<T> emit_n(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of a node after backward(); zeros if it received none.
  const Tensor<T>& grad(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Adds `g` into the gradient slot of `v` (no-op for constants).
  void accumulate(Var<T> v, const Tensor<T>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      n.grad = std::move(n.grad).reshape(n.value.shape());
      return;
    }
    T* dst = n.grad.data();
    const T* src = g.data();
    for (std::size_t i = 0, e = n.grad.size(); i < e; ++i) dst[i] += src[i];
  }

  /// Direct access to a gradient slot for ops that scatter into it. Returns
  /// nullptr for constants.
  Tensor<T>* grad_slot(Var<T> v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  /// Reverse pass from a scalar loss; parameter gradients accumulate (+=).
  void backward(Var<T> loss) {
    STRATA_CHECK(record_, "backward() on a tape that does not record gradients");
    const Tensor<T>& lv = nodes_.at(loss.id).value;
    STRATA_CHECK(lv.size() == 1, "backward() needs a scalar loss, got shape ",
                 to_string(lv.shape()));
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor<T>(lv.shape(), T{1});
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        n.backward(*this, n.grad);
        // Intermediate gradients are not needed past this point.
        n.grad = Tensor<T>();
        n.backward = nullptr;
      } else if (n.param != nullptr) {
        T* dst = n.param->grad.data();
        const T* src = n.grad.data();
        for (std::size_t j = 0, e = n.grad.size(); j < e; ++j) dst[j] += src[j];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn), p});
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::uint32_t> param_nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

}  // namespace strata
