// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strata/error.hpp"

namespace strata {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape);

/// Every tensor buffer starts on a 64-byte boundary. Vectorized reductions
/// peel a scalar head up to the first aligned element, so a fixed alignment
/// keeps their summation order, and therefore results, independent of where
/// the allocator happened to place the data.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Storage = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Value semantics; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, Storage<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_size();
  }
  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  Tensor(Shape shape, std::initializer_list<T> data)
      : shape_(std::move(shape)), data_(data) {
    check_size();
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T{1}) {
    Tensor out(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : out.data_) x = static_cast<T>(dist(rng)) * stddev;
    return out;
  }

  static Tensor uniform(Shape shape, std::mt19937_64& rng, T lo, T hi) {
    Tensor out(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : out.data_) x = static_cast<T>(dist(rng));
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // 2-D views; higher ranks fold leading dims into rows.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  Storage<T>& storage() noexcept { return data_; }
  const Storage<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  Tensor reshape(Shape shape) const& {
    Tensor out = *this;
    return std::move(out).reshape(std::move(shape));
  }
  Tensor reshape(Shape shape) && {
    STRATA_CHECK_SHAPE(numel(shape) == data_.size(), "cannot reshape ",
                       to_string(shape_), " to ", to_string(shape));
    shape_ = std::move(shape);
    return std::move(*this);
  }

  template <typename U>
  Tensor<U> cast() const {
    Storage<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor&) const = default;

 private:
  void check_size() const {
    STRATA_CHECK_SHAPE(numel(shape_) == data_.size(), "tensor data has ",
                       data_.size(), " values but shape ", to_string(shape_),
                       " needs ", numel(shape_));
  }

  Shape shape_;
  Storage<T> data_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  STRATA_CHECK_SHAPE(a.shape() == b.shape(), "max_abs_diff shape mismatch ",
                     to_string(a.shape()), " vs ", to_string(b.shape()));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.span().begin(), t.span().end(),
                     [](T v) { return std::isfinite(v); });
}

}  // namespace strata
