// Copyright 2026 The kfmrc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kfmrc/core/errors.hpp"

namespace kfmrc::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  // True when a gradient must flow through this tensor: it is a trainable
  // leaf or was produced by a recorded op with such an input.
  bool tracked = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

// Dense row-major tensor with shared storage. Copies alias the same data,
// matching the usual handle semantics of autodiff frameworks.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : storage_(std::make_shared<TensorStorage<T>>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_string(shape));
    }
    storage_->shape = std::move(shape);
    storage_->values = std::move(values);
    storage_->requires_grad = requires_grad;
    storage_->tracked = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor filled(Shape shape, T value) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t size() const { return storage_->values.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  // Row/column view: rank-1 tensors behave as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : storage_->shape[0]; }
  std::size_t cols() const { return storage_->shape.back(); }

  std::span<const T> values() const { return storage_->values; }
  std::span<T> mutable_values() { return storage_->values; }
  const std::vector<T>& data() const { return storage_->values; }

  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return storage_->values[0];
  }
  T operator[](std::size_t i) const { return storage_->values[i]; }
  T at(std::size_t r, std::size_t c) const { return storage_->values[r * cols() + c]; }

  bool requires_grad() const { return storage_->requires_grad; }
  bool tracked() const { return storage_->tracked; }
  void set_requires_grad(bool on) {
    storage_->requires_grad = on;
    storage_->tracked = on;
  }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad() const { return storage_->grad; }
  std::span<T> mutable_grad() {
    storage_->ensure_grad();
    return storage_->grad;
  }
  void zero_grad() { storage_->grad.assign(storage_->values.size(), T(0)); }
  void clear_grad() { storage_->grad.clear(); }

  // Detached deep copy.
  Tensor clone() const { return Tensor(shape(), storage_->values, false); }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return storage_; }

 private:
  std::shared_ptr<TensorStorage<T>> storage_;
};

}  // namespace kfmrc::ad
