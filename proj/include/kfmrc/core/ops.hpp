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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/core/tape.hpp"
#include "kfmrc/core/tensor.hpp"

// Differentiable ops over Tensor<T>. Every op validates shapes eagerly,
// rejects non-finite outputs, and records a backward closure on the active
// tape when at least one input is tracked.

namespace kfmrc::ad {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

template <typename T, typename Fn>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> values,
                 std::initializer_list<Tensor<T>> inputs, Fn&& backward) {
  check_finite(values, op);
  Tensor<T> out(std::move(shape), std::move(values));
  Tape<T>* tape = active_tape<T>;
  if (tape == nullptr) return out;
  bool any_tracked = false;
  for (const auto& in : inputs) any_tracked = any_tracked || in.tracked();
  if (any_tracked) {
    out.storage()->tracked = true;
    tape->record(out.storage(), std::forward<Fn>(backward));
  }
  return out;
}

template <typename T>
std::vector<T>* grad_of(const Tensor<T>& t) {
  if (!t.tracked()) return nullptr;
  t.storage()->ensure_grad();
  return &t.storage()->grad;
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()));
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  require(a.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

// Iteration plan for reducing or normalizing along one axis of a rank-1 or
// rank-2 tensor: `count` slices of length `length`, element k of slice s at
// offset(s) + k * stride.
struct AxisPlan {
  std::size_t length = 0;
  std::size_t count = 0;
  std::size_t stride = 0;
  std::size_t slice_step = 0;
  std::size_t offset(std::size_t s) const { return s * slice_step; }
};

inline AxisPlan axis_plan(const Shape& shape, std::size_t axis, const char* op) {
  require(shape.size() == 1 || shape.size() == 2,
          std::string(op) + ": only rank-1 and rank-2 tensors are supported");
  require(axis < shape.size(), std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  if (shape.size() == 1) return {shape[0], 1, 1, 0};
  if (axis == 1) return {shape[1], shape[0], 1, shape[1]};
  return {shape[0], shape[1], shape[1], 1};
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.clone();
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_size(shape) == x.size(),
                  "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  return detail::finish<T>("reshape", std::move(shape), x.data(), {x}, [x](TensorStorage<T>& out) {
    if (auto* g = detail::grad_of(x)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> values(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) values[j * r + i] = a.data()[i * c + j];
  return detail::finish<T>("transpose", {c, r}, std::move(values), {a}, [a, r, c](TensorStorage<T>& out) {
    if (auto* g = detail::grad_of(a)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += out.grad[j * r + i];
    }
  });
}

// Concatenation along `axis` (rank 1: axis 0; rank 2: axis 0 or 1).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no parts");
  const std::size_t rank = parts.front().rank();
  detail::require(rank == 1 || rank == 2, "concat: only rank-1 and rank-2 tensors are supported");
  detail::require(axis < rank, "concat: axis out of range");
  for (const auto& p : parts) {
    detail::require(p.rank() == rank, "concat: rank mismatch");
    if (rank == 2) {
      const std::size_t other = 1 - axis;
      detail::require(p.dim(other) == parts.front().dim(other),
                      "concat: non-axis dimension mismatch " + shape_string(p.shape()) + " vs " +
                          shape_string(parts.front().shape()));
    }
  }
  Shape shape = parts.front().shape();
  shape[axis] = 0;
  for (const auto& p : parts) shape[axis] += p.dim(axis);

  std::vector<T> values(shape_size(shape));
  // Column offsets (axis 1) or row offsets (axis 0, and rank 1).
  std::vector<std::size_t> offsets;
  std::size_t acc = 0;
  for (const auto& p : parts) {
    offsets.push_back(acc);
    acc += p.dim(axis);
  }
  const bool by_column = rank == 2 && axis == 1;
  const std::size_t out_cols = rank == 2 ? shape[1] : 1;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].data();
    if (by_column) {
      const std::size_t pc = parts[k].dim(1);
      for (std::size_t r = 0; r < shape[0]; ++r)
        std::copy_n(src.begin() + r * pc, pc, values.begin() + r * out_cols + offsets[k]);
    } else {
      std::copy(src.begin(), src.end(), values.begin() + offsets[k] * out_cols);
    }
  }
  std::vector<Tensor<T>> captured = parts;
  auto backward = [captured, offsets, by_column, out_cols, shape](TensorStorage<T>& out) {
    for (std::size_t k = 0; k < captured.size(); ++k) {
      auto* g = detail::grad_of(captured[k]);
      if (!g) continue;
      if (by_column) {
        const std::size_t pc = captured[k].dim(1);
        for (std::size_t r = 0; r < shape[0]; ++r)
          for (std::size_t c = 0; c < pc; ++c) (*g)[r * pc + c] += out.grad[r * out_cols + offsets[k] + c];
      } else {
        const std::size_t base = offsets[k] * out_cols;
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[base + i];
      }
    }
  };
  detail::check_finite(values, "concat");
  Tensor<T> out(shape, std::move(values));
  if (Tape<T>* tape = active_tape<T>) {
    bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor<T>& p) { return p.tracked(); });
    if (any) {
      out.storage()->tracked = true;
      tape->record(out.storage(), std::move(backward));
    }
  }
  return out;
}

// Contiguous slice [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require(x.rank() == 1 || x.rank() == 2, "slice: only rank-1 and rank-2 tensors are supported");
  detail::require(axis < x.rank(), "slice: axis out of range");
  detail::require(begin < end && end <= x.dim(axis), "slice: range [" + std::to_string(begin) + ", " +
                                                         std::to_string(end) + ") invalid for " +
                                                         shape_string(x.shape()));
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::vector<T> values(shape_size(shape));
  const std::size_t cols = x.cols();
  const bool by_column = x.rank() == 2 && axis == 1;
  if (by_column) {
    const std::size_t w = end - begin;
    for (std::size_t r = 0; r < x.dim(0); ++r)
      std::copy_n(x.data().begin() + r * cols + begin, w, values.begin() + r * w);
  } else {
    const std::size_t stride = x.rank() == 2 ? cols : 1;
    std::copy_n(x.data().begin() + begin * stride, values.size(), values.begin());
  }
  return detail::finish<T>("slice", shape, std::move(values), {x},
                           [x, begin, end, by_column, cols](TensorStorage<T>& out) {
                             auto* g = detail::grad_of(x);
                             if (!g) return;
                             if (by_column) {
                               const std::size_t w = end - begin;
                               for (std::size_t r = 0; r < x.dim(0); ++r)
                                 for (std::size_t c = 0; c < w; ++c)
                                   (*g)[r * cols + begin + c] += out.grad[r * w + c];
                             } else {
                               const std::size_t stride = x.rank() == 2 ? cols : 1;
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 (*g)[begin * stride + i] += out.grad[i];
                             }
                           });
}

// Row `i` of a matrix as a rank-1 tensor.
template <typename T>
Tensor<T> row(const Tensor<T>& x, std::size_t i) {
  detail::require_matrix(x, "row");
  return reshape(slice(x, 0, i, i + 1), {x.dim(1)});
}

// Rows of `table` selected by `ids` (embedding lookup); gradients scatter-add.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids) {
  detail::require_matrix(table, "gather_rows");
  detail::require(!ids.empty(), "gather_rows: empty index list");
  const std::size_t d = table.dim(1);
  std::vector<T> values(ids.size() * d);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= table.dim(0)) {
      throw DimensionError("gather_rows: index " + std::to_string(ids[k]) + " out of range for " +
                           std::to_string(table.dim(0)) + " rows");
    }
    std::copy_n(table.data().begin() + ids[k] * d, d, values.begin() + k * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::finish<T>("gather_rows", {idx.size(), d}, std::move(values), {table},
                           [table, idx, d](TensorStorage<T>& out) {
                             auto* g = detail::grad_of(table);
                             if (!g) return;
                             for (std::size_t k = 0; k < idx.size(); ++k)
                               for (std::size_t c = 0; c < d; ++c) (*g)[idx[k] * d + c] += out.grad[k * d + c];
                           });
}

// A [total_rows x d] matrix that is zero except row idx[k] = src row k.
template <typename T>
Tensor<T> scatter_rows(std::size_t total_rows, std::span<const std::size_t> idx, const Tensor<T>& src) {
  detail::require_matrix(src, "scatter_rows");
  detail::require(idx.size() == src.dim(0), "scatter_rows: index count does not match source rows");
  const std::size_t d = src.dim(1);
  std::vector<T> values(total_rows * d, T(0));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    detail::require(idx[k] < total_rows, "scatter_rows: index out of range");
    std::copy_n(src.data().begin() + k * d, d, values.begin() + idx[k] * d);
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return detail::finish<T>("scatter_rows", {total_rows, d}, std::move(values), {src},
                           [src, rows, d](TensorStorage<T>& out) {
                             auto* g = detail::grad_of(src);
                             if (!g) return;
                             for (std::size_t k = 0; k < rows.size(); ++k)
                               for (std::size_t c = 0; c < d; ++c) (*g)[k * d + c] += out.grad[rows[k] * d + c];
                           });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  detail::require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ " + shape_string(a.shape()) +
                                            " x " + shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> values(m * n);
  detail::MutMap<T>(values.data(), m, n).noalias() =
      detail::ConstMap<T>(a.data().data(), m, k) * detail::ConstMap<T>(b.data().data(), k, n);
  return detail::finish<T>("matmul", {m, n}, std::move(values), {a, b}, [a, b, m, k, n](TensorStorage<T>& out) {
    detail::ConstMap<T> gc(out.grad.data(), m, n);
    if (auto* ga = detail::grad_of(a)) {
      detail::MutMap<T>(ga->data(), m, k).noalias() += gc * detail::ConstMap<T>(b.data().data(), k, n).transpose();
    }
    if (auto* gb = detail::grad_of(b)) {
      detail::MutMap<T>(gb->data(), k, n).noalias() += detail::ConstMap<T>(a.data().data(), m, k).transpose() * gc;
    }
  });
}

// Inner product of two rank-1 tensors, as a scalar tensor.
template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 1 && b.rank() == 1, "dot: expected vectors");
  detail::require_same_shape(a, b, "dot");
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return detail::finish<T>("dot", {1}, {s}, {a, b}, [a, b](TensorStorage<T>& out) {
    const T g = out.grad[0];
    if (auto* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g * b[i];
    if (auto* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < b.size(); ++i) (*gb)[i] += g * a[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

// a + b for equal shapes, or a matrix plus a row vector (trailing-dim
// broadcast of b). No other broadcasting is accepted.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool row_broadcast = a.rank() == 2 && b.rank() == 1 && b.size() == a.cols();
  detail::require(same || row_broadcast,
                  "add: shape mismatch " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  std::vector<T> values(a.data());
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += b.data()[i % n];
  return detail::finish<T>("add", a.shape(), std::move(values), {a, b}, [a, b, n](TensorStorage<T>& out) {
    if (auto* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*ga)[i] += out.grad[i];
    if (auto* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*gb)[i % n] += out.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> values(a.data());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= b[i];
  return detail::finish<T>("sub", a.shape(), std::move(values), {a, b}, [a, b](TensorStorage<T>& out) {
    if (auto* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*ga)[i] += out.grad[i];
    if (auto* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*gb)[i] -= out.grad[i];
  });
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> values(a.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a[i] * b[i];
  return detail::finish<T>("mul", a.shape(), std::move(values), {a, b}, [a, b](TensorStorage<T>& out) {
    if (auto* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*ga)[i] += out.grad[i] * b[i];
    if (auto* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*gb)[i] += out.grad[i] * a[i];
  });
}

// x scaled by a one-element tensor s.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s) {
  detail::require(s.size() == 1, "scale: factor must hold exactly one value");
  const T f = s.item();
  std::vector<T> values(x.data());
  for (T& v : values) v *= f;
  return detail::finish<T>("scale", x.shape(), std::move(values), {x, s}, [x, s, f](TensorStorage<T>& out) {
    if (auto* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*gx)[i] += out.grad[i] * f;
    if (auto* gs = detail::grad_of(s)) {
      T acc = T(0);
      for (std::size_t i = 0; i < out.grad.size(); ++i) acc += out.grad[i] * x[i];
      (*gs)[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> values(x.data());
  for (T& v : values) v *= factor;
  return detail::finish<T>("scale", x.shape(), std::move(values), {x}, [x, factor](TensorStorage<T>& out) {
    if (auto* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*gx)[i] += out.grad[i] * factor;
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

namespace detail {

// Applies f elementwise; df maps (input, output) to the local derivative.
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  std::vector<T> values(x.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = f(x[i]);
  return finish<T>(op, x.shape(), std::move(values), {x}, [x, df](TensorStorage<T>& out) {
    if (auto* g = grad_of(x))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i] * df(x[i], out.values[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x, [](T v) { return detail::sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return detail::unary<T>(
      "gelu", x, [](T v) { return detail::gelu_value(v); }, [](T v, T) { return detail::gelu_derivative(v); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0))) throw NumericError("log: non-positive input");
  }
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// max(x, floor) elementwise; the gradient is zero where the floor is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
  return detail::unary<T>(
      "clamp_min", x, [floor](T v) { return v > floor ? v : floor; },
      [floor](T v, T) { return v > floor ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  return detail::finish<T>("sum", {1}, {s}, {x}, [x](TensorStorage<T>& out) {
    if (auto* g = detail::grad_of(x))
      for (T& v : *g) v += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Sum along `axis`; the axis is removed (rank 1 reduces to shape [1]).
template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  const detail::AxisPlan plan = detail::axis_plan(x.shape(), axis, "sum");
  detail::require(plan.length > 0, "sum: empty axis");
  std::vector<T> values(plan.count, T(0));
  for (std::size_t s = 0; s < plan.count; ++s)
    for (std::size_t k = 0; k < plan.length; ++k) values[s] += x[plan.offset(s) + k * plan.stride];
  Shape shape = x.rank() == 1 ? Shape{1} : Shape{plan.count};
  return detail::finish<T>("sum", shape, std::move(values), {x}, [x, plan](TensorStorage<T>& out) {
    if (auto* g = detail::grad_of(x))
      for (std::size_t s = 0; s < plan.count; ++s)
        for (std::size_t k = 0; k < plan.length; ++k) (*g)[plan.offset(s) + k * plan.stride] += out.grad[s];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  const detail::AxisPlan plan = detail::axis_plan(x.shape(), axis, "mean");
  return scale(sum(x, axis), T(1) / static_cast<T>(plan.length));
}

// ---------------------------------------------------------------------------
// Normalizations

// Softmax along `axis` with max subtraction. Positions where `mask` is zero
// (mask indexed along the axis, shared by all slices) receive probability 0.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis, std::span<const std::uint8_t> mask = {}) {
  const detail::AxisPlan plan = detail::axis_plan(x.shape(), axis, "softmax");
  detail::require(mask.empty() || mask.size() == plan.length, "softmax: mask length does not match axis");
  auto keep = [&mask](std::size_t k) { return mask.empty() || mask[k] != 0; };
  std::vector<T> values(x.size(), T(0));
  for (std::size_t s = 0; s < plan.count; ++s) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < plan.length; ++k)
      if (keep(k)) mx = std::max(mx, x[plan.offset(s) + k * plan.stride]);
    if (mx == -std::numeric_limits<T>::infinity()) throw DimensionError("softmax: every position is masked");
    T z = T(0);
    for (std::size_t k = 0; k < plan.length; ++k) {
      if (!keep(k)) continue;
      const std::size_t i = plan.offset(s) + k * plan.stride;
      values[i] = std::exp(x[i] - mx);
      z += values[i];
    }
    for (std::size_t k = 0; k < plan.length; ++k) values[plan.offset(s) + k * plan.stride] /= z;
  }
  return detail::finish<T>("softmax", x.shape(), std::move(values), {x}, [x, plan](TensorStorage<T>& out) {
    auto* g = detail::grad_of(x);
    if (!g) return;
    for (std::size_t s = 0; s < plan.count; ++s) {
      T inner = T(0);
      for (std::size_t k = 0; k < plan.length; ++k) {
        const std::size_t i = plan.offset(s) + k * plan.stride;
        inner += out.values[i] * out.grad[i];
      }
      for (std::size_t k = 0; k < plan.length; ++k) {
        const std::size_t i = plan.offset(s) + k * plan.stride;
        (*g)[i] += out.values[i] * (out.grad[i] - inner);
      }
    }
  });
}

// -log softmax(logits)[target] over unmasked positions of a vector.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> mask, std::size_t target) {
  detail::require(logits.rank() == 1, "cross_entropy: logits must be a vector");
  detail::require(mask.empty() || mask.size() == logits.size(), "cross_entropy: mask length mismatch");
  detail::require(target < logits.size(), "cross_entropy: target out of range");
  auto keep = [&mask](std::size_t k) { return mask.empty() || mask[k] != 0; };
  detail::require(keep(target), "cross_entropy: target position is masked");
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (keep(k)) mx = std::max(mx, logits[k]);
  T z = T(0);
  std::vector<T> probs(logits.size(), T(0));
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (!keep(k)) continue;
    probs[k] = std::exp(logits[k] - mx);
    z += probs[k];
  }
  for (T& p : probs) p /= z;
  const T loss = -(logits[target] - mx - std::log(z));
  return detail::finish<T>("cross_entropy", {1}, {loss}, {logits},
                           [logits, probs, target](TensorStorage<T>& out) {
                             auto* g = detail::grad_of(logits);
                             if (!g) return;
                             for (std::size_t k = 0; k < probs.size(); ++k)
                               (*g)[k] += out.grad[0] * (probs[k] - (k == target ? T(1) : T(0)));
                           });
}

// Mean binary cross-entropy of probabilities p against 0/1 labels, with p
// clamped to [eps, 1 - eps] (zero gradient where the clamp is active).
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, std::span<const T> labels, T eps = T(1e-7)) {
  detail::require(labels.size() == p.size(), "binary_cross_entropy: label count mismatch");
  const T n = static_cast<T>(p.size());
  T loss = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T q = std::clamp(p[i], eps, T(1) - eps);
    loss -= labels[i] * std::log(q) + (T(1) - labels[i]) * std::log(T(1) - q);
  }
  std::vector<T> y(labels.begin(), labels.end());
  return detail::finish<T>("binary_cross_entropy", {1}, {loss / n}, {p}, [p, y, eps, n](TensorStorage<T>& out) {
    auto* g = detail::grad_of(p);
    if (!g) return;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const T v = p[i];
      if (v <= eps || v >= T(1) - eps) continue;
      (*g)[i] += out.grad[0] * (-y[i] / v + (T(1) - y[i]) / (T(1) - v)) / n;
    }
  });
}

// Row-wise layer normalization over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-12)) {
  const std::size_t d = x.cols();
  detail::require(gain.rank() == 1 && gain.size() == d && bias.rank() == 1 && bias.size() == d,
                  "layer_norm: gain/bias must be vectors of the feature width");
  const std::size_t rows = x.size() / d;
  std::vector<T> normalized(x.size());
  std::vector<T> inv_std(rows);
  std::vector<T> values(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = T(0);
    for (std::size_t c = 0; c < d; ++c) mu += x[r * d + c];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) {
      const T t = x[r * d + c] - mu;
      var += t * t;
    }
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normalized[r * d + c] = (x[r * d + c] - mu) * inv_std[r];
      values[r * d + c] = gain[c] * normalized[r * d + c] + bias[c];
    }
  }
  return detail::finish<T>(
      "layer_norm", x.shape(), std::move(values), {x, gain, bias},
      [x, gain, bias, normalized, inv_std, d, rows](TensorStorage<T>& out) {
        auto* gx = detail::grad_of(x);
        auto* gg = detail::grad_of(gain);
        auto* gb = detail::grad_of(bias);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_g = T(0), mean_gx = T(0);
          for (std::size_t c = 0; c < d; ++c) {
            const T gn = out.grad[r * d + c] * gain[c];
            mean_g += gn;
            mean_gx += gn * normalized[r * d + c];
            if (gg) (*gg)[c] += out.grad[r * d + c] * normalized[r * d + c];
            if (gb) (*gb)[c] += out.grad[r * d + c];
          }
          if (!gx) continue;
          mean_g /= static_cast<T>(d);
          mean_gx /= static_cast<T>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const T gn = out.grad[r * d + c] * gain[c];
            (*gx)[r * d + c] += inv_std[r] * (gn - mean_g - normalized[r * d + c] * mean_gx);
          }
        }
      });
}

// Cosine similarity of two vectors; both norms must exceed eps.
template <typename T>
Tensor<T> cosine(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-12)) {
  detail::require(a.rank() == 1 && b.rank() == 1, "cosine: expected vectors");
  detail::require_same_shape(a, b, "cosine");
  T ab = T(0), aa = T(0), bb = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const T na = std::sqrt(aa), nb = std::sqrt(bb);
  if (!(na > eps) || !(nb > eps)) throw NumericError("cosine: degenerate (near-zero) vector");
  const T c = std::clamp(ab / (na * nb), T(-1), T(1));
  return detail::finish<T>("cosine", {1}, {c}, {a, b}, [a, b, na, nb, c](TensorStorage<T>& out) {
    const T g = out.grad[0];
    if (auto* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < a.size(); ++i) (*ga)[i] += g * (b[i] / (na * nb) - c * a[i] / (na * na));
    if (auto* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < b.size(); ++i) (*gb)[i] += g * (a[i] / (na * nb) - c * b[i] / (nb * nb));
  });
}

// Inverted dropout; identity when rate is zero.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng) {
  if (rate <= T(0)) return x;
  detail::require(rate < T(1), "dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  std::vector<T> mask(x.size());
  for (T& m : mask) m = keep(rng) ? T(1) / (T(1) - rate) : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace kfmrc::ad
