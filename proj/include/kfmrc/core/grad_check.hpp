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
#include <functional>
#include <string>
#include <vector>

#include "kfmrc/core/ops.hpp"
#include "kfmrc/core/tape.hpp"

namespace kfmrc::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Relative error with a floor on the denominator so that entries whose
// true gradient is ~0 are judged on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of `loss_fn` with central differences of
// step h for every coordinate of every tensor in `params` (or every
// `stride`-th coordinate, to bound cost on large tables).
template <typename T>
GradCheckResult grad_check(const std::vector<std::pair<std::string, Tensor<T>>>& params,
                           const std::function<Tensor<T>()>& loss_fn, double h = 1e-5,
                           std::size_t stride = 1) {
  for (const auto& entry : params) {
    Tensor<T> handle = entry.second;
    handle.zero_grad();
  }
  {
    Tape<T> tape;
    Recording<T> rec(tape);
    Tensor<T> loss = loss_fn();
    tape.backward(loss);
  }
  GradCheckResult result;
  for (const auto& [name, p] : params) {
    Tensor<T> param = p;
    auto values = param.mutable_values();
    std::vector<T> analytic(param.grad().begin(), param.grad().end());
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const T saved = values[i];
      values[i] = saved + static_cast<T>(h);
      const double plus = static_cast<double>(loss_fn().item());
      values[i] = saved - static_cast<T>(h);
      const double minus = static_cast<double>(loss_fn().item());
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(static_cast<double>(analytic[i]), numeric);
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_tensor = name;
        result.worst_index = i;
        result.analytic = static_cast<double>(analytic[i]);
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace kfmrc::ad
