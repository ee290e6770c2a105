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

#include <cmath>
#include <vector>

#include "kfmrc/core/parameters.hpp"

namespace kfmrc::ad {

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over every trainable entry of a ParameterSet. Moment buffers follow
// the set's insertion order, so the set must not grow after construction.
template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig config) : params_(params), config_(config) {
    for (const auto& e : params_.entries()) {
      first_.emplace_back(e.tensor.size(), T(0));
      second_.emplace_back(e.tensor.size(), T(0));
    }
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    auto& entries = params_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      auto& t = entries[k].tensor;
      if (!t.requires_grad() || !t.has_grad()) continue;
      auto values = t.mutable_values();
      auto grad = t.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        first_[k][i] = static_cast<T>(config_.beta1 * first_[k][i] + (1.0 - config_.beta1) * g);
        second_[k][i] = static_cast<T>(config_.beta2 * second_[k][i] + (1.0 - config_.beta2) * g * g);
        const double m_hat = first_[k][i] / c1;
        const double v_hat = second_[k][i] / c2;
        values[i] -= static_cast<T>(config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon));
      }
    }
  }

  long steps() const { return steps_; }

 private:
  ParameterSet<T>& params_;
  AdamConfig config_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  long steps_ = 0;
};

}  // namespace kfmrc::ad
