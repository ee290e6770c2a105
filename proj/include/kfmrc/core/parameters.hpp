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
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/core/tensor.hpp"

namespace kfmrc::ad {

// Named trainable tensors in insertion order. Names are unique.
template <typename T>
class ParameterSet {
 public:
  // Returns a handle sharing the stored tensor.
  Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable = true) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    tensor.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, std::move(tensor)});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.tensor.requires_grad()) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Gaussian initialization N(0, stddev^2).
template <typename T, typename Rng>
Tensor<T> random_normal(Shape shape, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<T> values(shape_size(shape));
  for (T& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

// Glorot-style initialization for a [rows x cols] weight.
template <typename T, typename Rng>
Tensor<T> glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(rows + cols)));
  return random_normal<T>({rows, cols}, stddev, rng);
}

}  // namespace kfmrc::ad
