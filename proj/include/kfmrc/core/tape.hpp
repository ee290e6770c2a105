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
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/core/tensor.hpp"

namespace kfmrc::ad {

template <typename T>
class Tape;

template <typename T>
inline thread_local Tape<T>* active_tape = nullptr;

// Eager reverse-mode tape. Ops executed while a Tape is active (see
// Recording) append one entry each; backward() replays the entries in exact
// reverse execution order.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(TensorStorage<T>& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<TensorStorage<T>> output, Backward fn) {
    entries_.push_back({std::move(output), std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw NumericError("backward() on non-finite loss");
    }
    auto& root = *loss.storage();
    if (!root.tracked) return;  // constant loss: nothing to propagate
    root.ensure_grad();
    root.grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      auto& out = *it->output;
      if (out.grad.empty()) continue;  // not on a path to the loss
      it->backward(out);
    }
  }

 private:
  struct Entry {
    std::shared_ptr<TensorStorage<T>> output;
    Backward backward;
  };
  std::vector<Entry> entries_;
};

// RAII guard that routes op recording to `tape` on this thread.
template <typename T>
class Recording {
 public:
  explicit Recording(Tape<T>& tape) : previous_(active_tape<T>) { active_tape<T> = &tape; }
  ~Recording() { active_tape<T> = previous_; }
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Tape<T>* previous_;
};

// RAII guard that suspends recording (inference).
template <typename T>
class NoGrad {
 public:
  NoGrad() : previous_(active_tape<T>) { active_tape<T> = nullptr; }
  ~NoGrad() { active_tape<T> = previous_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape<T>* previous_;
};

}  // namespace kfmrc::ad
