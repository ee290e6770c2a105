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
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "kfmrc/core/adam.hpp"
#include "kfmrc/core/tape.hpp"
#include "kfmrc/harness/model.hpp"

namespace kfmrc::harness {

struct TrainConfig {
  double lr = 5e-5;
  std::size_t batch = 16;
  std::size_t epochs = 2;
  std::size_t max_steps = 0;  // 0: no cap beyond the epoch count
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("train: learning rate must be finite and non-negative");
    if (batch == 0) throw Error("train: batch size must be positive");
    if (epochs == 0 && max_steps == 0) throw Error("train: epochs must be positive");
  }
};

inline json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},       {"batch", c.batch}, {"epochs", c.epochs},   {"max_steps", c.max_steps},
          {"seed", c.seed},   {"beta1", c.beta1}, {"beta2", c.beta2},     {"epsilon", c.epsilon}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.max_steps = j.at("max_steps").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return c;
}

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double answer = 0.0;
  double support = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::size_t degenerate = 0;

  friend bool operator==(const StepLog&, const StepLog&) = default;
};

// Parameters hold the values from before the failing step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t step, const std::string& why)
      : NumericError("training aborted at step " + std::to_string(step) + ": " + why), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

inline std::size_t planned_steps(std::size_t examples, const TrainConfig& cfg) {
  const std::size_t per_epoch = (examples + cfg.batch - 1) / cfg.batch;
  if (cfg.max_steps && cfg.epochs == 0) return cfg.max_steps;
  const std::size_t by_epochs = per_epoch * cfg.epochs;
  return cfg.max_steps ? std::min(cfg.max_steps, by_epochs) : by_epochs;
}

// Mini-batch Adam on L = L_A + lambda * L_S. Batches come from a seeded
// shuffle per epoch; dropout draws from a second seeded stream.
class Trainer {
 public:
  Trainer(Model& model, const std::vector<PreparedExample>& data, TrainConfig cfg)
      : model_(model), data_(data), cfg_(cfg),
        adam_(model.params(), {cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon}),
        shuffle_rng_(cfg.seed), dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
    if (data_.empty()) throw Error("train: empty dataset");
    for (const auto& ex : data_)
      if (!ex.has_gold) throw ValidationError("train: record '" + ex.id + "' has no gold positions within the window");
  }

  std::size_t total_steps() const { return planned_steps(data_.size(), cfg_); }

  std::vector<StepLog> run(const std::function<void(const StepLog&)>& on_step = {}) {
    std::vector<StepLog> log;
    const std::size_t limit = total_steps();
    std::vector<std::size_t> order(data_.size());
    std::size_t epoch = 0;
    while (step_ < limit) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), shuffle_rng_);
      for (std::size_t b = 0; b < order.size() && step_ < limit; b += cfg_.batch) {
        const std::size_t e = std::min(order.size(), b + cfg_.batch);
        StepLog entry = step(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                      order.begin() + static_cast<std::ptrdiff_t>(e)));
        entry.epoch = epoch;
        log.push_back(entry);
        if (on_step) on_step(entry);
      }
      ++epoch;
    }
    return log;
  }

  std::size_t steps_done() const { return step_; }

 private:
  StepLog step(const std::vector<std::size_t>& batch) {
    auto& params = model_.params();
    params.zero_grad();
    StepLog entry;
    entry.step = step_;
    try {
      ad::Tape<Real> tape;
      ad::Recording<Real> recording(tape);
      std::vector<ExampleLoss> losses;
      for (std::size_t i : batch) {
        const auto& ex = data_[i];
        const ForwardPass f = model_.forward(ex, encoder::Mode::kTrain, &dropout_rng_);
        losses.push_back(model_.loss(ex, f));
      }
      const BatchLoss l = combine(losses);
      entry.answer = l.answer.item();
      entry.support = l.support.item();
      entry.lambda = l.lambda.item();
      entry.total = l.total.item();
      entry.degenerate = l.degenerate;
      tape.backward(l.total);
    } catch (const NumericError& e) {
      throw TrainingAborted(step_, e.what());
    }

    std::vector<std::vector<Real>> snapshot;
    snapshot.reserve(params.size());
    for (const auto& p : params.entries()) snapshot.push_back(p.tensor.data());
    adam_.step();
    for (auto& p : params.entries()) {
      for (Real v : p.tensor.values()) {
        if (!std::isfinite(v)) {
          for (std::size_t k = 0; k < params.size(); ++k) {
            auto dst = params.entries()[k].tensor.mutable_values();
            std::copy(snapshot[k].begin(), snapshot[k].end(), dst.begin());
          }
          throw TrainingAborted(step_, "non-finite parameter in " + p.name);
        }
      }
    }
    ++step_;
    return entry;
  }

  Model& model_;
  const std::vector<PreparedExample>& data_;
  TrainConfig cfg_;
  ad::Adam<Real> adam_;
  std::mt19937_64 shuffle_rng_;
  std::mt19937_64 dropout_rng_;
  std::size_t step_ = 0;
};

inline std::vector<PreparedExample> prepare_all(const Model& model, const std::vector<QuadRecord>& records) {
  std::vector<PreparedExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(model.prepare(r));
  return out;
}

}  // namespace kfmrc::harness
