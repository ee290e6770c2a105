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
#include <cstdint>
#include <string>
#include <vector>

#include "kfmrc/core/ops.hpp"
#include "kfmrc/core/parameters.hpp"

namespace kfmrc::heads {

using ad::Tensor;

enum class LambdaMode {
  kDynamic,   // max(0, cos(H_A, h_su)) with gradients
  kDetached,  // same value, no gradient through the coefficient
  kFixed,     // constant (ablation)
};

struct HeadConfig {
  std::size_t d_o = 0;  // 0 means "same as d1"
  LambdaMode lambda_mode = LambdaMode::kDynamic;
  double fixed_lambda = 1.0;
};

template <typename T>
struct HeadWeights {
  Tensor<T> output;   // W_out [d_o x 2*d1]
  Tensor<T> support;  // w_sup [d_o]
  Tensor<T> start;    // w1 [d_o]
  Tensor<T> end;      // w2 [d_o]
  Tensor<T> pool;     // v_pool [d_o]
  Tensor<T> lambda;   // W_H [d_o x 3*d_o]
};

template <typename T, typename Rng>
void init_heads(ad::ParameterSet<T>& params, std::size_t d1, std::size_t d_o, Rng& rng) {
  const T vec_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_o)));
  params.add("heads.output.weight", ad::glorot<T>(d_o, 2 * d1, rng));
  params.add("heads.support.weight", ad::random_normal<T>({d_o}, vec_std, rng));
  params.add("heads.start.weight", ad::random_normal<T>({d_o}, vec_std, rng));
  params.add("heads.end.weight", ad::random_normal<T>({d_o}, vec_std, rng));
  params.add("heads.pool.weight", ad::random_normal<T>({d_o}, vec_std, rng));
  params.add("heads.lambda.weight", ad::glorot<T>(d_o, 3 * d_o, rng));
}

template <typename T>
HeadWeights<T> head_weights(const ad::ParameterSet<T>& params) {
  return {params.at("heads.output.weight"), params.at("heads.support.weight"), params.at("heads.start.weight"),
          params.at("heads.end.weight"),    params.at("heads.pool.weight"),    params.at("heads.lambda.weight")};
}

template <typename T>
struct TaskOutputs {
  Tensor<T> o;             // [T x d_o]
  Tensor<T> p_support;     // [T]
  Tensor<T> start_logits;  // [T]
  Tensor<T> end_logits;    // [T]
  Tensor<T> p_start;       // [T], zero outside the passage
  Tensor<T> p_end;         // [T]
};

namespace detail {

template <typename T>
Tensor<T> project_rows(const Tensor<T>& rows, const Tensor<T>& w) {
  return ad::reshape(ad::matmul(rows, ad::reshape(w, {w.size(), 1})), {rows.dim(0)});
}

}  // namespace detail

// o_i = sigmoid(W_out [h_i, h_i^L]); p_support_i = sigmoid(w_sup . o_i);
// start/end distributions are softmaxes of w1 . o_i and w2 . o_i over the
// positions where passage_mask is set.
template <typename T>
TaskOutputs<T> token_outputs(const Tensor<T>& hidden, const Tensor<T>& fused, std::span<const std::uint8_t> passage_mask,
                             const HeadWeights<T>& w) {
  if (hidden.shape() != fused.shape()) {
    throw DimensionError("token_outputs: hidden " + ad::shape_string(hidden.shape()) + " and fused " +
                         ad::shape_string(fused.shape()) + " differ");
  }
  if (passage_mask.size() != hidden.dim(0)) throw DimensionError("token_outputs: passage mask length mismatch");
  TaskOutputs<T> out;
  out.o = ad::sigmoid(ad::matmul(ad::concat<T>({hidden, fused}, 1), ad::transpose(w.output)));
  out.p_support = ad::sigmoid(detail::project_rows(out.o, w.support));
  out.start_logits = detail::project_rows(out.o, w.start);
  out.end_logits = detail::project_rows(out.o, w.end);
  out.p_start = ad::softmax(out.start_logits, 0, passage_mask);
  out.p_end = ad::softmax(out.end_logits, 0, passage_mask);
  return out;
}

// -(log p_start[start] + log p_end[end]) for one example, from the logits.
template <typename T>
Tensor<T> answer_loss(const TaskOutputs<T>& out, std::span<const std::uint8_t> passage_mask, std::size_t start,
                      std::size_t end) {
  if (start >= passage_mask.size() || end >= passage_mask.size() || !passage_mask[start] || !passage_mask[end]) {
    throw ValidationError("answer_loss: gold position outside the passage");
  }
  return ad::add(ad::cross_entropy(out.start_logits, passage_mask, start),
                 ad::cross_entropy(out.end_logits, passage_mask, end));
}

// Mean binary cross-entropy over the sequence for one example.
template <typename T>
Tensor<T> support_loss(const Tensor<T>& p_support, std::span<const T> labels) {
  return ad::binary_cross_entropy(p_support, labels, T(1e-7));
}

// Average of attentive pooling (softmax of v_pool . o_i over the region)
// and mean pooling, over rows [begin, end) of o.
template <typename T>
Tensor<T> pooled(const Tensor<T>& o, std::size_t begin, std::size_t end, const Tensor<T>& v_pool) {
  if (begin >= end || end > o.dim(0)) throw ValidationError("pooled: empty or out-of-range region");
  const Tensor<T> region = ad::slice(o, 0, begin, end);
  const std::size_t n = end - begin;
  const Tensor<T> scores = ad::softmax(detail::project_rows(region, v_pool), 0);
  const Tensor<T> attentive = ad::reshape(ad::matmul(ad::reshape(scores, {1, n}), region), {o.dim(1)});
  return ad::scale(ad::add(attentive, ad::mean(region, 0)), T(0.5));
}

template <typename T>
struct PooledReps {
  Tensor<T> h_su;  // support sentence
  Tensor<T> o_sp;  // answer span
  Tensor<T> o_st;  // answer start token
  Tensor<T> o_ed;  // answer end token
};

template <typename T>
PooledReps<T> pooled_reps(const Tensor<T>& o, std::size_t support_begin, std::size_t support_end,
                          std::size_t answer_start, std::size_t answer_end, const Tensor<T>& v_pool) {
  return {pooled(o, support_begin, support_end, v_pool), pooled(o, answer_start, answer_end + 1, v_pool),
          ad::row(o, answer_start), ad::row(o, answer_end)};
}

template <typename T>
struct LambdaParts {
  Tensor<T> gamma_st, gamma_ed, gamma_sp;
  Tensor<T> h_a;
  Tensor<T> lambda;
  bool degenerate = false;  // a norm fell below 1e-12; lambda forced to 0
};

// gamma_x = h_su . o_x; H_A = sigmoid(W_H [g_st o_st, g_ed o_ed, g_sp o_sp]);
// lambda = max(0, cos(H_A, h_su)).
template <typename T>
LambdaParts<T> dynamic_lambda(const PooledReps<T>& reps, const Tensor<T>& w_h) {
  LambdaParts<T> out;
  out.gamma_st = ad::dot(reps.h_su, reps.o_st);
  out.gamma_ed = ad::dot(reps.h_su, reps.o_ed);
  out.gamma_sp = ad::dot(reps.h_su, reps.o_sp);
  const Tensor<T> stacked = ad::concat<T>(
      {ad::scale(reps.o_st, out.gamma_st), ad::scale(reps.o_ed, out.gamma_ed), ad::scale(reps.o_sp, out.gamma_sp)}, 0);
  out.h_a = ad::reshape(ad::sigmoid(ad::matmul(w_h, ad::reshape(stacked, {stacked.size(), 1}))), {w_h.dim(0)});
  auto norm = [](const Tensor<T>& v) {
    double s = 0.0;
    for (T x : v.data()) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
  };
  if (norm(out.h_a) < 1e-12 || norm(reps.h_su) < 1e-12) {
    out.degenerate = true;
    out.lambda = Tensor<T>::scalar(T(0));
    return out;
  }
  out.lambda = ad::clamp_min(ad::cosine(out.h_a, reps.h_su), T(0));
  return out;
}

// L = L_A + lambda * L_S.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& answer, const Tensor<T>& support, const Tensor<T>& lambda) {
  return ad::add(answer, ad::scale(support, lambda));
}

}  // namespace kfmrc::heads
