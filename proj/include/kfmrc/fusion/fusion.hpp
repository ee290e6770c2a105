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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kfmrc/core/ops.hpp"
#include "kfmrc/core/parameters.hpp"
#include "kfmrc/retrieval/retrieval.hpp"

namespace kfmrc::fusion {

using ad::Tensor;

enum class GateKind {
  kSigmoidTanh,  // sigmoid(tanh(W x)), literal form
  kSigmoidOnly,  // sigmoid(W x), ablation
};

struct FusionConfig {
  std::size_t loops = 2;
  GateKind gate = GateKind::kSigmoidTanh;
  bool use_local = true;      // false substitutes a zero local summary
  bool use_global = true;     // false substitutes a zero global summary
  bool tie_attention = false;  // global attention reuses the local weight
};

template <typename T>
struct AttentionResult {
  Tensor<T> weights;  // [K]
  Tensor<T> summary;  // [d2]
};

// Bilinear attention of one query over an entity set:
// weights = softmax_j(e_j^T W q), summary = sum_j weights_j e_j.
// `entities` is [K x d2], `weight` is [d2 x d1], `query` is [d1].
template <typename T>
AttentionResult<T> entity_attention(const Tensor<T>& query, const Tensor<T>& entities, const Tensor<T>& weight) {
  if (query.rank() != 1 || query.size() != weight.dim(1)) {
    throw DimensionError("entity_attention: query width does not match the weight's input width");
  }
  const std::size_t k = entities.dim(0);
  const std::size_t d2 = entities.dim(1);
  Tensor<T> projected = ad::matmul(weight, ad::reshape(query, {query.size(), 1}));  // [d2 x 1]
  Tensor<T> scores = ad::reshape(ad::matmul(entities, projected), {k});
  Tensor<T> weights = ad::softmax(scores, 0);
  Tensor<T> summary = ad::reshape(ad::matmul(ad::reshape(weights, {1, k}), entities), {d2});
  return {weights, summary};
}

// Local fusion: query h_i over the token's own entities.
template <typename T>
AttentionResult<T> local_attention(const Tensor<T>& h, const Tensor<T>& entities, const Tensor<T>& w_local) {
  return entity_attention(h, entities, w_local);
}

// Global fusion: the [CLS] state queries the same per-token entity set.
template <typename T>
AttentionResult<T> global_attention(const Tensor<T>& h_cls, const Tensor<T>& entities, const Tensor<T>& w_global) {
  return entity_attention(h_cls, entities, w_global);
}

template <typename T>
struct GatedLoopResult {
  Tensor<T> output;            // h^L, same shape as the input state
  std::vector<Tensor<T>> gates;  // G^0 .. G^{L-1}
};

// h^0 = h; G^l = sigmoid(tanh(W [h^l, local, global])); h^{l+1} = G^l * h^l.
// Works row-wise on [n x d1] states with [n x d2] summaries, or on single
// vectors.
template <typename T>
GatedLoopResult<T> gated_loop(const Tensor<T>& h, const Tensor<T>& local, const Tensor<T>& global,
                              const Tensor<T>& w_gate, std::size_t loops, GateKind kind = GateKind::kSigmoidTanh) {
  const bool single = h.rank() == 1;
  const Tensor<T> state0 = single ? ad::reshape(h, {1, h.size()}) : h;
  const Tensor<T> lo = local.rank() == 1 ? ad::reshape(local, {1, local.size()}) : local;
  const Tensor<T> gl = global.rank() == 1 ? ad::reshape(global, {1, global.size()}) : global;
  if (w_gate.rank() != 2 || w_gate.dim(0) != state0.dim(1) ||
      w_gate.dim(1) != state0.dim(1) + lo.dim(1) + gl.dim(1)) {
    throw DimensionError("gated_loop: gate weight must be [d1 x (d1 + 2*d2)], got " + ad::shape_string(w_gate.shape()));
  }
  GatedLoopResult<T> result;
  Tensor<T> state = state0;
  if (loops > 0) {
    const Tensor<T> w_t = ad::transpose(w_gate);
    for (std::size_t l = 0; l < loops; ++l) {
      Tensor<T> pre = ad::matmul(ad::concat<T>({state, lo, gl}, 1), w_t);
      Tensor<T> gate = kind == GateKind::kSigmoidTanh ? ad::sigmoid(ad::tanh(pre)) : ad::sigmoid(pre);
      result.gates.push_back(single ? ad::reshape(gate, {gate.size()}) : gate);
      state = ad::mul(gate, state);
    }
  }
  result.output = single ? ad::reshape(state, {state.size()}) : state;
  return result;
}

template <typename T>
struct FusionOutputs {
  Tensor<T> fused;                    // [T x d1]; bypass rows equal the input rows
  std::vector<std::size_t> fused_tokens;  // positions with at least one entity
  std::vector<Tensor<T>> local_weights;   // per fused token, [K_i]
  std::vector<Tensor<T>> global_weights;  // per fused token, [K_i]
  Tensor<T> local_summary;            // [n x d2] rows follow fused_tokens
  Tensor<T> global_summary;           // [n x d2]
  std::vector<Tensor<T>> gates;       // per loop, [n x d1]
  std::vector<bool> bypass;           // per position
};

template <typename T>
struct FusionWeights {
  Tensor<T> local;   // [d2 x d1]
  Tensor<T> global;  // [d2 x d1]
  Tensor<T> gate;    // [d1 x (d1 + 2*d2)]
};

template <typename T, typename Rng>
void init_fusion(ad::ParameterSet<T>& params, std::size_t d1, std::size_t d2, Rng& rng) {
  params.add("fusion.local.weight", ad::glorot<T>(d2, d1, rng));
  params.add("fusion.global.weight", ad::glorot<T>(d2, d1, rng));
  params.add("fusion.gate.weight", ad::glorot<T>(d1, d1 + 2 * d2, rng));
}

template <typename T>
FusionWeights<T> fusion_weights(const ad::ParameterSet<T>& params, const FusionConfig& cfg) {
  FusionWeights<T> w{params.at("fusion.local.weight"), params.at("fusion.global.weight"),
                     params.at("fusion.gate.weight")};
  if (cfg.tie_attention) w.global = w.local;
  return w;
}

// Full fusion over a sequence: hidden [T x d1], entity table [|V| x d2].
// Tokens without entities bypass fusion unchanged.
template <typename T>
FusionOutputs<T> fuse(const Tensor<T>& hidden, const retrieval::TokenEntityMap& map, const Tensor<T>& entity_table,
                      const FusionWeights<T>& w, const FusionConfig& cfg) {
  const std::size_t len = hidden.dim(0);
  const std::size_t d1 = hidden.dim(1);
  if (map.size() != len) throw DimensionError("fuse: token entity map does not cover the sequence");
  const std::size_t d2 = entity_table.dim(1);
  FusionOutputs<T> out;
  out.bypass.assign(len, true);
  for (std::size_t i = 0; i < len; ++i) {
    if (!map.at(i).empty()) {
      out.fused_tokens.push_back(i);
      out.bypass[i] = false;
    }
  }
  if (out.fused_tokens.empty()) {
    out.fused = hidden;
    return out;
  }
  const std::size_t n = out.fused_tokens.size();
  const Tensor<T> h_cls = ad::row(hidden, 0);
  const Tensor<T> selected = ad::gather_rows(hidden, out.fused_tokens);

  std::vector<Tensor<T>> locals, globals;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& ids = map.at(out.fused_tokens[k]);
    const Tensor<T> entities = ad::gather_rows(entity_table, std::span<const std::size_t>(ids));
    if (cfg.use_local) {
      auto a = local_attention(ad::row(selected, k), entities, w.local);
      out.local_weights.push_back(a.weights);
      locals.push_back(ad::reshape(a.summary, {1, d2}));
    }
    if (cfg.use_global) {
      auto b = global_attention(h_cls, entities, w.global);
      out.global_weights.push_back(b.weights);
      globals.push_back(ad::reshape(b.summary, {1, d2}));
    }
  }
  out.local_summary = cfg.use_local ? ad::concat(locals, 0) : Tensor<T>::zeros({n, d2});
  out.global_summary = cfg.use_global ? ad::concat(globals, 0) : Tensor<T>::zeros({n, d2});

  GatedLoopResult<T> loop = gated_loop(selected, out.local_summary, out.global_summary, w.gate, cfg.loops, cfg.gate);
  out.gates = std::move(loop.gates);

  std::vector<T> keep(len * d1, T(1));
  for (std::size_t i : out.fused_tokens) std::fill_n(keep.begin() + i * d1, d1, T(0));
  out.fused = ad::add(ad::mul(hidden, Tensor<T>({len, d1}, std::move(keep))),
                      ad::scatter_rows(len, out.fused_tokens, loop.output));
  return out;
}

}  // namespace kfmrc::fusion
