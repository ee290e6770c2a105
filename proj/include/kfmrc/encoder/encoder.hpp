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
#include <random>
#include <string>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/core/ops.hpp"
#include "kfmrc/core/parameters.hpp"
#include "kfmrc/encoder/vocabulary.hpp"

namespace kfmrc::encoder {

struct EncoderConfig {
  std::size_t d1 = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 256;
  double dropout = 0.1;
  std::size_t max_seq_len = 512;

  void validate() const {
    if (d1 == 0 || heads == 0 || d1 % heads != 0) throw Error("encoder: d1 must be a positive multiple of heads");
    if (ff_width == 0) throw Error("encoder: ff_width must be positive");
    if (max_seq_len < 8) throw Error("encoder: max_seq_len must be at least 8");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("encoder: dropout must lie in [0, 1)");
  }
};

// [CLS] question [SEP] passage [SEP], optionally followed by [PAD]s.
struct PackedSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;  // 0: CLS, question, first SEP; 1: rest
  std::size_t question_length = 0;
  std::size_t passage_begin = 0;
  std::size_t passage_end = 0;  // exclusive
  std::size_t truncated = 0;    // passage tokens dropped from the tail

  std::size_t length() const { return ids.size(); }
  bool in_passage(std::size_t i) const { return i >= passage_begin && i < passage_end; }

  std::vector<std::uint8_t> passage_mask() const {
    std::vector<std::uint8_t> m(ids.size(), 0);
    for (std::size_t i = passage_begin; i < passage_end; ++i) m[i] = 1;
    return m;
  }

  std::vector<std::uint8_t> key_mask() const {
    std::vector<std::uint8_t> m(ids.size(), 1);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == kPad) m[i] = 0;
    return m;
  }
};

inline PackedSequence pack(const std::vector<TokenId>& question, const std::vector<TokenId>& passage,
                           std::size_t max_seq_len) {
  if (question.empty()) throw ValidationError("pack: empty question");
  if (passage.empty()) throw ValidationError("pack: empty passage");
  if (question.size() + 3 >= max_seq_len) {
    throw ValidationError("pack: question of " + std::to_string(question.size()) +
                          " tokens leaves no room for the passage within max_seq_len " +
                          std::to_string(max_seq_len));
  }
  const std::size_t room = max_seq_len - question.size() - 3;
  const std::size_t kept = std::min(room, passage.size());

  PackedSequence seq;
  seq.question_length = question.size();
  seq.ids.reserve(question.size() + kept + 3);
  seq.ids.push_back(kCls);
  seq.ids.insert(seq.ids.end(), question.begin(), question.end());
  seq.ids.push_back(kSep);
  seq.passage_begin = seq.ids.size();
  seq.ids.insert(seq.ids.end(), passage.begin(), passage.begin() + static_cast<std::ptrdiff_t>(kept));
  seq.passage_end = seq.ids.size();
  seq.ids.push_back(kSep);
  seq.truncated = passage.size() - kept;
  seq.segments.assign(seq.ids.size(), 1);
  for (std::size_t i = 0; i < question.size() + 2; ++i) seq.segments[i] = 0;
  return seq;
}

inline void pad_to(PackedSequence& seq, std::size_t length) {
  while (seq.ids.size() < length) {
    seq.ids.push_back(kPad);
    seq.segments.push_back(1);
  }
}

enum class Mode { kTrain, kEval };

template <typename T>
struct EncoderOutput {
  ad::Tensor<T> hidden;  // [T x d1]
  // attention[layer][head] is [T x T], filled only when requested.
  std::vector<std::vector<ad::Tensor<T>>> attention;
};

// Miniature post-LN transformer encoder: token + position + segment
// embeddings, multi-head self-attention with PAD keys masked, GELU
// feed-forward blocks.
template <typename T>
class Encoder {
 public:
  Encoder() = default;

  Encoder(const EncoderConfig& config, std::size_t vocab_size) : config_(config), vocab_size_(vocab_size) {
    config_.validate();
  }

  const EncoderConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }

  template <typename Rng>
  void init(ad::ParameterSet<T>& params, Rng& rng) const {
    const std::size_t d = config_.d1;
    const T embed_std = T(0.1);
    params.add("encoder.token_embedding", ad::random_normal<T>({vocab_size_, d}, embed_std, rng));
    params.add("encoder.position_embedding", ad::random_normal<T>({config_.max_seq_len, d}, embed_std, rng));
    params.add("encoder.segment_embedding", ad::random_normal<T>({2, d}, embed_std, rng));
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = layer_prefix(l);
      for (const char* name : {"query", "key", "value", "output"}) {
        params.add(p + "attention." + name + ".weight", ad::glorot<T>(d, d, rng));
        params.add(p + "attention." + name + ".bias", ad::Tensor<T>::zeros({d}));
      }
      params.add(p + "attention.norm.gain", ad::Tensor<T>::filled({d}, T(1)));
      params.add(p + "attention.norm.bias", ad::Tensor<T>::zeros({d}));
      params.add(p + "ffn.in.weight", ad::glorot<T>(d, config_.ff_width, rng));
      params.add(p + "ffn.in.bias", ad::Tensor<T>::zeros({config_.ff_width}));
      params.add(p + "ffn.out.weight", ad::glorot<T>(config_.ff_width, d, rng));
      params.add(p + "ffn.out.bias", ad::Tensor<T>::zeros({d}));
      params.add(p + "ffn.norm.gain", ad::Tensor<T>::filled({d}, T(1)));
      params.add(p + "ffn.norm.bias", ad::Tensor<T>::zeros({d}));
    }
  }

  // `rng` is consulted only in training mode with positive dropout.
  EncoderOutput<T> encode(const PackedSequence& seq, const ad::ParameterSet<T>& params, Mode mode,
                          std::mt19937_64* rng = nullptr, bool keep_attention = false) const {
    const std::size_t len = seq.length();
    if (len > config_.max_seq_len) throw ValidationError("encode: sequence longer than max_seq_len");
    for (TokenId id : seq.ids) {
      if (id >= vocab_size_) throw DimensionError("encode: token id " + std::to_string(id) + " out of vocabulary");
    }
    std::vector<std::size_t> tokens(seq.ids.begin(), seq.ids.end());
    std::vector<std::size_t> positions(len);
    for (std::size_t i = 0; i < len; ++i) positions[i] = i;
    std::vector<std::size_t> segments(seq.segments.begin(), seq.segments.end());

    ad::Tensor<T> x = ad::add(ad::add(ad::gather_rows(params.at("encoder.token_embedding"), tokens),
                                      ad::gather_rows(params.at("encoder.position_embedding"), positions)),
                              ad::gather_rows(params.at("encoder.segment_embedding"), segments));
    const T rate = mode == Mode::kTrain ? static_cast<T>(config_.dropout) : T(0);
    if (rate > T(0) && rng == nullptr) throw Error("encode: training-mode dropout needs an rng");

    EncoderOutput<T> result;
    const std::vector<std::uint8_t> key_mask = seq.key_mask();
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = layer_prefix(l);
      std::vector<ad::Tensor<T>> probs;
      ad::Tensor<T> attended = self_attention(x, params, p, key_mask, keep_attention ? &probs : nullptr);
      if (rate > T(0)) attended = ad::dropout(attended, rate, *rng);
      x = ad::layer_norm(ad::add(x, attended), params.at(p + "attention.norm.gain"),
                         params.at(p + "attention.norm.bias"));

      ad::Tensor<T> inner = ad::gelu(ad::add(ad::matmul(x, params.at(p + "ffn.in.weight")), params.at(p + "ffn.in.bias")));
      ad::Tensor<T> ffn = ad::add(ad::matmul(inner, params.at(p + "ffn.out.weight")), params.at(p + "ffn.out.bias"));
      if (rate > T(0)) ffn = ad::dropout(ffn, rate, *rng);
      x = ad::layer_norm(ad::add(x, ffn), params.at(p + "ffn.norm.gain"), params.at(p + "ffn.norm.bias"));
      if (keep_attention) result.attention.push_back(std::move(probs));
    }
    result.hidden = x;
    return result;
  }

 private:
  static std::string layer_prefix(std::size_t l) { return "encoder.layer" + std::to_string(l) + "."; }

  ad::Tensor<T> self_attention(const ad::Tensor<T>& x, const ad::ParameterSet<T>& params, const std::string& p,
                               const std::vector<std::uint8_t>& key_mask,
                               std::vector<ad::Tensor<T>>* probs_out) const {
    auto project = [&](const char* name) {
      return ad::add(ad::matmul(x, params.at(p + "attention." + name + ".weight")),
                     params.at(p + "attention." + name + ".bias"));
    };
    const ad::Tensor<T> q = project("query");
    const ad::Tensor<T> k = project("key");
    const ad::Tensor<T> v = project("value");
    const std::size_t dh = config_.d1 / config_.heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<ad::Tensor<T>> contexts;
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::size_t b = h * dh, e = (h + 1) * dh;
      ad::Tensor<T> qh = config_.heads == 1 ? q : ad::slice(q, 1, b, e);
      ad::Tensor<T> kh = config_.heads == 1 ? k : ad::slice(k, 1, b, e);
      ad::Tensor<T> vh = config_.heads == 1 ? v : ad::slice(v, 1, b, e);
      ad::Tensor<T> scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
      ad::Tensor<T> weights = ad::softmax(scores, 1, key_mask);
      if (probs_out) probs_out->push_back(weights);
      contexts.push_back(ad::matmul(weights, vh));
    }
    ad::Tensor<T> context = contexts.size() == 1 ? contexts.front() : ad::concat(contexts, 1);
    return ad::add(ad::matmul(context, params.at(p + "attention.output.weight")),
                   params.at(p + "attention.output.bias"));
  }

  EncoderConfig config_;
  std::size_t vocab_size_ = 0;
};

}  // namespace kfmrc::encoder
