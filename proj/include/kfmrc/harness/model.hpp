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

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfmrc/core/ops.hpp"
#include "kfmrc/core/parameters.hpp"
#include "kfmrc/core/tape.hpp"
#include "kfmrc/decode/decode.hpp"
#include "kfmrc/encoder/encoder.hpp"
#include "kfmrc/fusion/fusion.hpp"
#include "kfmrc/harness/dataset.hpp"
#include "kfmrc/heads/heads.hpp"
#include "kfmrc/kg/embedding.hpp"
#include "kfmrc/retrieval/retrieval.hpp"

namespace kfmrc::harness {

using Real = double;
using ad::Tensor;

struct ModelConfig {
  encoder::EncoderConfig encoder;
  std::size_t d2 = 64;
  fusion::FusionConfig fusion;
  heads::HeadConfig heads;
  retrieval::RetrievalConfig retrieval;
  bool fine_tune_entities = false;
  std::size_t max_answer_len = kMaxAnswerTokens;
  bool enforce_containment = false;

  std::size_t d_o() const { return heads.d_o ? heads.d_o : encoder.d1; }
};

inline std::string lambda_mode_name(heads::LambdaMode m) {
  switch (m) {
    case heads::LambdaMode::kDynamic: return "dynamic";
    case heads::LambdaMode::kDetached: return "detached";
    case heads::LambdaMode::kFixed: return "fixed";
  }
  return "dynamic";
}

inline heads::LambdaMode parse_lambda_mode(const std::string& s) {
  if (s == "dynamic") return heads::LambdaMode::kDynamic;
  if (s == "detached") return heads::LambdaMode::kDetached;
  if (s == "fixed") return heads::LambdaMode::kFixed;
  throw ParseError("unknown lambda mode '" + s + "'");
}

inline json config_to_json(const ModelConfig& c) {
  return {
      {"encoder",
       {{"d1", c.encoder.d1},
        {"layers", c.encoder.layers},
        {"heads", c.encoder.heads},
        {"ff_width", c.encoder.ff_width},
        {"dropout", c.encoder.dropout},
        {"max_seq_len", c.encoder.max_seq_len}}},
      {"d2", c.d2},
      {"fusion",
       {{"loops", c.fusion.loops},
        {"gate", c.fusion.gate == fusion::GateKind::kSigmoidTanh ? "sigmoid-tanh" : "sigmoid"},
        {"use_local", c.fusion.use_local},
        {"use_global", c.fusion.use_global},
        {"tie_attention", c.fusion.tie_attention}}},
      {"heads",
       {{"d_o", c.heads.d_o}, {"lambda_mode", lambda_mode_name(c.heads.lambda_mode)}, {"fixed_lambda", c.heads.fixed_lambda}}},
      {"retrieval",
       {{"edit_threshold", c.retrieval.edit_threshold},
        {"overlap_ratio", c.retrieval.overlap_ratio},
        {"k_max", c.retrieval.k_max}}},
      {"fine_tune_entities", c.fine_tune_entities},
      {"max_answer_len", c.max_answer_len},
      {"enforce_containment", c.enforce_containment},
  };
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    const json& e = j.at("encoder");
    c.encoder.d1 = e.at("d1").get<std::size_t>();
    c.encoder.layers = e.at("layers").get<std::size_t>();
    c.encoder.heads = e.at("heads").get<std::size_t>();
    c.encoder.ff_width = e.at("ff_width").get<std::size_t>();
    c.encoder.dropout = e.at("dropout").get<double>();
    c.encoder.max_seq_len = e.at("max_seq_len").get<std::size_t>();
    c.d2 = j.at("d2").get<std::size_t>();
    const json& f = j.at("fusion");
    c.fusion.loops = f.at("loops").get<std::size_t>();
    const auto gate = f.at("gate").get<std::string>();
    if (gate != "sigmoid-tanh" && gate != "sigmoid") throw ParseError("unknown gate kind '" + gate + "'");
    c.fusion.gate = gate == "sigmoid" ? fusion::GateKind::kSigmoidOnly : fusion::GateKind::kSigmoidTanh;
    c.fusion.use_local = f.at("use_local").get<bool>();
    c.fusion.use_global = f.at("use_global").get<bool>();
    c.fusion.tie_attention = f.at("tie_attention").get<bool>();
    const json& h = j.at("heads");
    c.heads.d_o = h.at("d_o").get<std::size_t>();
    c.heads.lambda_mode = parse_lambda_mode(h.at("lambda_mode").get<std::string>());
    c.heads.fixed_lambda = h.at("fixed_lambda").get<double>();
    const json& r = j.at("retrieval");
    c.retrieval.edit_threshold = r.at("edit_threshold").get<std::size_t>();
    c.retrieval.overlap_ratio = r.at("overlap_ratio").get<double>();
    c.retrieval.k_max = r.at("k_max").get<std::size_t>();
    c.fine_tune_entities = j.at("fine_tune_entities").get<bool>();
    c.max_answer_len = j.at("max_answer_len").get<std::size_t>();
    c.enforce_containment = j.at("enforce_containment").get<bool>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  return c;
}

// One record tokenized, packed and linked to the KB.
struct PreparedExample {
  std::string id;
  std::string passage;
  encoder::PackedSequence seq;
  std::vector<encoder::Piece> passage_pieces;  // kept passage tokens only
  decode::Segmentation sentences;              // over passage token indices
  std::vector<std::uint8_t> passage_mask;
  retrieval::TokenEntityMap entities;

  // Gold positions in packed coordinates; `has_gold` is false for raw
  // questions and for answers cut off by truncation.
  bool has_gold = false;
  std::size_t answer_start = 0, answer_end = 0;   // inclusive
  std::size_t support_begin = 0, support_end = 0;  // exclusive end
  std::vector<Real> support_labels;
  std::vector<std::string> references;
  std::string gold_support;
  CharSpan gold_answer_chars, gold_support_chars;
};

struct ForwardPass {
  encoder::EncoderOutput<Real> encoded;
  fusion::FusionOutputs<Real> fused;
  heads::TaskOutputs<Real> outputs;
};

struct ExampleLoss {
  Tensor<Real> answer;
  Tensor<Real> support;
  Tensor<Real> lambda;
  bool degenerate = false;
};

struct Prediction {
  std::size_t start = 0, end = 0;  // passage token indices, inclusive
  std::string answer;
  CharSpan answer_chars;
  double answer_score = 0.0;
  std::size_t support_sentence = 0;
  std::pair<std::size_t, std::size_t> support_tokens;  // passage token indices, exclusive end
  std::string support;
  CharSpan support_chars;
  double support_score = 0.0;
};

inline encoder::Vocabulary build_vocabulary(const std::vector<QuadRecord>& records, const kg::KnowledgeBase* kb) {
  encoder::Vocabulary v;
  for (const auto& r : records) {
    v.add_text(r.question);
    v.add_text(r.passage);
    for (const auto& a : r.additional_answers) v.add_text(a);
  }
  if (kb) {
    for (const auto& name : kb->entity_names()) v.add_text(name);
  }
  return v;
}

inline constexpr const char* kEntityTable = "kg.entity";

class Model {
 public:
  // `entity_table` is [|V| x d2] in entity-id order of `entity_names`.
  Model(ModelConfig config, encoder::Vocabulary vocab, std::vector<std::string> entity_names,
        std::vector<Real> entity_table)
      : config_(std::move(config)),
        vocab_(std::move(vocab)),
        entity_names_(std::move(entity_names)),
        index_(entity_names_),
        encoder_(config_.encoder, vocab_.size()) {
    config_.retrieval.validate();
    if (config_.d2 == 0) throw Error("model: d2 must be positive");
    if (entity_table.size() != entity_names_.size() * config_.d2) {
      throw DimensionError("model: entity table does not match " + std::to_string(entity_names_.size()) +
                           " entities of width " + std::to_string(config_.d2));
    }
    entity_values_ = std::move(entity_table);
  }

  static Model create(const ModelConfig& config, encoder::Vocabulary vocab, const kg::KnowledgeBase& kb,
                      const kg::EntityEmbedding& emb, std::uint64_t seed) {
    if (emb.entity_count() != kb.entity_count()) throw DimensionError("model: embedding does not cover the KB");
    if (kb.entity_count() && emb.dim != config.d2) {
      throw DimensionError("model: embedding width " + std::to_string(emb.dim) + " differs from d2 " +
                           std::to_string(config.d2));
    }
    Model m(config, std::move(vocab), kb.entity_names(), emb.entities);
    m.init(seed);
    return m;
  }

  // Fresh parameters from `seed`.
  void init(std::uint64_t seed) {
    params_ = ad::ParameterSet<Real>();
    std::mt19937_64 rng(seed);
    encoder_.init(params_, rng);
    fusion::init_fusion(params_, config_.encoder.d1, config_.d2, rng);
    heads::init_heads(params_, config_.encoder.d1, config_.d_o(), rng);
    add_entity_table();
  }

  // Replaces every parameter, entity table included.
  void adopt(ad::ParameterSet<Real> params) { params_ = std::move(params); }

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const encoder::Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<Real>& entity_values() const { return entity_values_; }
  ad::ParameterSet<Real>& params() { return params_; }
  const ad::ParameterSet<Real>& params() const { return params_; }

  // Placeholder row when the KB is empty; no token can retrieve it.
  Tensor<Real> entity_table_tensor() const {
    if (entity_names_.empty()) return Tensor<Real>::zeros({1, config_.d2});
    return Tensor<Real>({entity_names_.size(), config_.d2}, entity_values_);
  }

  PreparedExample prepare(const QuadRecord& r) const {
    PreparedExample ex = prepare_text(r.id, r.question, r.passage, &r.candidates);
    ex.references = r.references();
    const CharSpan support = support_span(r);
    ex.gold_answer_chars = r.answer;
    ex.gold_support_chars = support;
    ex.gold_support = text::char_slice(r.passage, support.begin, support.end);

    const auto [a_first, a_last] = pieces_covering(ex.passage_pieces, r.answer);
    const auto [s_first, s_last] = pieces_covering(ex.passage_pieces, support);
    const auto full = encoder::split_pieces(r.passage);
    const auto [a_full_first, a_full_last] = pieces_covering(full, r.answer);
    if (a_first < a_last && a_last == a_full_last && s_first < s_last) {
      ex.has_gold = true;
      const std::size_t base = ex.seq.passage_begin;
      ex.answer_start = base + a_first;
      ex.answer_end = base + a_last - 1;
      ex.support_begin = base + s_first;
      ex.support_end = base + s_last;
      ex.support_labels.assign(ex.seq.length(), Real(0));
      for (std::size_t i = ex.support_begin; i < ex.support_end; ++i) ex.support_labels[i] = Real(1);
    }
    return ex;
  }

  PreparedExample prepare(const std::string& question, const std::string& passage) const {
    return prepare_text("", question, passage, nullptr);
  }

  ForwardPass forward(const PreparedExample& ex, encoder::Mode mode, std::mt19937_64* rng = nullptr,
                      bool keep_attention = false) const {
    ForwardPass f;
    f.encoded = encoder_.encode(ex.seq, params_, mode, rng, keep_attention);
    f.fused = fusion::fuse(f.encoded.hidden, ex.entities, params_.at(kEntityTable),
                           fusion::fusion_weights(params_, config_.fusion), config_.fusion);
    f.outputs = heads::token_outputs(f.encoded.hidden, f.fused.fused, ex.passage_mask, heads::head_weights(params_));
    return f;
  }

  ExampleLoss loss(const PreparedExample& ex, const ForwardPass& f) const {
    if (!ex.has_gold) throw ValidationError("record '" + ex.id + "': gold answer lies outside the packed window");
    ExampleLoss l;
    l.answer = heads::answer_loss(f.outputs, ex.passage_mask, ex.answer_start, ex.answer_end);
    l.support = heads::support_loss(f.outputs.p_support, std::span<const Real>(ex.support_labels));
    const auto& hc = config_.heads;
    if (hc.lambda_mode == heads::LambdaMode::kFixed) {
      l.lambda = Tensor<Real>::scalar(static_cast<Real>(hc.fixed_lambda));
      return l;
    }
    const auto w = heads::head_weights(params_);
    const auto reps = heads::pooled_reps(f.outputs.o, ex.support_begin, ex.support_end, ex.answer_start,
                                         ex.answer_end, w.pool);
    auto parts = heads::dynamic_lambda(reps, w.lambda);
    l.degenerate = parts.degenerate;
    l.lambda = hc.lambda_mode == heads::LambdaMode::kDetached ? ad::detach(parts.lambda) : parts.lambda;
    return l;
  }

  Prediction decode(const PreparedExample& ex, const ForwardPass& f) const {
    const auto& out = f.outputs;
    const std::size_t pb = ex.seq.passage_begin, pe = ex.seq.passage_end;
    const auto span = decode::decode_answer(out.p_start.values(), out.p_end.values(), pb, pe, config_.max_answer_len);
    Prediction p;
    p.start = span.start - pb;
    p.end = span.end - pb;
    p.answer_score = span.score;
    p.answer_chars = {ex.passage_pieces[p.start].char_begin, ex.passage_pieces[p.end].char_end};
    p.answer = text::char_slice(ex.passage, p.answer_chars.begin, p.answer_chars.end);

    const auto support = out.p_support.values().subspan(pb, pe - pb);
    p.support_sentence = decode::decode_support(support, ex.sentences, {p.start, p.end, 0.0}, config_.enforce_containment);
    p.support_tokens = ex.sentences[p.support_sentence];
    double total = 0.0;
    for (std::size_t i = p.support_tokens.first; i < p.support_tokens.second; ++i) total += support[i];
    p.support_score = total / static_cast<double>(p.support_tokens.second - p.support_tokens.first);
    p.support_chars = {ex.passage_pieces[p.support_tokens.first].char_begin,
                       ex.passage_pieces[p.support_tokens.second - 1].char_end};
    p.support = text::char_slice(ex.passage, p.support_chars.begin, p.support_chars.end);
    return p;
  }

  Prediction predict(const PreparedExample& ex) const {
    ad::NoGrad<Real> no_grad;
    return decode(ex, forward(ex, encoder::Mode::kEval));
  }

 private:
  void add_entity_table() { params_.add(kEntityTable, entity_table_tensor(), config_.fine_tune_entities); }

  PreparedExample prepare_text(const std::string& id, const std::string& question, const std::string& passage,
                               const std::vector<Candidate>* candidates) const {
    PreparedExample ex;
    ex.id = id;
    ex.passage = passage;
    const auto q_pieces = encoder::split_pieces(question);
    auto p_pieces = encoder::split_pieces(passage);
    if (q_pieces.empty()) throw ValidationError("record '" + id + "': question has no tokens");
    if (p_pieces.empty()) throw ValidationError("record '" + id + "': passage has no tokens");
    ex.seq = encoder::pack(vocab_.encode(q_pieces), vocab_.encode(p_pieces), config_.encoder.max_seq_len);
    p_pieces.resize(ex.seq.passage_end - ex.seq.passage_begin);
    ex.passage_pieces = p_pieces;
    std::vector<std::string> p_tokens;
    for (const auto& p : p_pieces) p_tokens.push_back(p.text);
    ex.sentences = decode::segment_sentences(p_tokens);
    ex.passage_mask = ex.seq.passage_mask();

    std::vector<retrieval::CandidateSpan> spans;
    if (candidates && !candidates->empty()) {
      for (const auto& c : *candidates) {
        const bool in_question = c.field == Field::kQuestion;
        const auto& pieces = in_question ? q_pieces : p_pieces;
        const auto [first, last] = pieces_covering(pieces, c.span);
        if (first >= last) continue;  // truncated away
        const std::size_t base = in_question ? 1 : ex.seq.passage_begin;
        const std::string& source = in_question ? question : passage;
        spans.push_back({base + first, base + last, text::char_slice(source, c.span.begin, c.span.end), c.lexical_class});
      }
    } else {
      std::vector<std::string> q_tokens;
      for (const auto& p : q_pieces) q_tokens.push_back(p.text);
      spans = retrieval::dictionary_candidates(q_tokens, index_, 1);
      auto more = retrieval::dictionary_candidates(p_tokens, index_, ex.seq.passage_begin);
      spans.insert(spans.end(), more.begin(), more.end());
    }
    ex.entities = retrieval::build_token_entity_map(ex.seq.length(), spans, index_, config_.retrieval);
    return ex;
  }

  ModelConfig config_;
  encoder::Vocabulary vocab_;
  std::vector<std::string> entity_names_;
  std::vector<Real> entity_values_;
  retrieval::EntityIndex index_;
  encoder::Encoder<Real> encoder_;
  ad::ParameterSet<Real> params_;
};

// Batch objective: mean L_A + (mean lambda) * mean L_S.
struct BatchLoss {
  Tensor<Real> answer, support, lambda, total;
  std::size_t degenerate = 0;
};

inline Tensor<Real> mean_of(const std::vector<Tensor<Real>>& xs) {
  Tensor<Real> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ad::add(acc, xs[i]);
  return ad::scale(acc, Real(1) / static_cast<Real>(xs.size()));
}

inline BatchLoss combine(const std::vector<ExampleLoss>& losses) {
  if (losses.empty()) throw Error("combine: empty batch");
  std::vector<Tensor<Real>> a, s, l;
  BatchLoss b;
  for (const auto& x : losses) {
    a.push_back(x.answer);
    s.push_back(x.support);
    l.push_back(x.lambda);
    b.degenerate += x.degenerate ? 1 : 0;
  }
  b.answer = mean_of(a);
  b.support = mean_of(s);
  b.lambda = mean_of(l);
  b.total = heads::total_loss(b.answer, b.support, b.lambda);
  return b;
}

}  // namespace kfmrc::harness
