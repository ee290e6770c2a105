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

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kfmrc/decode/metrics.hpp"
#include "kfmrc/harness/model.hpp"

namespace kfmrc::harness {

struct ExampleResult {
  std::string id;
  Prediction prediction;
  double answer_em = 0.0, answer_f1 = 0.0;
  double support_em = 0.0, support_f1 = 0.0;
  decode::ErrorType support_error = decode::ErrorType::kOther;
  decode::ErrorType answer_error = decode::ErrorType::kOther;
};

struct MetricReport {
  double answer_em = 0.0, answer_f1 = 0.0;
  double support_em = 0.0, support_f1 = 0.0;
  std::map<std::string, std::size_t> errors;         // support-sentence geometry
  std::map<std::string, std::size_t> answer_errors;  // answer-span geometry
  std::vector<ExampleResult> per_example;

  json to_json() const {
    json rows = json::array();
    for (const auto& r : per_example) {
      rows.push_back({{"id", r.id},
                      {"answer", r.prediction.answer},
                      {"answer_char_start", r.prediction.answer_chars.begin},
                      {"answer_char_end", r.prediction.answer_chars.end},
                      {"support", r.prediction.support},
                      {"support_sentence", r.prediction.support_sentence},
                      {"answer_em", r.answer_em},
                      {"answer_f1", r.answer_f1},
                      {"support_em", r.support_em},
                      {"support_f1", r.support_f1},
                      {"support_error", decode::error_type_name(r.support_error)},
                      {"answer_error", decode::error_type_name(r.answer_error)}});
    }
    return {{"answer", {{"em", answer_em}, {"f1", answer_f1}}},
            {"support", {{"em", support_em}, {"f1", support_f1}}},
            {"errors", errors},
            {"answer_errors", answer_errors},
            {"per_example", rows}};
  }

  std::string to_csv() const {
    std::ostringstream s;
    s << "id,answer_em,answer_f1,support_em,support_f1,support_error,answer_error\n";
    for (const auto& r : per_example) {
      s << '"' << r.id << "\"," << r.answer_em << ',' << r.answer_f1 << ',' << r.support_em << ',' << r.support_f1
        << ',' << decode::error_type_name(r.support_error) << ',' << decode::error_type_name(r.answer_error) << '\n';
    }
    return s.str();
  }
};

inline decode::ErrorType classify_chars(const CharSpan& pred, const CharSpan& gold) {
  return decode::classify_error(pred.begin, pred.end - 1, gold.begin, gold.end - 1);
}

inline ExampleResult score_example(const PreparedExample& ex, const Prediction& p) {
  if (ex.references.empty()) throw ValidationError("evaluate: record '" + ex.id + "' has no reference answers");
  ExampleResult r;
  r.id = ex.id;
  r.prediction = p;
  r.answer_em = decode::em_score(p.answer, ex.references);
  r.answer_f1 = decode::f1_score(p.answer, ex.references);
  r.support_em = decode::em_score(p.support, {ex.gold_support});
  r.support_f1 = decode::f1_score(p.support, {ex.gold_support});
  r.support_error = classify_chars(p.support_chars, ex.gold_support_chars);
  r.answer_error = classify_chars(p.answer_chars, ex.gold_answer_chars);
  return r;
}

inline MetricReport aggregate(std::vector<ExampleResult> rows) {
  MetricReport m;
  for (auto t : decode::kErrorTypes) {
    m.errors[decode::error_type_name(t)] = 0;
    m.answer_errors[decode::error_type_name(t)] = 0;
  }
  for (const auto& r : rows) {
    m.answer_em += r.answer_em;
    m.answer_f1 += r.answer_f1;
    m.support_em += r.support_em;
    m.support_f1 += r.support_f1;
    ++m.errors[decode::error_type_name(r.support_error)];
    ++m.answer_errors[decode::error_type_name(r.answer_error)];
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    m.answer_em /= n;
    m.answer_f1 /= n;
    m.support_em /= n;
    m.support_f1 /= n;
  }
  m.per_example = std::move(rows);
  return m;
}

inline MetricReport evaluate(const Model& model, const std::vector<PreparedExample>& data) {
  std::vector<ExampleResult> rows;
  rows.reserve(data.size());
  for (const auto& ex : data) rows.push_back(score_example(ex, model.predict(ex)));
  return aggregate(std::move(rows));
}

}  // namespace kfmrc::harness
