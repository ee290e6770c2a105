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
#include <span>
#include <string>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/text/utf8.hpp"

namespace kfmrc::decode {

// Inclusive token span.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;

  friend bool operator==(const Span& a, const Span& b) { return a.start == b.start && a.end == b.end; }
};

// argmax of p_start[i] * p_end[j] over begin <= i <= j < end with
// j - i < max_answer_len. Ties go to the smaller i, then the smaller j.
inline Span decode_answer(std::span<const double> p_start, std::span<const double> p_end, std::size_t begin,
                          std::size_t end, std::size_t max_answer_len = 40) {
  if (p_start.size() != p_end.size()) throw Error("decode_answer: distribution lengths differ");
  if (begin >= end || end > p_start.size()) throw Error("decode_answer: invalid passage range");
  if (max_answer_len == 0) throw Error("decode_answer: max_answer_len must be positive");
  Span best{begin, begin, -1.0};
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t last = std::min(end, i + max_answer_len);
    for (std::size_t j = i; j < last; ++j) {
      const double s = p_start[i] * p_end[j];
      if (s > best.score) best = {i, j, s};
    }
  }
  return best;
}

// Sentence ranges [begin, end) over passage token indices.
using Segmentation = std::vector<std::pair<std::size_t, std::size_t>>;

inline bool is_terminal(const std::string& token) {
  return token == "。" || token == "！" || token == "？" || token == "；";
}

inline bool is_closing_quote(const std::string& token) {
  return token == "”" || token == "’" || token == "」" || token == "』" || token == "\"" || token == "'";
}

// Splits after 。！？； (absorbing closing quotes that follow); a trailing
// fragment is its own sentence.
inline Segmentation segment_sentences(const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw Error("segment_sentences: empty passage");
  Segmentation out;
  std::size_t begin = 0;
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (is_terminal(tokens[i])) {
      std::size_t end = i + 1;
      while (end < tokens.size() && is_closing_quote(tokens[end])) ++end;
      out.emplace_back(begin, end);
      begin = end;
      i = end;
    } else {
      ++i;
    }
  }
  if (begin < tokens.size()) out.emplace_back(begin, tokens.size());
  return out;
}

inline std::size_t sentence_of(const Segmentation& seg, std::size_t token) {
  for (std::size_t s = 0; s < seg.size(); ++s)
    if (token >= seg[s].first && token < seg[s].second) return s;
  throw Error("sentence_of: token outside the segmentation");
}

// Sentence with the largest mean p_support (earliest on ties). p_support is
// indexed like the segmentation's token indices. With enforce_containment
// only sentences overlapping `answer` are eligible.
inline std::size_t decode_support(std::span<const double> p_support, const Segmentation& seg, const Span& answer,
                                  bool enforce_containment = false) {
  if (seg.empty()) throw Error("decode_support: empty segmentation");
  auto eligible = [&](std::size_t s) {
    if (!enforce_containment) return true;
    return seg[s].first <= answer.end && answer.start < seg[s].second;
  };
  bool any = false;
  for (std::size_t s = 0; s < seg.size() && !any; ++s) any = eligible(s);
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t s = 0; s < seg.size(); ++s) {
    if (any && !eligible(s)) continue;
    const auto [b, e] = seg[s];
    if (e > p_support.size() || b >= e) throw Error("decode_support: sentence outside the score vector");
    double total = 0.0;
    for (std::size_t i = b; i < e; ++i) total += p_support[i];
    const double mean = total / static_cast<double>(e - b);
    if (mean > best_score) {
      best_score = mean;
      best = s;
    }
  }
  return best;
}

}  // namespace kfmrc::decode
