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
#include <array>
#include <map>
#include <string>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/text/utf8.hpp"

namespace kfmrc::decode {

// Drops all whitespace (which also trims).
inline std::u32string normalize_answer(const std::string& s) {
  std::u32string out;
  for (char32_t c : text::decode_utf8(s))
    if (!text::is_space(c)) out.push_back(c);
  return out;
}

inline double em_score(const std::string& prediction, const std::vector<std::string>& references) {
  if (references.empty()) throw Error("em_score: no references");
  const std::u32string p = normalize_answer(prediction);
  for (const auto& r : references)
    if (normalize_answer(r) == p) return 1.0;
  return 0.0;
}

// Character-multiset F1 for one reference.
inline double char_f1(const std::u32string& prediction, const std::u32string& reference) {
  if (prediction.empty() || reference.empty()) return prediction == reference ? 1.0 : 0.0;
  std::map<char32_t, long> counts;
  for (char32_t c : reference) ++counts[c];
  long common = 0;
  for (char32_t c : prediction) {
    auto it = counts.find(c);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  // 2PR/(P+R) with P = c/|p|, R = c/|r| reduces to 2c/(|p|+|r|).
  return 2.0 * static_cast<double>(common) / static_cast<double>(prediction.size() + reference.size());
}

inline double f1_score(const std::string& prediction, const std::vector<std::string>& references) {
  if (references.empty()) throw Error("f1_score: no references");
  const std::u32string p = normalize_answer(prediction);
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, char_f1(p, normalize_answer(r)));
  return best;
}

enum class ErrorType { kExact, kStartCross, kEndCross, kSubstring, kOther };

inline constexpr std::array<ErrorType, 5> kErrorTypes = {ErrorType::kExact, ErrorType::kStartCross,
                                                         ErrorType::kEndCross, ErrorType::kSubstring,
                                                         ErrorType::kOther};

inline std::string error_type_name(ErrorType t) {
  switch (t) {
    case ErrorType::kExact: return "exact";
    case ErrorType::kStartCross: return "start_cross";
    case ErrorType::kEndCross: return "end_cross";
    case ErrorType::kSubstring: return "substring";
    case ErrorType::kOther: return "other";
  }
  return "other";
}

// Geometry of a predicted inclusive span [a, b] relative to gold [c, d].
inline ErrorType classify_error(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  if (a > b || c > d) throw Error("classify_error: spans must satisfy start <= end");
  if (a == c && b == d) return ErrorType::kExact;
  if (c <= a && b <= d) return ErrorType::kSubstring;
  if (a < c && c <= b && b <= d) return ErrorType::kStartCross;
  if (c <= a && a <= d && d < b) return ErrorType::kEndCross;
  return ErrorType::kOther;
}

}  // namespace kfmrc::decode
