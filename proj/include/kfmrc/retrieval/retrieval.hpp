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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/kg/knowledge_base.hpp"
#include "kfmrc/text/utf8.hpp"

namespace kfmrc::retrieval {

using kg::EntityId;

// Unit-cost insert/delete/substitute distance over scalar values.
inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return a.size();
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  return levenshtein(text::decode_utf8(a), text::decode_utf8(b));
}

// Size of the multiset intersection of the characters of a and b.
inline std::size_t char_overlap(std::u32string_view a, std::u32string_view b) {
  std::unordered_map<char32_t, std::size_t> counts;
  for (char32_t c : b) ++counts[c];
  std::size_t shared = 0;
  for (char32_t c : a) {
    auto it = counts.find(c);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++shared;
    }
  }
  return shared;
}

enum class LexicalClass { kNoun, kTime, kLocation, kDirection, kNumeric };

inline LexicalClass parse_lexical_class(const std::string& s) {
  if (s == "noun") return LexicalClass::kNoun;
  if (s == "time") return LexicalClass::kTime;
  if (s == "location") return LexicalClass::kLocation;
  if (s == "direction") return LexicalClass::kDirection;
  if (s == "numeric") return LexicalClass::kNumeric;
  throw ParseError("unknown lexical class '" + s + "'");
}

inline std::string lexical_class_name(LexicalClass c) {
  switch (c) {
    case LexicalClass::kNoun: return "noun";
    case LexicalClass::kTime: return "time";
    case LexicalClass::kLocation: return "location";
    case LexicalClass::kDirection: return "direction";
    case LexicalClass::kNumeric: return "numeric";
  }
  return "noun";
}

// Token range [begin, end) in the packed sequence.
struct CandidateSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string surface;
  LexicalClass lexical_class = LexicalClass::kNoun;
};

// Declaration order is match precedence.
enum class Strategy { kExact = 0, kEdit = 1, kOverlap = 2 };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kExact: return "exact";
    case Strategy::kEdit: return "edit";
    case Strategy::kOverlap: return "overlap";
  }
  return "exact";
}

struct MatchResult {
  EntityId entity = 0;
  Strategy strategy = Strategy::kExact;
  double score = 0.0;  // 0 (exact), edit distance (edit), overlap ratio (overlap)

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

// Precedence, then score (ascending distance; descending overlap ratio),
// then entity id.
inline bool match_order(const MatchResult& a, const MatchResult& b) {
  if (a.strategy != b.strategy) return a.strategy < b.strategy;
  if (a.score != b.score) return a.strategy == Strategy::kOverlap ? a.score > b.score : a.score < b.score;
  return a.entity < b.entity;
}

struct RetrievalConfig {
  std::size_t edit_threshold = 2;  // edit match iff distance < threshold
  double overlap_ratio = 0.5;      // overlap match iff shared chars > ratio * |candidate|
  std::size_t k_max = 8;

  void validate() const {
    if (edit_threshold == 0) throw Error("retrieval: edit threshold must be positive");
    if (!(overlap_ratio > 0.0)) throw Error("retrieval: overlap ratio must be positive");
    if (k_max == 0) throw Error("retrieval: k_max must be at least 1");
  }
};

// Entity surfaces of a knowledge base, pre-decoded for matching.
class EntityIndex {
 public:
  EntityIndex() = default;
  explicit EntityIndex(const kg::KnowledgeBase& kb) : EntityIndex(kb.entity_names()) {}
  explicit EntityIndex(const std::vector<std::string>& names) {
    surfaces_.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      surfaces_.push_back(text::decode_utf8(names[i]));
      by_surface_.emplace(names[i], i);
      max_length_ = std::max(max_length_, surfaces_.back().size());
    }
  }

  std::size_t size() const { return surfaces_.size(); }
  const std::u32string& surface(EntityId id) const { return surfaces_.at(id); }
  std::size_t max_length() const { return max_length_; }
  std::optional<EntityId> exact(const std::string& s) const {
    auto it = by_surface_.find(s);
    if (it == by_surface_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::u32string> surfaces_;
  std::unordered_map<std::string, EntityId> by_surface_;
  std::size_t max_length_ = 0;
};

// Exact, edit-distance and character-overlap matches of one candidate,
// deduplicated (best strategy per entity) and sorted by match_order.
inline std::vector<MatchResult> match_entity(const CandidateSpan& candidate, const EntityIndex& index,
                                             const RetrievalConfig& cfg) {
  cfg.validate();
  const std::u32string cand = text::decode_utf8(candidate.surface);
  std::vector<MatchResult> out;
  if (cand.empty()) return out;
  for (EntityId e = 0; e < index.size(); ++e) {
    const std::u32string& s = index.surface(e);
    if (s == cand) {
      out.push_back({e, Strategy::kExact, 0.0});
      continue;
    }
    const std::size_t len_gap = s.size() > cand.size() ? s.size() - cand.size() : cand.size() - s.size();
    if (len_gap < cfg.edit_threshold) {
      const std::size_t d = levenshtein(cand, s);
      if (d < cfg.edit_threshold) {
        out.push_back({e, Strategy::kEdit, static_cast<double>(d)});
        continue;
      }
    }
    const std::size_t shared = char_overlap(cand, s);
    if (static_cast<double>(shared) > cfg.overlap_ratio * static_cast<double>(cand.size())) {
      out.push_back({e, Strategy::kOverlap, static_cast<double>(shared) / static_cast<double>(cand.size())});
    }
  }
  std::sort(out.begin(), out.end(), match_order);
  return out;
}

inline std::vector<MatchResult> match_entity(const CandidateSpan& candidate, const kg::KnowledgeBase& kb,
                                             const RetrievalConfig& cfg) {
  return match_entity(candidate, EntityIndex(kb), cfg);
}

// Per-position entity lists for a packed sequence.
struct TokenEntityMap {
  std::vector<std::vector<EntityId>> entities;

  std::size_t size() const { return entities.size(); }
  const std::vector<EntityId>& at(std::size_t i) const { return entities.at(i); }
  std::size_t covered_tokens() const {
    return static_cast<std::size_t>(std::count_if(entities.begin(), entities.end(),
                                                   [](const auto& v) { return !v.empty(); }));
  }
};

// Every token inside a candidate inherits the candidate's matches; lists
// are merged across overlapping candidates (best match per entity kept),
// ordered by match_order and truncated to k_max.
inline TokenEntityMap build_token_entity_map(std::size_t sequence_length,
                                             const std::vector<CandidateSpan>& candidates,
                                             const std::vector<std::vector<MatchResult>>& matches,
                                             const RetrievalConfig& cfg) {
  cfg.validate();
  if (matches.size() != candidates.size()) throw Error("build_token_entity_map: one match list per candidate required");
  std::vector<std::map<EntityId, MatchResult>> best(sequence_length);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& span = candidates[c];
    if (span.begin >= span.end || span.end > sequence_length) {
      throw Error("build_token_entity_map: candidate [" + std::to_string(span.begin) + ", " +
                  std::to_string(span.end) + ") outside sequence of length " + std::to_string(sequence_length));
    }
    for (std::size_t i = span.begin; i < span.end; ++i) {
      for (const auto& m : matches[c]) {
        auto [it, inserted] = best[i].emplace(m.entity, m);
        if (!inserted && match_order(m, it->second)) it->second = m;
      }
    }
  }
  TokenEntityMap map;
  map.entities.resize(sequence_length);
  for (std::size_t i = 0; i < sequence_length; ++i) {
    std::vector<MatchResult> list;
    for (const auto& [id, m] : best[i]) list.push_back(m);
    std::sort(list.begin(), list.end(), match_order);
    if (list.size() > cfg.k_max) list.resize(cfg.k_max);
    for (const auto& m : list) map.entities[i].push_back(m.entity);
  }
  return map;
}

inline TokenEntityMap build_token_entity_map(std::size_t sequence_length,
                                             const std::vector<CandidateSpan>& candidates,
                                             const EntityIndex& index, const RetrievalConfig& cfg) {
  std::vector<std::vector<MatchResult>> matches;
  matches.reserve(candidates.size());
  for (const auto& c : candidates) matches.push_back(match_entity(c, index, cfg));
  return build_token_entity_map(sequence_length, candidates, matches, cfg);
}

// Fallback tagger: greedy longest exact dictionary hits over token strings.
// `offset` shifts the emitted token ranges (e.g. into a packed sequence).
inline std::vector<CandidateSpan> dictionary_candidates(const std::vector<std::string>& tokens,
                                                        const EntityIndex& index, std::size_t offset = 0) {
  std::vector<CandidateSpan> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t best_end = 0;
    std::string surface, best_surface;
    std::size_t chars = 0;
    for (std::size_t j = i; j < tokens.size(); ++j) {
      surface += tokens[j];
      chars += text::char_length(tokens[j]);
      if (chars > index.max_length()) break;
      if (index.exact(surface)) {
        best_end = j + 1;
        best_surface = surface;
      }
    }
    if (best_end) {
      out.push_back({offset + i, offset + best_end, best_surface, LexicalClass::kNoun});
      i = best_end;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace kfmrc::retrieval
