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

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/decode/decode.hpp"
#include "kfmrc/encoder/vocabulary.hpp"
#include "kfmrc/retrieval/retrieval.hpp"
#include "kfmrc/text/utf8.hpp"

namespace kfmrc::harness {

using json = nlohmann::json;

inline constexpr std::size_t kMaxAnswerTokens = 40;

// Character offsets count Unicode scalar values; ends are exclusive.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool contains(const CharSpan& o) const { return begin <= o.begin && o.end <= end; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

enum class Field { kQuestion, kPassage };

struct Candidate {
  Field field = Field::kPassage;
  CharSpan span;
  retrieval::LexicalClass lexical_class = retrieval::LexicalClass::kNoun;
};

struct QuadRecord {
  std::string id;
  std::string question;
  std::string passage;
  std::string answer_text;
  CharSpan answer;
  std::optional<std::size_t> support_sentence;  // one of these two is set
  std::optional<CharSpan> support_chars;
  std::vector<std::string> additional_answers;
  std::vector<Candidate> candidates;

  std::vector<std::string> references() const {
    std::vector<std::string> refs{answer_text};
    refs.insert(refs.end(), additional_answers.begin(), additional_answers.end());
    return refs;
  }
};

// Passage sentences as character ranges, derived from the token segmentation.
inline std::vector<CharSpan> sentence_char_spans(const std::string& passage) {
  const auto pieces = encoder::split_pieces(passage);
  if (pieces.empty()) throw ValidationError("passage has no tokens");
  std::vector<std::string> tokens;
  for (const auto& p : pieces) tokens.push_back(p.text);
  std::vector<CharSpan> out;
  for (const auto& [b, e] : decode::segment_sentences(tokens)) out.push_back({pieces[b].char_begin, pieces[e - 1].char_end});
  return out;
}

// Gold support range; a sentence index is resolved against the segmentation.
inline CharSpan support_span(const QuadRecord& r) {
  if (r.support_chars) return *r.support_chars;
  const auto sentences = sentence_char_spans(r.passage);
  if (!r.support_sentence || *r.support_sentence >= sentences.size()) {
    throw ValidationError("record '" + r.id + "': support sentence index out of range (" +
                          std::to_string(sentences.size()) + " sentences)");
  }
  return sentences[*r.support_sentence];
}

// Tokens whose characters intersect `span`, as [first, last) piece indices.
inline std::pair<std::size_t, std::size_t> pieces_covering(const std::vector<encoder::Piece>& pieces,
                                                           const CharSpan& span) {
  std::size_t first = pieces.size(), last = 0;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (pieces[i].char_end > span.begin && pieces[i].char_begin < span.end) {
      first = std::min(first, i);
      last = i + 1;
    }
  }
  if (first >= last) return {0, 0};
  return {first, last};
}

inline void validate_record(const QuadRecord& r) {
  auto fail = [&](const std::string& what) { throw ValidationError("record '" + r.id + "': " + what); };
  if (r.id.empty()) throw ValidationError("record without id");
  if (r.question.empty()) fail("empty question");
  const std::size_t plen = text::char_length(r.passage);
  if (plen == 0) fail("empty passage");
  if (r.answer.begin >= r.answer.end || r.answer.end > plen) {
    fail("answer offsets [" + std::to_string(r.answer.begin) + ", " + std::to_string(r.answer.end) +
         ") outside passage of length " + std::to_string(plen));
  }
  const std::string slice = text::char_slice(r.passage, r.answer.begin, r.answer.end);
  if (slice != r.answer_text) fail("answer offset mismatch: expected '" + r.answer_text + "', passage has '" + slice + "'");
  const CharSpan support = support_span(r);
  if (support.begin >= support.end || support.end > plen) fail("support offsets outside passage");
  if (!support.contains(r.answer)) {
    fail("support [" + std::to_string(support.begin) + ", " + std::to_string(support.end) +
         ") does not contain answer [" + std::to_string(r.answer.begin) + ", " + std::to_string(r.answer.end) + ")");
  }
  const std::size_t answer_tokens = encoder::split_pieces(r.answer_text).size();
  if (answer_tokens == 0) fail("answer has no tokens");
  if (answer_tokens > kMaxAnswerTokens) {
    fail("answer of " + std::to_string(answer_tokens) + " tokens exceeds " + std::to_string(kMaxAnswerTokens));
  }
  const std::size_t qlen = text::char_length(r.question);
  for (const auto& c : r.candidates) {
    const std::size_t limit = c.field == Field::kQuestion ? qlen : plen;
    if (c.span.begin >= c.span.end || c.span.end > limit) fail("candidate offsets out of range");
  }
}

inline CharSpan parse_span(const json& j, const std::string& where) {
  if (!j.contains("char_start") || !j.contains("char_end")) throw ParseError(where + ": missing char_start/char_end");
  const auto b = j.at("char_start").get<long long>();
  const auto e = j.at("char_end").get<long long>();
  if (b < 0 || e < 0) throw ParseError(where + ": negative offset");
  return {static_cast<std::size_t>(b), static_cast<std::size_t>(e)};
}

inline QuadRecord record_from_json(const json& j) {
  QuadRecord r;
  try {
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.question = j.at("question").get<std::string>();
    r.passage = j.at("passage").get<std::string>();
    const json& a = j.at("answer");
    r.answer_text = a.at("text").get<std::string>();
    r.answer = parse_span(a, "record '" + r.id + "' answer");
    const json& s = j.at("support");
    if (s.contains("sentence_index")) {
      r.support_sentence = s.at("sentence_index").get<std::size_t>();
    } else {
      r.support_chars = parse_span(s, "record '" + r.id + "' support");
    }
    if (j.contains("additional_answers")) r.additional_answers = j.at("additional_answers").get<std::vector<std::string>>();
    if (j.contains("candidates")) {
      for (const json& c : j.at("candidates")) {
        Candidate cand;
        cand.span = parse_span(c, "record '" + r.id + "' candidate");
        if (c.contains("class")) cand.lexical_class = retrieval::parse_lexical_class(c.at("class").get<std::string>());
        if (c.contains("field")) {
          const auto f = c.at("field").get<std::string>();
          if (f == "question") cand.field = Field::kQuestion;
          else if (f == "passage") cand.field = Field::kPassage;
          else throw ParseError("record '" + r.id + "': unknown candidate field '" + f + "'");
        }
        r.candidates.push_back(cand);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("record '" + r.id + "': " + e.what());
  }
  return r;
}

inline json record_to_json(const QuadRecord& r) {
  json j;
  j["id"] = r.id;
  j["question"] = r.question;
  j["passage"] = r.passage;
  j["answer"] = {{"text", r.answer_text}, {"char_start", r.answer.begin}, {"char_end", r.answer.end}};
  if (r.support_chars) {
    j["support"] = {{"char_start", r.support_chars->begin}, {"char_end", r.support_chars->end}};
  } else {
    j["support"] = {{"sentence_index", r.support_sentence.value_or(0)}};
  }
  j["additional_answers"] = r.additional_answers;
  if (!r.candidates.empty()) {
    json cs = json::array();
    for (const auto& c : r.candidates) {
      cs.push_back({{"field", c.field == Field::kQuestion ? "question" : "passage"},
                    {"char_start", c.span.begin},
                    {"char_end", c.span.end},
                    {"class", retrieval::lexical_class_name(c.lexical_class)}});
    }
    j["candidates"] = cs;
  }
  return j;
}

inline std::vector<QuadRecord> parse_dataset(const std::string& content, bool validate = true) {
  json root;
  try {
    root = json::parse(content);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("dataset is not valid JSON: ") + e.what());
  }
  if (!root.is_array()) throw ParseError("dataset must be a JSON array of records");
  std::vector<QuadRecord> out;
  out.reserve(root.size());
  for (const json& j : root) {
    out.push_back(record_from_json(j));
    if (validate) validate_record(out.back());
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << content;
  if (!out) throw Error("write failed: " + path);
}

inline std::vector<QuadRecord> load_dataset(const std::string& path, bool validate = true) {
  return parse_dataset(read_file(path), validate);
}

inline std::string dump_dataset(const std::vector<QuadRecord>& records) {
  json root = json::array();
  for (const auto& r : records) root.push_back(record_to_json(r));
  return root.dump(1) + "\n";
}

inline void save_dataset(const std::string& path, const std::vector<QuadRecord>& records) {
  write_file(path, dump_dataset(records));
}

}  // namespace kfmrc::harness
