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
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/text/utf8.hpp"

namespace kfmrc::encoder {

using TokenId = std::size_t;

inline constexpr TokenId kCls = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kPad = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kReserved = 4;

// A token with its scalar-value span [char_begin, char_end) in the source.
struct Piece {
  std::string text;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
};

// Character-level segmentation: each non-space scalar value is a token,
// except runs of ASCII letters/digits, which form one token. Whitespace is
// dropped.
inline std::vector<Piece> split_pieces(std::string_view utf8) {
  const std::u32string u = text::decode_utf8(utf8);
  std::vector<Piece> pieces;
  std::size_t i = 0;
  while (i < u.size()) {
    if (text::is_space(u[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (text::is_ascii_alnum(u[i])) {
      while (j < u.size() && text::is_ascii_alnum(u[j])) ++j;
    }
    pieces.push_back({text::encode_utf8(std::u32string_view(u).substr(i, j - i)), i, j});
    i = j;
  }
  return pieces;
}

class Vocabulary {
 public:
  Vocabulary() {
    tokens_ = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};
    for (TokenId i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = i;
  }

  // Adds a token if absent; returns its id.
  TokenId add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const TokenId id = tokens_.size();
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  void add_text(std::string_view utf8) {
    for (const auto& p : split_pieces(utf8)) add(p.text);
  }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  std::vector<TokenId> encode(const std::vector<Piece>& pieces) const {
    std::vector<TokenId> ids;
    ids.reserve(pieces.size());
    for (const auto& p : pieces) ids.push_back(id(p.text));
    return ids;
  }

  std::vector<TokenId> tokenize(std::string_view utf8) const { return encode(split_pieces(utf8)); }

  // One token per line; line k is id kReserved + k.
  std::string serialize() const {
    std::string out;
    for (TokenId i = kReserved; i < tokens_.size(); ++i) {
      out += tokens_[i];
      out += '\n';
    }
    return out;
  }

  static Vocabulary parse(const std::string& content) {
    Vocabulary v;
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) throw ParseError("vocabulary line " + std::to_string(line_no) + " is empty");
      if (v.ids_.count(line)) throw ParseError("vocabulary line " + std::to_string(line_no) + " duplicates a token");
      v.add(line);
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocabulary file " + path);
    out << serialize();
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read vocabulary file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  // FNV-1a over the serialized form.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : serialize()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace kfmrc::encoder
