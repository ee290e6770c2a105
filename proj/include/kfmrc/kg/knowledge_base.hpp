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
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kfmrc/core/errors.hpp"

namespace kfmrc::kg {

using EntityId = std::size_t;
using RelationId = std::size_t;

struct Triple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

// Entity/relation vocabularies (ids assigned in first-appearance order),
// deduplicated triples and a subject adjacency index.
class KnowledgeBase {
 public:
  struct Edge {
    RelationId relation;
    EntityId object;
  };

  EntityId add_entity(const std::string& name) { return intern(name, entity_ids_, entities_, adjacency_); }

  RelationId add_relation(const std::string& name) {
    auto it = relation_ids_.find(name);
    if (it != relation_ids_.end()) return it->second;
    const RelationId id = relations_.size();
    relation_ids_.emplace(name, id);
    relations_.push_back(name);
    return id;
  }

  // Returns false when the triple was already present.
  bool add_triple(const std::string& subject, const std::string& relation, const std::string& object) {
    const EntityId s = add_entity(subject);
    const RelationId r = add_relation(relation);
    const EntityId o = add_entity(object);
    return add_triple(Triple{s, r, o});
  }

  bool add_triple(const Triple& t) {
    if (t.subject >= entities_.size() || t.object >= entities_.size() || t.relation >= relations_.size()) {
      throw Error("add_triple: id out of vocabulary");
    }
    if (t.object >= (1u << 20) || t.relation >= (1u << 20)) throw Error("add_triple: vocabulary too large");
    if (!triple_set_.insert(key(t)).second) return false;
    triples_.push_back(t);
    adjacency_[t.subject].push_back({t.relation, t.object});
    return true;
  }

  bool contains(const Triple& t) const { return triple_set_.count(key(t)) != 0; }

  std::size_t entity_count() const { return entities_.size(); }
  std::size_t relation_count() const { return relations_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<std::string>& entity_names() const { return entities_; }
  const std::vector<std::string>& relation_names() const { return relations_; }
  const std::string& entity_name(EntityId id) const { return entities_.at(id); }
  const std::string& relation_name(RelationId id) const { return relations_.at(id); }
  const std::vector<Edge>& edges_from(EntityId s) const { return adjacency_.at(s); }

  std::optional<EntityId> find_entity(const std::string& name) const {
    auto it = entity_ids_.find(name);
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<RelationId> find_relation(const std::string& name) const {
    auto it = relation_ids_.find(name);
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
  }

  std::string to_tsv() const {
    std::string out;
    for (const auto& t : triples_) {
      out += entities_[t.subject] + '\t' + relations_[t.relation] + '\t' + entities_[t.object] + '\n';
    }
    return out;
  }

 private:
  static std::uint64_t key(const Triple& t) {
    // Packs ids into 64 bits; add_triple() rejects ids that do not fit.
    return (static_cast<std::uint64_t>(t.subject) << 40) | (static_cast<std::uint64_t>(t.relation) << 20) |
           static_cast<std::uint64_t>(t.object);
  }

  static std::size_t intern(const std::string& name, std::unordered_map<std::string, std::size_t>& ids,
                            std::vector<std::string>& names, std::vector<std::vector<Edge>>& adjacency) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    const std::size_t id = names.size();
    ids.emplace(name, id);
    names.push_back(name);
    adjacency.emplace_back();
    return id;
  }

  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::vector<Triple> triples_;
  std::unordered_set<std::uint64_t> triple_set_;
  std::vector<std::vector<Edge>> adjacency_;
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t duplicates = 0;
};

// Reads `subject<TAB>relation<TAB>object` lines; `#` lines and blank lines
// are skipped.
inline KnowledgeBase parse_triples(std::istream& in, LoadReport* report = nullptr) {
  KnowledgeBase kb;
  LoadReport local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw ParseError("triple file line " + std::to_string(line_no) +
                       ": expected 3 non-empty tab-separated fields, got " + std::to_string(fields.size()));
    }
    ++local.lines;
    if (!kb.add_triple(fields[0], fields[1], fields[2])) ++local.duplicates;
  }
  if (report) *report = local;
  return kb;
}

inline KnowledgeBase load_triples(const std::string& path, LoadReport* report = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read triple file " + path);
  return parse_triples(in, report);
}

inline void save_triples(const KnowledgeBase& kb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write triple file " + path);
  out << kb.to_tsv();
}

}  // namespace kfmrc::kg
