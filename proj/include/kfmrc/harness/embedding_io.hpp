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

#include <string>
#include <vector>

#include <json.hpp>

#include "kfmrc/harness/dataset.hpp"
#include "kfmrc/kg/embedding.hpp"

namespace kfmrc::harness {

inline json embedding_to_json(const kg::KnowledgeBase& kb, const kg::EntityEmbedding& emb) {
  return {{"dim", emb.dim},
          {"norm", kg::norm_name(emb.norm)},
          {"entities", kb.entity_names()},
          {"relations", kb.relation_names()},
          {"entity_values", emb.entities},
          {"relation_values", emb.relations}};
}

inline void save_embedding(const std::string& path, const kg::KnowledgeBase& kb, const kg::EntityEmbedding& emb) {
  write_file(path, embedding_to_json(kb, emb).dump() + "\n");
}

// Entity and relation names must match the KB in id order.
inline kg::EntityEmbedding load_embedding(const std::string& path, const kg::KnowledgeBase& kb) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  kg::EntityEmbedding emb;
  try {
    emb.dim = j.at("dim").get<std::size_t>();
    emb.norm = kg::parse_norm(j.at("norm").get<std::string>());
    if (j.at("entities").get<std::vector<std::string>>() != kb.entity_names() ||
        j.at("relations").get<std::vector<std::string>>() != kb.relation_names()) {
      throw ValidationError(path + ": embedding names do not match the knowledge base");
    }
    emb.entities = j.at("entity_values").get<std::vector<double>>();
    emb.relations = j.at("relation_values").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (emb.entities.size() != kb.entity_count() * emb.dim || emb.relations.size() != kb.relation_count() * emb.dim) {
    throw ValidationError(path + ": value arrays do not match dim x count");
  }
  return emb;
}

}  // namespace kfmrc::harness
