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
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/kg/knowledge_base.hpp"

namespace kfmrc::kg {

enum class Norm { kL1, kL2 };

inline Norm parse_norm(const std::string& s) {
  if (s == "L1" || s == "l1") return Norm::kL1;
  if (s == "L2" || s == "l2") return Norm::kL2;
  throw Error("unknown norm '" + s + "' (expected L1 or L2)");
}

inline std::string norm_name(Norm n) { return n == Norm::kL1 ? "L1" : "L2"; }

struct KgTrainConfig {
  std::size_t d2 = 64;
  double margin = 1.0;
  Norm norm = Norm::kL1;
  std::size_t negatives = 1;
  double learning_rate = 0.01;
  std::size_t epochs = 100;
  double path_weight = 0.0;  // weight of the 2-step relation-path term
  std::uint64_t seed = 0;

  void validate() const {
    if (d2 == 0) throw Error("kg: d2 must be positive");
    if (!(margin > 0.0)) throw Error("kg: margin must be positive");
    if (negatives == 0) throw Error("kg: negatives per positive must be positive");
    if (learning_rate < 0.0) throw Error("kg: learning rate must be non-negative");
    if (path_weight < 0.0) throw Error("kg: path weight must be non-negative");
  }
};

// Entity matrix E [|V| x d2] and relation matrix R [|R| x d2], row-major.
struct EntityEmbedding {
  std::size_t dim = 0;
  Norm norm = Norm::kL1;
  std::vector<double> entities;
  std::vector<double> relations;

  std::size_t entity_count() const { return dim ? entities.size() / dim : 0; }
  std::size_t relation_count() const { return dim ? relations.size() / dim : 0; }
  const double* entity(EntityId e) const { return entities.data() + e * dim; }
  const double* relation(RelationId r) const { return relations.data() + r * dim; }
  double* entity(EntityId e) { return entities.data() + e * dim; }
  double* relation(RelationId r) { return relations.data() + r * dim; }
};

inline double distance(const double* v, std::size_t n, Norm norm) {
  double acc = 0.0;
  if (norm == Norm::kL1) {
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(v[i]);
    return acc;
  }
  for (std::size_t i = 0; i < n; ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

// ||e_s + r - e_o|| under the embedding's norm; lower is more plausible.
inline double score_triple(const EntityEmbedding& emb, EntityId s, RelationId r, EntityId o) {
  if (s >= emb.entity_count() || o >= emb.entity_count()) throw Error("score_triple: entity id out of range");
  if (r >= emb.relation_count()) throw Error("score_triple: relation id out of range");
  std::vector<double> diff(emb.dim);
  for (std::size_t i = 0; i < emb.dim; ++i) diff[i] = emb.entity(s)[i] + emb.relation(r)[i] - emb.entity(o)[i];
  return distance(diff.data(), emb.dim, emb.norm);
}

// 1-based rank of the true object among all entities by score, skipping
// other objects o' with (s, r, o') in the KB when `filtered` is set.
inline std::size_t tail_rank(const KnowledgeBase& kb, const EntityEmbedding& emb, const Triple& t,
                             bool filtered = true) {
  const double truth = score_triple(emb, t.subject, t.relation, t.object);
  std::size_t rank = 1;
  for (EntityId o = 0; o < emb.entity_count(); ++o) {
    if (o == t.object) continue;
    if (filtered && kb.contains(Triple{t.subject, t.relation, o})) continue;
    if (score_triple(emb, t.subject, t.relation, o) < truth) ++rank;
  }
  return rank;
}

struct Neighbor {
  EntityId entity;
  double distance;
};

// The k entities closest to `query` in L2, ascending (ties by id).
inline std::vector<Neighbor> nearest_neighbors(const EntityEmbedding& emb, EntityId query, std::size_t k) {
  const std::size_t n = emb.entity_count();
  if (query >= n) throw Error("nearest_neighbors: entity id out of range");
  if (k >= n) throw Error("nearest_neighbors: k must be smaller than the entity count");
  std::vector<Neighbor> all;
  all.reserve(n - 1);
  std::vector<double> diff(emb.dim);
  for (EntityId e = 0; e < n; ++e) {
    if (e == query) continue;
    for (std::size_t i = 0; i < emb.dim; ++i) diff[i] = emb.entity(e)[i] - emb.entity(query)[i];
    all.push_back({e, distance(diff.data(), emb.dim, Norm::kL2)});
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.entity < b.entity);
  });
  all.resize(k);
  return all;
}

// A 2-step path s -r1-> m -r2-> o supporting a direct triple (s, r, o).
struct RelationPath {
  RelationId first;
  RelationId second;
  double reliability;  // 1 / number of 2-step paths from s to o
};

// Enumerates 2-step paths for every triple, indexed like kb.triples().
inline std::vector<std::vector<RelationPath>> two_step_paths(const KnowledgeBase& kb) {
  std::vector<std::vector<RelationPath>> paths(kb.triples().size());
  for (std::size_t t = 0; t < kb.triples().size(); ++t) {
    const Triple& tr = kb.triples()[t];
    std::vector<std::pair<RelationId, RelationId>> found;
    for (const auto& e1 : kb.edges_from(tr.subject)) {
      for (const auto& e2 : kb.edges_from(e1.object)) {
        if (e2.object == tr.object) found.emplace_back(e1.relation, e2.relation);
      }
    }
    for (const auto& [r1, r2] : found) {
      paths[t].push_back({r1, r2, 1.0 / static_cast<double>(found.size())});
    }
  }
  return paths;
}

struct KgTrainReport {
  std::vector<double> epoch_loss;  // mean margin loss per positive
  std::vector<double> path_loss;   // mean weighted path residual per epoch (if enabled)
  std::size_t skipped_negatives = 0;
};

// Margin-ranking translational embedding training with uniform head/tail
// corruption and an optional additive 2-step path composition term.
class EmbeddingTrainer {
 public:
  EmbeddingTrainer(const KnowledgeBase& kb, KgTrainConfig config) : kb_(kb), config_(config) {
    config_.validate();
    if (kb_.triples().empty()) throw Error("train_embeddings: knowledge base has no triples");
    rng_.seed(config_.seed);
    init();
    if (config_.path_weight > 0.0) paths_ = two_step_paths(kb_);
  }

  const EntityEmbedding& embedding() const { return emb_; }
  const KgTrainReport& report() const { return report_; }

  // Weighted path residual sum_t sum_paths reliability * ||r1 + r2 - r||.
  double path_residual() const {
    double total = 0.0;
    std::vector<double> diff(emb_.dim);
    for (std::size_t t = 0; t < paths_.size(); ++t) {
      for (const auto& p : paths_[t]) {
        path_difference(p, kb_.triples()[t].relation, diff);
        total += p.reliability * distance(diff.data(), emb_.dim, emb_.norm);
      }
    }
    return total;
  }

  void run_epoch() {
    std::vector<std::size_t> order(kb_.triples().size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    double loss = 0.0;
    std::uniform_int_distribution<EntityId> pick_entity(0, kb_.entity_count() - 1);
    std::bernoulli_distribution corrupt_head(0.5);
    for (std::size_t idx : order) {
      const Triple& pos = kb_.triples()[idx];
      for (std::size_t n = 0; n < config_.negatives; ++n) {
        Triple neg = pos;
        bool found = false;
        for (int attempt = 0; attempt < 100 && !found; ++attempt) {
          neg = pos;
          if (corrupt_head(rng_)) {
            neg.subject = pick_entity(rng_);
          } else {
            neg.object = pick_entity(rng_);
          }
          found = !kb_.contains(neg);
        }
        if (!found) {
          ++report_.skipped_negatives;
          continue;
        }
        loss += margin_step(pos, neg);
      }
      if (!paths_.empty()) path_step(idx);
    }
    const double mean_loss = loss / static_cast<double>(order.size() * config_.negatives);
    if (!std::isfinite(mean_loss)) {
      throw NumericError("train_embeddings: loss diverged at epoch " + std::to_string(report_.epoch_loss.size() + 1) +
                         " (try a smaller learning rate)");
    }
    report_.epoch_loss.push_back(mean_loss);
    if (!paths_.empty()) report_.path_loss.push_back(path_residual());
  }

  EntityEmbedding train() {
    for (std::size_t e = 0; e < config_.epochs; ++e) run_epoch();
    return emb_;
  }

 private:
  void init() {
    emb_.dim = config_.d2;
    emb_.norm = config_.norm;
    const double bound = 6.0 / std::sqrt(static_cast<double>(config_.d2));
    std::uniform_real_distribution<double> uni(-bound, bound);
    emb_.entities.resize(kb_.entity_count() * config_.d2);
    emb_.relations.resize(kb_.relation_count() * config_.d2);
    for (double& v : emb_.relations) v = uni(rng_);
    for (RelationId r = 0; r < kb_.relation_count(); ++r) normalize(emb_.relation(r));
    for (double& v : emb_.entities) v = uni(rng_);
    for (EntityId e = 0; e < kb_.entity_count(); ++e) normalize(emb_.entity(e));
  }

  void normalize(double* v) const {
    double n2 = 0.0;
    for (std::size_t i = 0; i < emb_.dim; ++i) n2 += v[i] * v[i];
    const double n = std::sqrt(n2);
    if (std::abs(n - 1.0) < 1e-12 || n == 0.0) return;
    for (std::size_t i = 0; i < emb_.dim; ++i) v[i] /= n;
  }

  // d/dv of ||v|| under the configured norm.
  void norm_gradient(const std::vector<double>& v, std::vector<double>& g) const {
    g.resize(v.size());
    if (config_.norm == Norm::kL1) {
      for (std::size_t i = 0; i < v.size(); ++i) g[i] = v[i] > 0 ? 1.0 : (v[i] < 0 ? -1.0 : 0.0);
      return;
    }
    const double n = distance(v.data(), v.size(), Norm::kL2);
    for (std::size_t i = 0; i < v.size(); ++i) g[i] = n > 0 ? v[i] / n : 0.0;
  }

  void residual(const Triple& t, std::vector<double>& out) const {
    out.resize(emb_.dim);
    for (std::size_t i = 0; i < emb_.dim; ++i)
      out[i] = emb_.entity(t.subject)[i] + emb_.relation(t.relation)[i] - emb_.entity(t.object)[i];
  }

  double margin_step(const Triple& pos, const Triple& neg) {
    std::vector<double> rp, rn, gp, gn;
    residual(pos, rp);
    residual(neg, rn);
    const double loss = config_.margin + distance(rp.data(), emb_.dim, emb_.norm) -
                        distance(rn.data(), emb_.dim, emb_.norm);
    if (loss <= 0.0) return 0.0;
    norm_gradient(rp, gp);
    norm_gradient(rn, gn);
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < emb_.dim; ++i) {
      emb_.entity(pos.subject)[i] -= lr * gp[i];
      emb_.entity(pos.object)[i] += lr * gp[i];
      emb_.relation(pos.relation)[i] -= lr * gp[i];
      emb_.entity(neg.subject)[i] += lr * gn[i];
      emb_.entity(neg.object)[i] -= lr * gn[i];
      emb_.relation(neg.relation)[i] += lr * gn[i];
    }
    for (EntityId e : {pos.subject, pos.object, neg.subject, neg.object}) normalize(emb_.entity(e));
    return loss;
  }

  void path_difference(const RelationPath& p, RelationId direct, std::vector<double>& out) const {
    out.resize(emb_.dim);
    for (std::size_t i = 0; i < emb_.dim; ++i)
      out[i] = emb_.relation(p.first)[i] + emb_.relation(p.second)[i] - emb_.relation(direct)[i];
  }

  void path_step(std::size_t triple_index) {
    const RelationId direct = kb_.triples()[triple_index].relation;
    std::vector<double> diff, g;
    for (const auto& p : paths_[triple_index]) {
      path_difference(p, direct, diff);
      norm_gradient(diff, g);
      const double step = config_.learning_rate * config_.path_weight * p.reliability;
      for (std::size_t i = 0; i < emb_.dim; ++i) {
        emb_.relation(p.first)[i] -= step * g[i];
        emb_.relation(p.second)[i] -= step * g[i];
        emb_.relation(direct)[i] += step * g[i];
      }
    }
  }

  const KnowledgeBase& kb_;
  KgTrainConfig config_;
  std::mt19937_64 rng_;
  EntityEmbedding emb_;
  std::vector<std::vector<RelationPath>> paths_;
  KgTrainReport report_;
};

inline EntityEmbedding train_embeddings(const KnowledgeBase& kb, const KgTrainConfig& config,
                                        KgTrainReport* report = nullptr) {
  EmbeddingTrainer trainer(kb, config);
  EntityEmbedding emb = trainer.train();
  if (report) *report = trainer.report();
  return emb;
}

}  // namespace kfmrc::kg
