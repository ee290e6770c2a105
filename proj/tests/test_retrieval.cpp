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

#include <gtest/gtest.h>

#include <json.hpp>

#include <fstream>
#include <random>
#include <set>

#include "kfmrc/retrieval/retrieval.hpp"
#include "kfmrc/text/utf8.hpp"
#include "test_util.hpp"

namespace {

using namespace kfmrc::retrieval;
using nlohmann::json;

CandidateSpan cand(const std::string& s, std::size_t b = 0, std::size_t e = 1) {
  return {b, e, s, LexicalClass::kNoun};
}

double fraction(const json& v) {
  if (v.is_number()) return v.get<double>();
  const auto s = v.get<std::string>();
  const auto slash = s.find('/');
  return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
}

TEST(Levenshtein, Examples) {
  EXPECT_EQ(levenshtein("感冒", "感冒"), 0u);
  EXPECT_EQ(levenshtein("感冒", "感冒药"), 1u);
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
}

TEST(Levenshtein, MetricPropertiesOnRandomStrings) {
  std::mt19937_64 rng(2);
  const std::u32string alphabet = kfmrc::text::decode_utf8("糖尿病感冒血压高低");
  auto draw = [&] {
    std::u32string s;
    const std::size_t n = rng() % 6;
    for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    return s;
  };
  for (int t = 0; t < 300; ++t) {
    auto a = draw(), b = draw(), c = draw();
    EXPECT_EQ(levenshtein(a, b), levenshtein(b, a));
    EXPECT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
    EXPECT_EQ(levenshtein(a, a), 0u);
  }
}

TEST(MatchEntity, Examples) {
  kfmrc::kg::KnowledgeBase kb;
  kb.add_entity("糖尿病");
  auto m = match_entity(cand("糖尿病"), kb, {});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0], (MatchResult{0, Strategy::kExact, 0.0}));

  EntityIndex cold({"感冒药"});
  auto e = match_entity(cand("感冒"), cold, {});
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].strategy, Strategy::kEdit);
  EXPECT_EQ(e[0].score, 1.0);

  EntityIndex platelets({"血小板"});
  EXPECT_TRUE(match_entity(cand("血小板无力症"), platelets, {}).empty());
}

TEST(MatchEntity, EditThresholdIsStrict) {
  EntityIndex idx({"高血压"});
  EXPECT_TRUE(match_entity(cand("低血糖"), idx, {}).empty());  // distance 2, overlap 1 of 3
  RetrievalConfig loose;
  loose.edit_threshold = 3;
  auto m = match_entity(cand("低血糖"), idx, loose);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].score, 2.0);
}

TEST(MatchEntity, OverlapRequiresMoreThanTheRatio) {
  EntityIndex idx({"心肌梗死"});
  // 4 of 6 shared characters: 4 > 3.
  auto m = match_entity(cand("急性心肌梗死"), idx, {});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].strategy, Strategy::kOverlap);
  EXPECT_EQ(m[0].score, 4.0 / 6.0);
  RetrievalConfig tight;
  tight.overlap_ratio = 4.0 / 6.0;
  EXPECT_TRUE(match_entity(cand("急性心肌梗死"), idx, tight).empty());
}

TEST(MatchEntity, GoldenTable) {
  std::ifstream in(kfmrc::testing::data_file("retrieval_golden.json"));
  const json g = json::parse(in);
  EntityIndex idx(g.at("entities").get<std::vector<std::string>>());
  RetrievalConfig cfg;
  cfg.edit_threshold = g.at("edit_threshold").get<std::size_t>();
  cfg.overlap_ratio = g.at("overlap_ratio").get<double>();
  ASSERT_EQ(g.at("cases").size(), 30u);
  for (const auto& c : g.at("cases")) {
    const auto surface = c.at("candidate").get<std::string>();
    const auto got = match_entity(cand(surface), idx, cfg);
    const auto& want = c.at("matches");
    ASSERT_EQ(got.size(), want.size()) << surface;
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(idx.surface(got[k].entity), kfmrc::text::decode_utf8(want[k].at("entity").get<std::string>())) << surface;
      EXPECT_EQ(strategy_name(got[k].strategy), want[k].at("strategy").get<std::string>()) << surface;
      EXPECT_EQ(got[k].score, fraction(want[k].at("score"))) << surface;
    }
  }
}

TEST(MatchEntity, ExactFirstDeterministicAndMonotone) {
  std::mt19937_64 rng(8);
  const std::u32string alphabet = kfmrc::text::decode_utf8("糖尿病感冒血压高低心肌炎");
  auto draw = [&](std::size_t lo, std::size_t hi) {
    std::u32string s;
    const std::size_t n = lo + rng() % (hi - lo + 1);
    for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    return kfmrc::text::encode_utf8(s);
  };
  for (int t = 0; t < 200; ++t) {
    std::vector<std::string> names;
    std::set<std::string> seen;
    while (names.size() < 12) {
      auto n = draw(1, 5);
      if (seen.insert(n).second) names.push_back(n);
    }
    EntityIndex idx(names);
    const std::string c = t % 4 == 0 ? names[rng() % names.size()] : draw(1, 5);
    const auto base = match_entity(cand(c), idx, {});
    EXPECT_EQ(base, match_entity(cand(c), idx, {}));
    bool past_exact = false;
    for (const auto& m : base) {
      if (m.strategy == Strategy::kExact) {
        EXPECT_FALSE(past_exact);
        EXPECT_EQ(m.score, 0.0);
      } else {
        past_exact = true;
      }
      if (m.strategy == Strategy::kEdit) EXPECT_GE(m.score, 1.0);
      if (m.strategy == Strategy::kOverlap) {
        EXPECT_GT(m.score, 0.0);
        EXPECT_LE(m.score, 1.0);
      }
    }
    RetrievalConfig looser;
    looser.edit_threshold = 3;
    looser.overlap_ratio = 0.25;
    std::set<EntityId> a, b;
    for (const auto& m : base) a.insert(m.entity);
    for (const auto& m : match_entity(cand(c), idx, looser)) b.insert(m.entity);
    EXPECT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end())) << c;
  }
}

TEST(TokenEntityMap, CandidateTokensInheritMatches) {
  std::vector<CandidateSpan> cs = {cand("x", 3, 5)};
  std::vector<std::vector<MatchResult>> ms = {{{4, Strategy::kExact, 0}, {7, Strategy::kEdit, 1}}};
  auto map = build_token_entity_map(8, cs, ms, {});
  ASSERT_EQ(map.size(), 8u);
  EXPECT_EQ(map.at(3), (std::vector<EntityId>{4, 7}));
  EXPECT_EQ(map.at(4), (std::vector<EntityId>{4, 7}));
  for (std::size_t i : {0u, 1u, 2u, 5u, 6u, 7u}) EXPECT_TRUE(map.at(i).empty());
  EXPECT_EQ(map.covered_tokens(), 2u);
}

TEST(TokenEntityMap, OverlappingCandidatesUnionAndDedupe) {
  std::vector<CandidateSpan> cs = {cand("a", 0, 3), cand("b", 2, 4)};
  std::vector<std::vector<MatchResult>> ms = {{{1, Strategy::kEdit, 1}, {2, Strategy::kOverlap, 0.6}},
                                              {{1, Strategy::kExact, 0}, {3, Strategy::kOverlap, 0.9}}};
  auto map = build_token_entity_map(4, cs, ms, {});
  // Entity 1 keeps its best (exact) match; overlaps sort by descending ratio.
  EXPECT_EQ(map.at(2), (std::vector<EntityId>{1, 3, 2}));
  EXPECT_EQ(map.at(0), (std::vector<EntityId>{1, 2}));
  EXPECT_EQ(map.at(3), (std::vector<EntityId>{1, 3}));
}

TEST(TokenEntityMap, TruncatesToKmaxByPrecedence) {
  std::vector<MatchResult> ten;
  for (EntityId e = 0; e < 10; ++e) ten.push_back({e, e < 2 ? Strategy::kOverlap : Strategy::kEdit, 1.0});
  ten.push_back({10, Strategy::kExact, 0});
  RetrievalConfig cfg;
  cfg.k_max = 8;
  auto map = build_token_entity_map(1, {cand("z", 0, 1)}, {ten}, cfg);
  EXPECT_EQ(map.at(0), (std::vector<EntityId>{10, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(TokenEntityMap, OutOfBoundsCandidateThrows) {
  EXPECT_THROW(build_token_entity_map(3, {cand("x", 2, 4)}, std::vector<std::vector<MatchResult>>{{}}, {}),
               kfmrc::Error);
}

TEST(TokenEntityMap, NoDuplicatesAndValidIdsOnRandomInputs) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t len = 1 + rng() % 12;
    std::vector<CandidateSpan> cs;
    std::vector<std::vector<MatchResult>> ms;
    for (int c = 0; c < 4; ++c) {
      const std::size_t b = rng() % len;
      const std::size_t e = b + 1 + rng() % (len - b);
      cs.push_back(cand("c", b, e));
      std::vector<MatchResult> m;
      for (int k = 0; k < 5; ++k) m.push_back({rng() % 6, static_cast<Strategy>(rng() % 3), 1.0});
      ms.push_back(m);
    }
    RetrievalConfig cfg;
    cfg.k_max = 1 + rng() % 4;
    auto map = build_token_entity_map(len, cs, ms, cfg);
    ASSERT_EQ(map.size(), len);
    for (std::size_t i = 0; i < len; ++i) {
      std::set<EntityId> u(map.at(i).begin(), map.at(i).end());
      EXPECT_EQ(u.size(), map.at(i).size());
      EXPECT_LE(map.at(i).size(), cfg.k_max);
      for (EntityId e : u) EXPECT_LT(e, 6u);
    }
  }
}

TEST(DictionaryCandidates, GreedyLongestHits) {
  EntityIndex idx({"糖尿", "糖尿病", "肾病"});
  std::vector<std::string> tokens = {"患", "糖", "尿", "病", "肾", "病"};
  auto cs = dictionary_candidates(tokens, idx, 10);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].begin, 11u);
  EXPECT_EQ(cs[0].end, 14u);
  EXPECT_EQ(cs[0].surface, "糖尿病");
  EXPECT_EQ(cs[1].surface, "肾病");
}

TEST(RetrievalConfig, RejectsInvalidThresholds) {
  EntityIndex idx({"a"});
  RetrievalConfig c;
  c.k_max = 0;
  EXPECT_THROW(match_entity(cand("a"), idx, c), kfmrc::Error);
  c = {};
  c.edit_threshold = 0;
  EXPECT_THROW(match_entity(cand("a"), idx, c), kfmrc::Error);
}

}  // namespace
