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
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kfmrc/core/errors.hpp"
#include "kfmrc/harness/dataset.hpp"
#include "kfmrc/kg/knowledge_base.hpp"
#include "kfmrc/text/utf8.hpp"

namespace kfmrc::harness {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t examples = 32;
  std::size_t kb_size = 0;         // canonical disease names; 0 means 3 per example
  double alias_rate = 0.0;
  std::size_t groups = 3;          // alias groups, one alias name each
  std::size_t sentences = 3;       // per passage, each naming a disease from a distinct group
  std::size_t name_min = 3;        // canonical name length range in characters
  std::size_t name_max = 3;
  // Trailing examples whose canonicals come from a reserved part of the
  // pool, never used by the leading examples.
  std::size_t holdout = 0;
  std::size_t name_chars = 200;  // leading slice of the name character inventory
};

struct SynthCorpus {
  std::vector<QuadRecord> records;
  kg::KnowledgeBase kb;
  std::vector<std::string> aliases;
  std::vector<std::string> canonicals;  // in generation order
  std::vector<std::size_t> group_of;    // per canonical
};

namespace synth_detail {

// Characters for canonical names. Disjoint from the template and alias text.
inline const std::u32string& name_inventory() {
  static const std::u32string s = text::decode_utf8(
      "阿巴柏贝毕卞布蔡曹岑昌陈程褚崔戴邓狄丁董杜段樊范巩房费丰封冯符伏福甘岳戈葛耿宫龚勾古谷顾关管桂郭韩杭郝"
      "何贺衡洪侯胡花华滑怀黄霍姬嵇吉纪季贾简江姜蒋焦钟晋经荆井景鞠康柯孔寇匡邝赖蓝郎劳乐雷冷黎李厉利连廉梁"
      "廖林凌刘柳龙娄卢鲁陆路罗吕麻马满毛茅梅孟米苗明莫牟穆倪聂宁牛钮欧潘庞裴彭蓬邴平蒲濮戚齐祁钱强乔秦邱裘"
      "屈瞿全冉饶任荣容阮芮桑沙殳单商尚邵佘申沈盛石史舒束帅双司松宋苏孙索邰谈汤唐陶滕田童涂屠万汪王危韦卫"
      "魏温文翁乌邬巫吴伍武奚席夏鲜向项萧解谢辛邢幸熊徐许宣薛荀严阎颜晏燕杨姚叶易殷尹应雍尤游於余俞虞禹");
  return s;
}

inline const std::vector<std::string>& alias_names() {
  static const std::vector<std::string> v = {"青囊症", "赤羽热", "玄珠病", "白鹭瘟", "紫藤疴", "金蝉疽"};
  return v;
}

inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v = {"北方", "南方", "山区", "沿海", "城市", "乡村", "高原", "盆地"};
  return v;
}

inline const std::vector<std::string>& symptoms() {
  static const std::vector<std::string> v = {"发热", "咳嗽", "头痛", "乏力", "腹泻", "皮疹", "呕吐", "胸闷"};
  return v;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

inline std::string make_name(std::mt19937_64& rng, std::set<std::string>& used, std::size_t lo, std::size_t hi,
                             std::size_t chars) {
  const std::u32string inv = name_inventory().substr(0, chars);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const std::size_t len = lo + pick(rng, hi - lo + 1);
    std::u32string u;
    while (u.size() < len) {
      const char32_t c = inv[pick(rng, inv.size())];
      if (u.find(c) == std::u32string::npos) u.push_back(c);
    }
    std::string s = text::encode_utf8(u);
    if (used.insert(s).second) return s;
  }
  throw Error("synth: name inventory exhausted");
}

}  // namespace synth_detail

// Template passages of `sentences` sentences, each naming one disease from
// a different alias group. The question asks which disease is also called
// a given name: the group alias (with probability alias_rate) or the answer's
// own canonical name. The KB links every canonical to its group alias.
inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  namespace sd = synth_detail;
  if (cfg.examples == 0) throw Error("synth: at least one example required");
  if (cfg.groups < cfg.sentences) throw Error("synth: need at least as many groups as sentences");
  if (cfg.groups > sd::alias_names().size()) throw Error("synth: too many groups");
  if (cfg.sentences == 0) throw Error("synth: at least one sentence required");
  if (cfg.name_min == 0 || cfg.name_max < cfg.name_min) throw Error("synth: invalid name length range");
  if (cfg.name_chars < cfg.name_max || cfg.name_chars > sd::name_inventory().size()) {
    throw Error("synth: name_chars must lie in [name_max, " + std::to_string(sd::name_inventory().size()) + "]");
  }
  if (cfg.alias_rate < 0.0 || cfg.alias_rate > 1.0) throw Error("synth: alias_rate must lie in [0, 1]");

  std::mt19937_64 rng(cfg.seed);
  SynthCorpus out;
  out.aliases.assign(sd::alias_names().begin(), sd::alias_names().begin() + static_cast<std::ptrdiff_t>(cfg.groups));

  if (cfg.holdout > cfg.examples) throw Error("synth: holdout exceeds the example count");
  const std::size_t reserved = cfg.holdout * cfg.sentences;
  const std::size_t pool = cfg.kb_size ? cfg.kb_size : cfg.examples * cfg.sentences;
  if (pool < reserved + cfg.groups) throw Error("synth: kb_size must cover the holdout and every alias group");
  std::set<std::string> used;
  // by_group[0] serves leading examples, by_group[1] the holdout.
  std::vector<std::vector<std::size_t>> by_group[2];
  by_group[0].resize(cfg.groups);
  by_group[1].resize(cfg.groups);
  for (std::size_t i = 0; i < pool; ++i) {
    out.canonicals.push_back(sd::make_name(rng, used, cfg.name_min, cfg.name_max, cfg.name_chars));
    out.group_of.push_back(i % cfg.groups);
    by_group[i < pool - reserved ? 0 : 1][i % cfg.groups].push_back(i);
  }
  for (const auto& a : out.aliases) out.kb.add_entity(a);
  for (std::size_t i = 0; i < pool; ++i) out.kb.add_triple(out.canonicals[i], "same_as", out.aliases[out.group_of[i]]);

  // Each part hands out canonicals per group in order, wrapping around.
  std::vector<std::size_t> cursor[2] = {std::vector<std::size_t>(cfg.groups, 0),
                                        std::vector<std::size_t>(cfg.groups, 0)};
  auto take = [&](std::size_t part, std::size_t g) {
    const auto& ids = by_group[part][g];
    if (ids.empty()) throw Error("synth: no canonical names left for an alias group");
    const std::size_t id = ids[cursor[part][g] % ids.size()];
    ++cursor[part][g];
    return id;
  };

  std::bernoulli_distribution use_alias(cfg.alias_rate);
  for (std::size_t n = 0; n < cfg.examples; ++n) {
    std::vector<std::size_t> groups(cfg.groups);
    for (std::size_t g = 0; g < cfg.groups; ++g) groups[g] = g;
    std::shuffle(groups.begin(), groups.end(), rng);
    groups.resize(cfg.sentences);

    QuadRecord r;
    r.id = "synth-" + std::to_string(n);
    const std::size_t answer_sentence = sd::pick(rng, cfg.sentences);
    std::size_t offset = 0;
    std::size_t answer_canonical = 0;
    for (std::size_t s = 0; s < cfg.sentences; ++s) {
      const std::size_t c = take(n >= cfg.examples - cfg.holdout ? 1 : 0, groups[s]);
      const std::string& name = out.canonicals[c];
      const std::string& place = sd::places()[sd::pick(rng, sd::places().size())];
      const std::string& symptom = sd::symptoms()[sd::pick(rng, sd::symptoms().size())];
      const std::string sentence = name + "多见于" + place + "，常伴" + symptom + "。";
      const std::size_t name_len = text::char_length(name);
      const std::size_t sentence_len = text::char_length(sentence);
      r.candidates.push_back({Field::kPassage, {offset, offset + name_len}, retrieval::LexicalClass::kNoun});
      if (s == answer_sentence) {
        r.answer = {offset, offset + name_len};
        r.answer_text = name;
        r.support_sentence = s;
        answer_canonical = c;
      }
      r.passage += sentence;
      offset += sentence_len;
    }
    const bool alias = use_alias(rng);
    const std::string key = alias ? out.aliases[out.group_of[answer_canonical]] : out.canonicals[answer_canonical];
    const std::string prefix = "哪种疾病又称";
    r.question = prefix + key + "？";
    const std::size_t key_begin = text::char_length(prefix);
    r.candidates.push_back({Field::kQuestion, {key_begin, key_begin + text::char_length(key)}, retrieval::LexicalClass::kNoun});
    out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace kfmrc::harness
