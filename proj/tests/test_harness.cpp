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

#include <cmath>
#include <filesystem>

#include "kfmrc/harness/checkpoint.hpp"
#include "kfmrc/harness/evaluate.hpp"
#include "kfmrc/harness/synth.hpp"
#include "kfmrc/harness/train.hpp"
#include "test_util.hpp"

namespace {

using namespace kfmrc::harness;
namespace kg = kfmrc::kg;

QuadRecord good_record() {
  QuadRecord r;
  r.id = "q1";
  r.question = "哪种疾病又称消渴症？";
  r.passage = "糖尿病多见于成人。感冒常伴发热。";
  r.answer_text = "糖尿病";
  r.answer = {0, 3};
  r.support_sentence = 0;
  return r;
}

void expect_rejected(const QuadRecord& r, const std::string& fragment) {
  try {
    validate_record(r);
    FAIL() << "accepted a corrupt record";
  } catch (const kfmrc::ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("'q1'"), std::string::npos) << what;
    EXPECT_NE(what.find(fragment), std::string::npos) << what;
  }
}

TEST(Dataset, ValidatorAcceptsGoodRecord) { EXPECT_NO_THROW(validate_record(good_record())); }

TEST(Dataset, ValidatorRejectsOffsetMismatch) {
  auto r = good_record();
  r.answer = {1, 4};
  expect_rejected(r, "answer offset mismatch");
}

TEST(Dataset, ValidatorRejectsContainmentViolation) {
  auto r = good_record();
  r.support_sentence.reset();
  r.support_chars = CharSpan{9, 16};
  expect_rejected(r, "does not contain answer");
}

TEST(Dataset, ValidatorRejectsOverLengthAnswer) {
  auto r = good_record();
  r.passage.clear();
  for (int i = 0; i < 41; ++i) r.passage += "病";
  r.passage += "。";
  r.answer_text = r.passage.substr(0, 41 * 3);
  r.answer = {0, 41};
  expect_rejected(r, "exceeds 40");
}

TEST(Dataset, SupportAsCharsOrSentenceIndexAgree) {
  auto a = good_record();
  auto b = good_record();
  b.support_sentence.reset();
  b.support_chars = CharSpan{0, 9};
  EXPECT_EQ(support_span(a), support_span(b));
  auto bad = good_record();
  bad.support_sentence = 5;
  EXPECT_THROW(validate_record(bad), kfmrc::ValidationError);
}

TEST(Dataset, JsonRoundTrip) {
  auto r = good_record();
  r.additional_answers = {"消渴"};
  r.candidates.push_back({Field::kQuestion, {6, 9}, kfmrc::retrieval::LexicalClass::kNoun});
  const std::string text = dump_dataset({r, good_record()});
  const auto back = parse_dataset(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(dump_dataset(back), text);
  EXPECT_EQ(back[0].references(), (std::vector<std::string>{"糖尿病", "消渴"}));
  EXPECT_THROW(parse_dataset("{}"), kfmrc::ParseError);
  EXPECT_THROW(parse_dataset("[{\"id\": \"x\"}]"), kfmrc::ParseError);
}

TEST(Synth, NoAliasQuestionsNameTheCanonicalAnswer) {
  SynthConfig sc;
  sc.examples = 20;
  auto c = synth_generate(sc);
  ASSERT_EQ(c.records.size(), 20u);
  for (const auto& r : c.records) {
    EXPECT_NO_THROW(validate_record(r));
    EXPECT_NE(r.question.find(r.answer_text), std::string::npos);
  }
}

TEST(Synth, FullAliasQuestionsNeedTheKb) {
  SynthConfig sc;
  sc.examples = 20;
  sc.alias_rate = 1.0;
  auto c = synth_generate(sc);
  for (const auto& r : c.records) {
    EXPECT_EQ(r.question.find(r.answer_text), std::string::npos);
    const auto& names = c.kb.entity_names();
    const auto a = std::find(names.begin(), names.end(), r.answer_text);
    ASSERT_NE(a, names.end());
    // The question's alias is linked to the answer by a same_as triple.
    bool linked = false;
    for (const auto& e : c.kb.edges_from(static_cast<kg::EntityId>(a - names.begin())))
      linked |= r.question.find(names[e.object]) != std::string::npos;
    EXPECT_TRUE(linked) << r.question;
  }
}

TEST(Synth, FixedSeedIsByteIdentical) {
  SynthConfig sc;
  sc.examples = 10;
  sc.alias_rate = 0.5;
  sc.seed = 42;
  EXPECT_EQ(dump_dataset(synth_generate(sc).records), dump_dataset(synth_generate(sc).records));
  sc.seed = 43;
  EXPECT_NE(dump_dataset(synth_generate(sc).records), dump_dataset(synth_generate(SynthConfig{42, 10}).records));
}

struct Bench {
  SynthCorpus corpus;
  kg::EntityEmbedding emb;
  ModelConfig mc;
  kfmrc::encoder::Vocabulary vocab;

  explicit Bench(std::size_t examples = 8, double alias_rate = 0.0) {
    SynthConfig sc;
    sc.examples = examples;
    sc.alias_rate = alias_rate;
    corpus = synth_generate(sc);
    kg::KgTrainConfig kc;
    kc.d2 = 8;
    kc.epochs = 5;
    emb = kg::train_embeddings(corpus.kb, kc);
    mc.encoder.d1 = 16;
    mc.encoder.layers = 1;
    mc.encoder.heads = 2;
    mc.encoder.ff_width = 32;
    mc.encoder.dropout = 0.0;
    mc.encoder.max_seq_len = 64;
    mc.d2 = 8;
    vocab = build_vocabulary(corpus.records, &corpus.kb);
  }

  Model model(std::uint64_t seed = 0) const { return Model::create(mc, vocab, corpus.kb, emb, seed); }
};

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const auto& e : m.params().entries()) out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
  Bench b;
  auto m = b.model();
  const auto before = flat_params(m);
  auto data = prepare_all(m, b.corpus.records);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.batch = 4;
  tc.epochs = 1;
  Trainer(m, data, tc).run();
  EXPECT_EQ(flat_params(m), before);
}

TEST(Training, AnswerLossFallsAndLambdaStaysInUnitInterval) {
  Bench b;
  auto m = b.model();
  auto data = prepare_all(m, b.corpus.records);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch = 8;
  tc.epochs = 300;
  tc.max_steps = 300;
  auto log = Trainer(m, data, tc).run();
  ASSERT_EQ(log.size(), 300u);
  for (const auto& s : log) {
    EXPECT_GE(s.lambda, 0.0);
    EXPECT_LE(s.lambda, 1.0);
    EXPECT_TRUE(std::isfinite(s.total));
  }
  EXPECT_LT(log.back().answer, 0.5 * log.front().answer);
}

TEST(Training, SameSeedSameLossLog) {
  Bench b;
  auto run = [&] {
    auto mc = b.mc;
    mc.encoder.dropout = 0.1;
    auto m = Model::create(mc, b.vocab, b.corpus.kb, b.emb, 7);
    auto data = prepare_all(m, b.corpus.records);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch = 3;
    tc.epochs = 2;
    tc.seed = 7;
    return Trainer(m, data, tc).run();
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, AblationsStillTrainToFiniteLoss) {
  Bench b;
  for (int variant = 0; variant < 4; ++variant) {
    auto mc = b.mc;
    if (variant == 0) mc.fusion.use_local = false;
    if (variant == 1) mc.fusion.use_global = false;
    if (variant == 2) {
      mc.heads.lambda_mode = kfmrc::heads::LambdaMode::kFixed;
      mc.heads.fixed_lambda = 1.0;
    }
    if (variant == 3) mc.heads.lambda_mode = kfmrc::heads::LambdaMode::kDetached;
    auto m = Model::create(mc, b.vocab, b.corpus.kb, b.emb, 0);
    auto data = prepare_all(m, b.corpus.records);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch = 4;
    tc.epochs = 2;
    auto log = Trainer(m, data, tc).run();
    EXPECT_TRUE(std::isfinite(log.back().total)) << variant;
    if (variant == 2)
      for (const auto& s : log) EXPECT_EQ(s.lambda, 1.0);
  }
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  kfmrc::testing::TempDir dir;
  Bench b;
  auto m = b.model(3);
  TrainConfig tc;
  tc.lr = 1e-3;
  save_checkpoint(dir.file("a"), m, tc, 12);
  auto loaded = load_checkpoint(dir.file("a"));
  EXPECT_EQ(loaded.step, 12u);
  EXPECT_EQ(loaded.train.lr, 1e-3);
  save_checkpoint(dir.file("b"), loaded.model, loaded.train, loaded.step);
  for (const char* ext : {".json", ".bin", ".vocab"})
    EXPECT_EQ(read_file(dir.file(std::string("a") + ext)), read_file(dir.file(std::string("b") + ext))) << ext;
  auto data = prepare_all(m, b.corpus.records);
  EXPECT_EQ(m.predict(data[0]).answer, loaded.model.predict(prepare_all(loaded.model, b.corpus.records)[0]).answer);
}

TEST(Checkpoint, RejectsVocabularyMismatchAndTruncation) {
  kfmrc::testing::TempDir dir;
  Bench b;
  auto m = b.model();
  save_checkpoint(dir.file("c"), m, TrainConfig{}, 0);
  const std::string vocab = read_file(dir.file("c.vocab"));
  write_file(dir.file("c.vocab"), vocab + "额外\n");
  EXPECT_THROW(load_checkpoint(dir.file("c")), kfmrc::ValidationError);
  write_file(dir.file("c.vocab"), vocab);
  const std::string bin = read_file(dir.file("c.bin"));
  write_file(dir.file("c.bin"), bin.substr(0, bin.size() - 8));
  EXPECT_THROW(load_checkpoint(dir.file("c")), kfmrc::ValidationError);
  EXPECT_THROW(load_checkpoint(dir.file("missing")), kfmrc::Error);
}

TEST(Evaluate, ReportSchemaAndAnswerSlices) {
  Bench b;
  auto m = b.model();
  auto data = prepare_all(m, b.corpus.records);
  auto report = evaluate(m, data);
  const auto j = report.to_json();
  for (const char* key : {"answer", "support", "errors", "answer_errors", "per_example"}) EXPECT_TRUE(j.contains(key));
  EXPECT_TRUE(j["answer"].contains("em"));
  EXPECT_TRUE(j["support"].contains("f1"));
  ASSERT_EQ(j["per_example"].size(), data.size());
  std::size_t total = 0;
  for (const auto& [name, n] : report.errors) total += n;
  EXPECT_EQ(total, data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = report.per_example[i].prediction;
    EXPECT_EQ(p.answer, kfmrc::text::char_slice(data[i].passage, p.answer_chars.begin, p.answer_chars.end));
    EXPECT_LE(p.end - p.start + 1, 40u);
  }
  EXPECT_NE(report.to_csv().find("answer_em"), std::string::npos);
}

TEST(Evaluate, EmptyKbModelStillPredicts) {
  Bench b;
  kg::KnowledgeBase empty;
  auto vocab = build_vocabulary(b.corpus.records, nullptr);
  auto m = Model::create(b.mc, vocab, empty, kg::EntityEmbedding{}, 0);
  auto data = prepare_all(m, b.corpus.records);
  for (const auto& ex : data) EXPECT_EQ(ex.entities.covered_tokens(), 0u);
  auto report = evaluate(m, data);
  EXPECT_EQ(report.per_example.size(), data.size());
}

TEST(Predict, RawQuestionHasNoGold) {
  Bench b;
  auto m = b.model();
  auto ex = m.prepare("哪种疾病又称消渴症？", "糖尿病多见于成人。");
  EXPECT_FALSE(ex.has_gold);
  auto p = m.predict(ex);
  EXPECT_FALSE(p.answer.empty());
  EXPECT_EQ(p.support, "糖尿病多见于成人。");
}

}  // namespace
