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

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kfmrc/harness/checkpoint.hpp"
#include "kfmrc/harness/embedding_io.hpp"
#include "kfmrc/harness/evaluate.hpp"
#include "kfmrc/harness/synth.hpp"
#include "kfmrc/harness/train.hpp"

namespace {

using namespace kfmrc;
using namespace kfmrc::harness;

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAborted = 3;

struct KgOptions {
  std::size_t d2 = 64;
  std::size_t epochs = 100;
  double lr = 0.01;
  double margin = 1.0;
  std::string norm = "L1";
  std::size_t negatives = 1;
  double path_weight = 0.0;
  std::uint64_t seed = 0;

  kg::KgTrainConfig config() const {
    kg::KgTrainConfig c;
    c.d2 = d2;
    c.epochs = epochs;
    c.learning_rate = lr;
    c.margin = margin;
    c.norm = kg::parse_norm(norm);
    c.negatives = negatives;
    c.path_weight = path_weight;
    c.seed = seed;
    return c;
  }
};

void add_kg_options(CLI::App* app, KgOptions& o, const std::string& prefix) {
  app->add_option("--" + prefix + "epochs", o.epochs, "Embedding training epochs")->capture_default_str();
  app->add_option("--" + prefix + "lr", o.lr, "Embedding learning rate")->capture_default_str();
  app->add_option("--margin", o.margin, "Ranking margin")->capture_default_str();
  app->add_option("--norm", o.norm, "Distance norm")->check(CLI::IsMember({"L1", "L2"}))->capture_default_str();
  app->add_option("--negatives", o.negatives, "Corruptions per positive")->capture_default_str();
  app->add_option("--path-weight", o.path_weight, "Weight of the 2-step path term")->capture_default_str();
}

struct TrainOptions {
  std::string data, triples, embeddings, out = "model", log;
  TrainConfig train;
  ModelConfig model;
  KgOptions kg;
  std::vector<std::string> ablate;
  bool detach_lambda = false;
};

struct Options {
  KgOptions kg;
  std::string triples, emb_out = "embeddings.json";

  SynthConfig synth;
  std::string synth_out = "synth.json", synth_triples = "synth.tsv", synth_holdout_out;

  TrainOptions tr;

  std::string checkpoint, eval_data, report, csv;
  bool enforce_containment = false;

  std::string question, passage;

  std::string validate_data;
};

void print_kg_summary(const kg::KgTrainReport& r) {
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    if (e == 0 || e + 1 == r.epoch_loss.size() || (e + 1) % 10 == 0) {
      std::cout << "epoch " << e + 1 << " loss " << r.epoch_loss[e] << "\n";
    }
  }
}

int run_kg_train(const Options& o) {
  const kg::KnowledgeBase kb = kg::load_triples(o.triples);
  kg::KgTrainReport report;
  const kg::EntityEmbedding emb = kg::train_embeddings(kb, o.kg.config(), &report);
  print_kg_summary(report);
  save_embedding(o.emb_out, kb, emb);
  std::cout << "wrote " << o.emb_out << " (" << kb.entity_count() << " entities, " << kb.relation_count()
            << " relations)\n";
  return 0;
}

int run_synth(const Options& o) {
  const SynthCorpus c = synth_generate(o.synth);
  std::vector<QuadRecord> head(c.records.begin(), c.records.end() - static_cast<std::ptrdiff_t>(o.synth.holdout));
  std::vector<QuadRecord> tail(c.records.end() - static_cast<std::ptrdiff_t>(o.synth.holdout), c.records.end());
  if (!tail.empty() && o.synth_holdout_out.empty()) throw Error("synth: --holdout needs --holdout-out");
  save_dataset(o.synth_out, head);
  if (!tail.empty()) save_dataset(o.synth_holdout_out, tail);
  kg::save_triples(c.kb, o.synth_triples);
  std::cout << "wrote " << head.size() << " records to " << o.synth_out;
  if (!tail.empty()) std::cout << ", " << tail.size() << " to " << o.synth_holdout_out;
  std::cout << ", " << c.kb.triples().size() << " triples to " << o.synth_triples << "\n";
  return 0;
}

int run_train(const TrainOptions& t) {
  ModelConfig mc = t.model;
  for (const auto& a : t.ablate) {
    if (a == "no-local") mc.fusion.use_local = false;
    if (a == "no-global") mc.fusion.use_global = false;
    if (a == "no-lambda") {
      mc.heads.lambda_mode = heads::LambdaMode::kFixed;
      mc.heads.fixed_lambda = 1.0;
    }
  }
  if (t.detach_lambda && mc.heads.lambda_mode == heads::LambdaMode::kDynamic) {
    mc.heads.lambda_mode = heads::LambdaMode::kDetached;
  }
  mc.d2 = t.kg.d2;

  const auto records = load_dataset(t.data);
  kg::KnowledgeBase kb;
  kg::EntityEmbedding emb;
  emb.dim = mc.d2;
  if (!t.triples.empty()) {
    kb = kg::load_triples(t.triples);
    if (!t.embeddings.empty()) {
      emb = load_embedding(t.embeddings, kb);
    } else {
      kg::KgTrainConfig kc = t.kg.config();
      kc.seed = t.train.seed;
      kg::KgTrainReport report;
      emb = kg::train_embeddings(kb, kc, &report);
      std::cerr << "kg: " << report.epoch_loss.size() << " epochs, final loss " << report.epoch_loss.back() << "\n";
    }
    mc.d2 = emb.dim;
  }

  Model model = Model::create(mc, build_vocabulary(records, &kb), kb, emb, t.train.seed);
  const auto data = prepare_all(model, records);
  Trainer trainer(model, data, t.train);

  std::ofstream log;
  if (!t.log.empty()) {
    log.open(t.log);
    if (!log) throw Error("cannot write " + t.log);
    log << "step\tepoch\tL_A\tL_S\tlambda\tL\n";
  }
  const std::size_t total = trainer.total_steps();
  const std::size_t every = std::max<std::size_t>(1, total / 20);
  try {
    trainer.run([&](const StepLog& s) {
      if (log.is_open()) {
        log << s.step << '\t' << s.epoch << '\t' << s.answer << '\t' << s.support << '\t' << s.lambda << '\t' << s.total
            << '\n';
      }
      if (s.step % every == 0 || s.step + 1 == total) {
        std::cout << "step " << s.step << "/" << total << " L_A " << s.answer << " L_S " << s.support << " lambda "
                  << s.lambda << " L " << s.total << "\n";
      }
    });
  } catch (const TrainingAborted& e) {
    save_checkpoint(t.out, model, t.train, trainer.steps_done());
    std::cerr << e.what() << "\nlast good checkpoint: " << t.out << ".json\n";
    return kExitAborted;
  }
  save_checkpoint(t.out, model, t.train, trainer.steps_done());
  std::cout << "wrote checkpoint " << t.out << ".json\n";
  return 0;
}

int run_eval(const Options& o) {
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  if (o.enforce_containment) ck.model.mutable_config().enforce_containment = true;
  const auto records = load_dataset(o.eval_data);
  const MetricReport m = evaluate(ck.model, prepare_all(ck.model, records));
  std::cout << "answer EM " << m.answer_em << " F1 " << m.answer_f1 << " | support EM " << m.support_em << " F1 "
            << m.support_f1 << " | n " << m.per_example.size() << "\n";
  if (!o.report.empty()) write_file(o.report, m.to_json().dump(2) + "\n");
  if (!o.csv.empty()) write_file(o.csv, m.to_csv());
  return 0;
}

int run_predict(const Options& o) {
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  if (o.enforce_containment) ck.model.mutable_config().enforce_containment = true;
  const Prediction p = ck.model.predict(ck.model.prepare(o.question, o.passage));
  const json j = {{"answer", p.answer},
                  {"answer_char_start", p.answer_chars.begin},
                  {"answer_char_end", p.answer_chars.end},
                  {"answer_tokens", {p.start, p.end}},
                  {"answer_score", p.answer_score},
                  {"support", p.support},
                  {"support_sentence", p.support_sentence},
                  {"support_tokens", {p.support_tokens.first, p.support_tokens.second}},
                  {"support_score", p.support_score}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_validate(const Options& o) {
  const auto records = load_dataset(o.validate_data);
  std::cout << o.validate_data << ": " << records.size() << " valid records\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-fused extractive reading comprehension"};
  app.require_subcommand(1);
  Options o;

  auto* kgc = app.add_subcommand("kg-train", "Train translational entity embeddings from a triple file");
  kgc->add_option("--triples", o.triples, "Triple TSV (subject, relation, object)")->required();
  kgc->add_option("--out", o.emb_out, "Embedding JSON output")->capture_default_str();
  kgc->add_option("--d2", o.kg.d2, "Embedding width")->capture_default_str();
  kgc->add_option("--seed", o.kg.seed, "Random seed")->capture_default_str();
  add_kg_options(kgc, o.kg, "");

  auto* syn = app.add_subcommand("synth", "Generate a synthetic dataset and its knowledge base");
  syn->add_option("--seed", o.synth.seed, "Random seed")->capture_default_str();
  syn->add_option("--n", o.synth.examples, "Number of examples")->capture_default_str();
  syn->add_option("--kb-size", o.synth.kb_size, "Canonical names in the KB (0: 3 per example)")->capture_default_str();
  syn->add_option("--alias-rate", o.synth.alias_rate, "Probability a question uses the group alias")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  syn->add_option("--holdout", o.synth.holdout, "Trailing examples with reserved names")->capture_default_str();
  syn->add_option("--name-chars", o.synth.name_chars, "Size of the name character inventory")->capture_default_str();
  syn->add_option("--out", o.synth_out, "Dataset JSON output")->capture_default_str();
  syn->add_option("--triples", o.synth_triples, "Triple TSV output")->capture_default_str();
  syn->add_option("--holdout-out", o.synth_holdout_out, "Dataset JSON for the held-out examples");

  auto* trn = app.add_subcommand("train", "Train a reading comprehension model");
  auto& t = o.tr;
  t.model.encoder.max_seq_len = 512;
  trn->add_option("--data", t.data, "Training dataset JSON")->required();
  trn->add_option("--triples", t.triples, "Knowledge base TSV (omit for no knowledge)");
  trn->add_option("--embeddings", t.embeddings, "Pre-trained embeddings from kg-train");
  trn->add_option("--out", t.out, "Checkpoint prefix")->capture_default_str();
  trn->add_option("--log", t.log, "Per-step loss log (TSV)");
  trn->add_option("--lr", t.train.lr, "Adam learning rate")->capture_default_str();
  trn->add_option("--batch", t.train.batch, "Batch size")->capture_default_str();
  trn->add_option("--epochs", t.train.epochs, "Epochs")->capture_default_str();
  trn->add_option("--max-steps", t.train.max_steps, "Stop after this many steps (0: no cap)")->capture_default_str();
  trn->add_option("--seed", t.train.seed, "Random seed")->capture_default_str();
  trn->add_option("--max-seq-len", t.model.encoder.max_seq_len, "Packed sequence length cap")->capture_default_str();
  trn->add_option("--d1", t.model.encoder.d1, "Encoder width")->capture_default_str();
  trn->add_option("--layers", t.model.encoder.layers, "Encoder layers")->capture_default_str();
  trn->add_option("--heads", t.model.encoder.heads, "Attention heads")->capture_default_str();
  trn->add_option("--ff", t.model.encoder.ff_width, "Feed-forward width")->capture_default_str();
  trn->add_option("--dropout", t.model.encoder.dropout, "Encoder dropout")->capture_default_str();
  trn->add_option("--d2", t.kg.d2, "Entity embedding width")->capture_default_str();
  trn->add_option("--loops", t.model.fusion.loops, "Gated loop count")->capture_default_str();
  trn->add_option("--edit-threshold", t.model.retrieval.edit_threshold, "Edit match iff distance < threshold")
      ->capture_default_str();
  trn->add_option("--overlap-ratio", t.model.retrieval.overlap_ratio, "Overlap match iff shared > ratio * length")
      ->capture_default_str();
  trn->add_option("--kmax", t.model.retrieval.k_max, "Entities kept per token")->capture_default_str();
  trn->add_option("--ablate", t.ablate, "Ablations")->check(CLI::IsMember({"no-local", "no-global", "no-lambda"}));
  trn->add_flag("--detach-lambda", t.detach_lambda, "Stop gradients through the dynamic coefficient");
  trn->add_flag("--enforce-containment", t.model.enforce_containment, "Support sentence must overlap the answer");
  trn->add_flag("--fine-tune-entities", t.model.fine_tune_entities, "Update entity embeddings during training");
  trn->add_flag("--tie-attention", t.model.fusion.tie_attention, "Share local and global attention weights");
  trn->add_option("--kg-epochs", t.kg.epochs, "Epochs when embeddings are trained inline")->capture_default_str();
  trn->add_option("--kg-lr", t.kg.lr, "Learning rate when embeddings are trained inline")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint prefix")->required();
  ev->add_option("--data", o.eval_data, "Dataset JSON")->required();
  ev->add_option("--report", o.report, "Metric report JSON output");
  ev->add_option("--csv", o.csv, "Per-example CSV output");
  ev->add_flag("--enforce-containment", o.enforce_containment, "Support sentence must overlap the answer");

  auto* pr = app.add_subcommand("predict", "Answer one question");
  pr->add_option("--checkpoint", o.checkpoint, "Checkpoint prefix")->required();
  pr->add_option("--question", o.question, "Question text")->required();
  pr->add_option("--passage", o.passage, "Passage text")->required();
  pr->add_flag("--enforce-containment", o.enforce_containment, "Support sentence must overlap the answer");

  auto* va = app.add_subcommand("validate", "Check a dataset file");
  va->add_option("--data", o.validate_data, "Dataset JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kExitUsage;
  }

  try {
    if (*kgc) return run_kg_train(o);
    if (*syn) return run_synth(o);
    if (*trn) return run_train(o.tr);
    if (*ev) return run_eval(o);
    if (*pr) return run_predict(o);
    if (*va) return run_validate(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
