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

#include <bit>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "kfmrc/harness/model.hpp"
#include "kfmrc/harness/train.hpp"

namespace kfmrc::harness {

inline constexpr const char* kCheckpointFormat = "kfmrc-checkpoint-1";

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

struct CheckpointPaths {
  std::string manifest, sidecar, vocab;

  explicit CheckpointPaths(const std::string& prefix)
      : manifest(prefix + ".json"), sidecar(prefix + ".bin"), vocab(prefix + ".vocab") {}
};

// Little-endian IEEE-754 doubles, parameters in manifest order.
inline std::string encode_sidecar(const ad::ParameterSet<Real>& params) {
  std::string out;
  out.reserve(params.scalar_count() * 8);
  for (const auto& e : params.entries()) {
    for (Real v : e.tensor.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return out;
}

inline Real decode_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
  return std::bit_cast<Real>(bits);
}

struct Checkpoint {
  json manifest;
  std::string sidecar;
  std::string vocab;
};

inline Checkpoint make_checkpoint(const Model& model, const TrainConfig& train, std::size_t step) {
  Checkpoint c;
  c.sidecar = encode_sidecar(model.params());
  c.vocab = model.vocabulary().serialize();
  json params = json::array();
  for (const auto& e : model.params().entries()) {
    params.push_back({{"name", e.name},
                      {"shape", e.tensor.shape()},
                      {"dtype", "float64"},
                      {"trainable", e.tensor.requires_grad()}});
  }
  c.manifest = {{"format", kCheckpointFormat},
                {"model", config_to_json(model.config())},
                {"train", train_config_to_json(train)},
                {"step", step},
                {"vocab", {{"size", model.vocabulary().size()}, {"fnv1a", hex64(model.vocabulary().hash())}}},
                {"entities", model.entity_names()},
                {"parameters", params},
                {"sidecar", {{"bytes", c.sidecar.size()}, {"fnv1a", hex64(fnv1a(c.sidecar))}}}};
  return c;
}

inline void save_checkpoint(const std::string& prefix, const Model& model, const TrainConfig& train,
                            std::size_t step) {
  const CheckpointPaths paths(prefix);
  const Checkpoint c = make_checkpoint(model, train, step);
  write_file(paths.sidecar, c.sidecar);
  write_file(paths.vocab, c.vocab);
  write_file(paths.manifest, c.manifest.dump(2) + "\n");
}

struct LoadedCheckpoint {
  Model model;
  TrainConfig train;
  std::size_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& prefix) {
  const CheckpointPaths paths(prefix);
  json m;
  try {
    m = json::parse(read_file(paths.manifest));
  } catch (const json::parse_error& e) {
    throw ParseError(paths.manifest + ": " + e.what());
  }
  if (m.value("format", "") != kCheckpointFormat) throw ParseError(paths.manifest + ": not a checkpoint manifest");
  const std::string sidecar = read_file(paths.sidecar);
  const json& side = m.at("sidecar");
  if (sidecar.size() != side.at("bytes").get<std::size_t>()) {
    throw ValidationError(paths.sidecar + ": length " + std::to_string(sidecar.size()) + " differs from manifest " +
                          std::to_string(side.at("bytes").get<std::size_t>()));
  }
  if (hex64(fnv1a(sidecar)) != side.at("fnv1a").get<std::string>()) throw ValidationError(paths.sidecar + ": hash mismatch");
  encoder::Vocabulary vocab = encoder::Vocabulary::parse(read_file(paths.vocab));
  if (hex64(vocab.hash()) != m.at("vocab").at("fnv1a").get<std::string>()) {
    throw ValidationError(paths.vocab + ": vocabulary hash does not match the checkpoint");
  }

  const ModelConfig config = config_from_json(m.at("model"));
  ad::ParameterSet<Real> params;
  std::size_t offset = 0;
  const auto* bytes = reinterpret_cast<const unsigned char*>(sidecar.data());
  for (const json& p : m.at("parameters")) {
    if (p.at("dtype").get<std::string>() != "float64") throw ParseError("unsupported dtype in " + paths.manifest);
    const ad::Shape shape = p.at("shape").get<ad::Shape>();
    std::vector<Real> values(ad::shape_size(shape));
    if (offset + values.size() * 8 > sidecar.size()) throw ValidationError(paths.sidecar + ": truncated");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = decode_le(bytes + offset + 8 * i);
    offset += values.size() * 8;
    params.add(p.at("name").get<std::string>(), Tensor<Real>(shape, std::move(values)), p.at("trainable").get<bool>());
  }
  if (offset != sidecar.size()) throw ValidationError(paths.sidecar + ": trailing bytes");

  auto entities = m.at("entities").get<std::vector<std::string>>();
  const Tensor<Real>& table = params.at(kEntityTable);
  std::vector<Real> entity_values;
  if (!entities.empty()) entity_values = table.data();
  Model model(config, std::move(vocab), std::move(entities), std::move(entity_values));
  model.adopt(std::move(params));
  return {std::move(model), train_config_from_json(m.at("train")), m.at("step").get<std::size_t>()};
}

}  // namespace kfmrc::harness
