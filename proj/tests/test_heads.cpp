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
#include <random>

#include "kfmrc/core/tape.hpp"
#include "kfmrc/heads/heads.hpp"

namespace {

using namespace kfmrc::heads;
namespace ad = kfmrc::ad;
using T64 = ad::Tensor<double>;

HeadWeights<double> zero_weights(std::size_t d1, std::size_t d_o) {
  return {T64::zeros({d_o, 2 * d1}), T64::zeros({d_o}), T64::zeros({d_o}),
          T64::zeros({d_o}),         T64::zeros({d_o}), T64::zeros({d_o, 3 * d_o})};
}

HeadWeights<double> random_weights(std::size_t d1, std::size_t d_o, std::mt19937_64& rng, bool grad = false) {
  auto r = [&](ad::Shape s) {
    auto t = ad::random_normal<double>(std::move(s), 0.5, rng);
    t.set_requires_grad(grad);
    return t;
  };
  return {r({d_o, 2 * d1}), r({d_o}), r({d_o}), r({d_o}), r({d_o}), r({d_o, 3 * d_o})};
}

TEST(TokenOutputs, ZeroParametersGiveNeutralOutputs) {
  std::mt19937_64 rng(1);
  auto h = ad::random_normal<double>({6, 4}, 1.0, rng);
  std::vector<std::uint8_t> mask = {0, 0, 1, 1, 1, 1};
  auto out = token_outputs(h, h, mask, zero_weights(4, 4));
  for (double v : out.p_support.data()) EXPECT_EQ(v, 0.5);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(out.p_start[i], mask[i] ? 0.25 : 0.0);
    EXPECT_EQ(out.p_end[i], mask[i] ? 0.25 : 0.0);
  }
}

TEST(TokenOutputs, SinglePassageTokenTakesAllMass) {
  std::mt19937_64 rng(2);
  auto h = ad::random_normal<double>({4, 4}, 1.0, rng);
  std::vector<std::uint8_t> mask = {0, 0, 1, 0};
  auto out = token_outputs(h, h, mask, random_weights(4, 3, rng));
  EXPECT_EQ(out.p_start.data(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(out.p_end.data(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(out.o.dim(1), 3u);
}

TEST(TokenOutputs, ShapeErrors) {
  std::vector<std::uint8_t> mask = {1, 1};
  EXPECT_THROW(token_outputs(T64::zeros({2, 4}), T64::zeros({3, 4}), mask, zero_weights(4, 4)), kfmrc::DimensionError);
  std::vector<std::uint8_t> short_mask = {1};
  EXPECT_THROW(token_outputs(T64::zeros({2, 4}), T64::zeros({2, 4}), short_mask, zero_weights(4, 4)),
               kfmrc::DimensionError);
}

TEST(Losses, UniformAnswerAndHalfSupport) {
  auto h = T64::zeros({5, 2});
  std::vector<std::uint8_t> mask = {0, 1, 1, 1, 1};
  auto out = token_outputs(h, h, mask, zero_weights(2, 2));
  EXPECT_NEAR(answer_loss(out, mask, 1, 3).item(), 2 * std::log(4.0), 1e-12);
  std::vector<double> labels = {0, 1, 1, 0, 0};
  EXPECT_NEAR(support_loss(out.p_support, std::span<const double>(labels)).item(), std::log(2.0), 1e-12);
  EXPECT_THROW(answer_loss(out, mask, 0, 3), kfmrc::ValidationError);
  EXPECT_THROW(answer_loss(out, mask, 1, 5), kfmrc::ValidationError);
}

TEST(Pooled, Examples) {
  auto o = T64::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  auto one = pooled(o, 1, 2, T64::vector({0.3, -0.7}));
  EXPECT_EQ(one.data(), (std::vector<double>{3, 4}));
  // Zero pooling vector: attentive pooling is the mean, so the average is too.
  auto all = pooled(o, 0, 3, T64::zeros({2}));
  EXPECT_NEAR(all[0], 3.0, 1e-15);
  EXPECT_NEAR(all[1], 4.0, 1e-15);
  EXPECT_THROW(pooled(o, 2, 2, T64::zeros({2})), kfmrc::ValidationError);
  EXPECT_THROW(pooled(o, 1, 4, T64::zeros({2})), kfmrc::ValidationError);
}

PooledReps<double> reps_with(const T64& h_su) {
  auto z = T64::zeros({h_su.size()});
  return {h_su, z, z, z};
}

TEST(DynamicLambda, ParallelGivesOne) {
  // Zero W_H makes H_A = 0.5 * 1, parallel to any constant positive h_su.
  auto parts = dynamic_lambda(reps_with(T64::vector({2, 2, 2})), T64::zeros({3, 9}));
  EXPECT_FALSE(parts.degenerate);
  EXPECT_NEAR(parts.lambda.item(), 1.0, 1e-12);
}

TEST(DynamicLambda, OrthogonalAndNegativeClampToZero) {
  auto ortho = dynamic_lambda(reps_with(T64::vector({1, -1})), T64::zeros({2, 6}));
  EXPECT_NEAR(ortho.lambda.item(), 0.0, 1e-15);
  // H_A = [0.5, 0.5]; h_su at 120 degrees has cos = -0.5 after normalisation.
  const double a = std::cos(M_PI / 4 + 2 * M_PI / 3), b = std::sin(M_PI / 4 + 2 * M_PI / 3);
  auto neg = dynamic_lambda(reps_with(T64::vector({a, b})), T64::zeros({2, 6}));
  EXPECT_EQ(neg.lambda.item(), 0.0);
}

TEST(DynamicLambda, DegenerateSupportIsZero) {
  auto parts = dynamic_lambda(reps_with(T64::zeros({3})), T64::zeros({3, 9}));
  EXPECT_TRUE(parts.degenerate);
  EXPECT_EQ(parts.lambda.item(), 0.0);
}

TEST(DynamicLambda, GammasAreDotProducts) {
  PooledReps<double> r{T64::vector({1, 2}), T64::vector({3, 4}), T64::vector({5, 6}), T64::vector({7, 8})};
  auto parts = dynamic_lambda(r, T64::zeros({2, 6}));
  EXPECT_EQ(parts.gamma_sp.item(), 11.0);
  EXPECT_EQ(parts.gamma_st.item(), 17.0);
  EXPECT_EQ(parts.gamma_ed.item(), 23.0);
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(T64::scalar(2.0), T64::scalar(3.0), T64::scalar(0.0)).item(), 2.0);
  EXPECT_EQ(total_loss(T64::scalar(2.0), T64::scalar(3.0), T64::scalar(1.0)).item(), 5.0);
  EXPECT_EQ(total_loss(T64::scalar(1.0), T64::scalar(2.0), T64::scalar(0.25)).item(), 1.5);
}

struct Graph {
  HeadWeights<double> w;
  T64 hidden;
  std::vector<std::uint8_t> mask = {0, 1, 1, 1, 1, 1};
  std::vector<double> labels = {0, 0, 1, 1, 0, 0};

  explicit Graph(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    w = random_weights(4, 4, rng, true);
    hidden = ad::random_normal<double>({6, 4}, 1.0, rng);
  }

  LambdaParts<double> lambda_parts() const {
    auto out = token_outputs(hidden, hidden, mask, w);
    return dynamic_lambda(pooled_reps(out.o, 2, 4, 2, 3, w.pool), w.lambda);
  }

  T64 loss(const T64& lambda) const {
    auto out = token_outputs(hidden, hidden, mask, w);
    return total_loss(answer_loss(out, mask, 2, 3), support_loss(out.p_support, std::span<const double>(labels)), lambda);
  }
};

TEST(Backward, LambdaReceivesGradientThroughWH) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Graph g(seed);
    ad::Tape<double> tape;
    ad::Recording<double> rec(tape);
    auto parts = g.lambda_parts();
    if (parts.lambda.item() <= 0.0) continue;
    tape.backward(g.loss(parts.lambda));
    double mag = 0;
    for (double v : g.w.lambda.grad()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0);
    return;
  }
  FAIL() << "no seed produced a positive lambda";
}

TEST(Backward, ZeroLambdaStopsSupportGradient) {
  Graph g(3);
  ad::Tape<double> tape;
  ad::Recording<double> rec(tape);
  tape.backward(g.loss(T64::scalar(0.0)));
  for (double v : g.w.support.grad()) EXPECT_EQ(v, 0.0);
}

}  // namespace
