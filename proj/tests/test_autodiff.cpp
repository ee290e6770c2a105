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
#include <functional>
#include <random>
#include <vector>

#include "kfmrc/core/adam.hpp"
#include "kfmrc/core/grad_check.hpp"
#include "kfmrc/core/ops.hpp"
#include "kfmrc/core/parameters.hpp"

namespace {

using kfmrc::ad::Tensor;
using T64 = Tensor<double>;
namespace ad = kfmrc::ad;

T64 random_tensor(ad::Shape shape, std::mt19937_64& rng, bool grad = true) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(ad::shape_size(shape));
  for (double& x : v) x = u(rng);
  return T64(std::move(shape), std::move(v), grad);
}

// Central differences computed here, independent of ad::grad_check.
double max_fd_error(std::vector<T64> inputs, const std::function<T64(const std::vector<T64>&)>& f) {
  for (auto& t : inputs) t.zero_grad();
  {
    ad::Tape<double> tape;
    ad::Recording<double> rec(tape);
    tape.backward(ad::sum(f(inputs)));
  }
  const double h = 1e-5;
  double worst = 0.0;
  for (auto& t : inputs) {
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double plus = ad::sum(f(inputs)).item();
      v[i] = keep - h;
      const double minus = ad::sum(f(inputs)).item();
      v[i] = keep;
      const double numeric = (plus - minus) / (2 * h);
      const double analytic = t.grad()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(T64({2, 2}, {1, 2, 3}), kfmrc::DimensionError);
  EXPECT_THROW(T64({0}, {}), kfmrc::DimensionError);
}

TEST(Tensor, CopiesShareStorageAndCloneDetaches) {
  T64 a = T64::vector({1, 2}, true);
  T64 b = a;
  b.mutable_values()[0] = 5;
  EXPECT_EQ(a[0], 5);
  T64 c = a.clone();
  c.mutable_values()[0] = 7;
  EXPECT_EQ(a[0], 5);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Matmul, IdentityAndProjector) {
  T64 id = T64::matrix(2, 2, {1, 0, 0, 1});
  T64 m = T64::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(ad::matmul(id, m).data(), m.data());
  T64 p = T64::matrix(2, 2, {1, 0, 0, 0});
  T64 v = T64::matrix(2, 1, {5, 7});
  EXPECT_EQ(ad::matmul(p, v).data(), (std::vector<double>{5, 0}));
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(ad::matmul(T64::zeros({2, 3}), T64::zeros({2, 3})), kfmrc::DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_LT(max_fd_error({a, b}, [](const auto& x) { return ad::matmul(x[0], x[1]); }), 1e-6);
}

TEST(Matmul, GradientFormulas) {
  T64 a = T64::matrix(2, 2, {1, 2, 3, 4}, true);
  T64 b = T64::matrix(2, 1, {5, 6}, true);
  ad::Tape<double> tape;
  {
    ad::Recording<double> rec(tape);
    tape.backward(ad::sum(ad::matmul(a, b)));
  }
  // dL/da = 1 * b^T per row; dL/db = a^T * 1.
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{5, 6, 5, 6}));
  EXPECT_EQ(std::vector<double>(b.grad().begin(), b.grad().end()), (std::vector<double>{4, 6}));
}

TEST(Softmax, Examples) {
  auto s = ad::softmax(T64::vector({0, 0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  auto t = ad::softmax(T64::vector({std::log(2.0), 0}), 0);
  EXPECT_NEAR(t[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(t[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantBitwise) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor({5}, rng, false);
    std::vector<double> shifted(x.data());
    for (double& v : shifted) v += 100.0;
    auto a = ad::softmax(x, 0);
    // Same shift applied after max subtraction cancels exactly when the
    // shifted values are representable; compare the max-subtracted inputs.
    auto b = ad::softmax(T64::vector(shifted), 0);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
  // Integer-valued inputs shift exactly, so outputs agree bit for bit.
  auto a = ad::softmax(T64::vector({1, 2, 3}), 0);
  auto b = ad::softmax(T64::vector({101, 102, 103}), 0);
  EXPECT_EQ(a.data(), b.data());
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor({3, 6}, rng, false);
    for (std::size_t axis : {0u, 1u}) {
      auto s = ad::softmax(x, axis);
      const std::size_t slices = axis == 1 ? 3 : 6, len = axis == 1 ? 6 : 3;
      for (std::size_t k = 0; k < slices; ++k) {
        double total = 0;
        for (std::size_t j = 0; j < len; ++j) {
          const double v = axis == 1 ? s.at(k, j) : s.at(j, k);
          EXPECT_GE(v, 0.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(Softmax, MaskedPositionsGetZero) {
  std::vector<std::uint8_t> mask = {0, 1, 1, 0};
  auto s = ad::softmax(T64::vector({9, 0, 0, 9}), 0, mask);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[3], 0.0);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Elementwise, Examples) {
  EXPECT_DOUBLE_EQ(ad::sigmoid(T64::scalar(0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(ad::tanh(T64::scalar(0)).item(), 0.0);
  EXPECT_EQ(ad::mul(T64::vector({1, 2, 3}), T64::vector({0, 1, 2})).data(), (std::vector<double>{0, 2, 6}));
  EXPECT_EQ(ad::add(T64::vector({1, 2}), T64::vector({3, 4})).data(), (std::vector<double>{4, 6}));
  EXPECT_THROW(ad::mul(T64::vector({1, 2}), T64::vector({1, 2, 3})), kfmrc::DimensionError);
}

TEST(Elementwise, VectorBroadcastOverRowsOnly) {
  auto r = ad::add(T64::matrix(2, 2, {1, 2, 3, 4}), T64::vector({10, 20}));
  EXPECT_EQ(r.data(), (std::vector<double>{11, 22, 13, 24}));
  EXPECT_THROW(ad::add(T64::matrix(2, 2, {1, 2, 3, 4}), T64::vector({1, 2, 3})), kfmrc::DimensionError);
}

TEST(Concat, ValuesShapesAndGradients) {
  auto c = ad::concat<double>({T64::vector({1}), T64::vector({2}), T64::vector({3})}, 0);
  EXPECT_EQ(c.data(), (std::vector<double>{1, 2, 3}));
  auto h = T64::zeros({8}, true), e1 = T64::zeros({4}, true), e2 = T64::zeros({4}, true);
  ad::Tape<double> tape;
  {
    ad::Recording<double> rec(tape);
    auto joined = ad::concat<double>({h, e1, e2}, 0);
    EXPECT_EQ(joined.size(), 16u);
    tape.backward(ad::sum(joined));
  }
  for (const auto* t : {&h, &e1, &e2})
    for (double g : t->grad()) EXPECT_EQ(g, 1.0);
  EXPECT_THROW(ad::concat<double>({T64::zeros({2, 2}), T64::zeros({3, 3})}, 1), kfmrc::DimensionError);
}

TEST(Reduce, Examples) {
  EXPECT_DOUBLE_EQ(ad::mean(T64::vector({2, 4, 6})).item(), 4.0);
  EXPECT_EQ(ad::sum(T64::matrix(2, 2, {1, 2, 3, 4}), 0).data(), (std::vector<double>{4, 6}));
  auto x = T64::vector({2, 4, 6}, true);
  ad::Tape<double> tape;
  {
    ad::Recording<double> rec(tape);
    tape.backward(ad::mean(x));
  }
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 3.0);
  EXPECT_THROW(ad::sum(T64::vector({1}), 1), kfmrc::DimensionError);
}

TEST(Cosine, Examples) {
  EXPECT_NEAR(ad::cosine(T64::vector({1, 2}), T64::vector({1, 2})).item(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(ad::cosine(T64::vector({1, 0}), T64::vector({0, 1})).item(), 0.0);
  EXPECT_DOUBLE_EQ(ad::cosine(T64::vector({1, 0}), T64::vector({-1, 0})).item(), -1.0);
  EXPECT_THROW(ad::cosine(T64::vector({0, 0}), T64::vector({1, 0})), kfmrc::NumericError);
}

TEST(Backward, LinearCase) {
  auto w = T64::matrix(2, 3, {1, 2, 3, 4, 5, 6}, true);
  auto x = T64::matrix(3, 1, {7, 8, 9});
  ad::Tape<double> tape;
  {
    ad::Recording<double> rec(tape);
    tape.backward(ad::sum(ad::matmul(w, x)));
  }
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{7, 8, 9, 7, 8, 9}));
}

TEST(Backward, ConstantLossGivesZeroGrads) {
  auto w = T64::vector({1, 2}, true);
  w.zero_grad();
  ad::Tape<double> tape;
  {
    ad::Recording<double> rec(tape);
    tape.backward(ad::sum(T64::vector({3, 4})));
  }
  for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  ad::Tape<double> tape;
  EXPECT_THROW(tape.backward(T64::vector({1, 2})), kfmrc::DimensionError);
}

TEST(Backward, NonFiniteForwardIsAnError) {
  EXPECT_THROW(ad::exp(T64::scalar(1000.0)), kfmrc::NumericError);
  EXPECT_THROW(ad::log(T64::scalar(0.0)), kfmrc::NumericError);
}

TEST(Backward, NoGradSuspendsRecording) {
  ad::Tape<double> tape;
  ad::Recording<double> rec(tape);
  auto w = T64::vector({1, 2}, true);
  {
    ad::NoGrad<double> off;
    (void)ad::sum(w);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)ad::sum(w);
  EXPECT_EQ(tape.size(), 1u);
}

struct OpCase {
  const char* name;
  std::vector<ad::Shape> shapes;
  std::function<T64(const std::vector<T64>&)> fn;
};

TEST(GradientProperty, EveryOpOnRandomInstances) {
  std::vector<std::uint8_t> mask = {1, 0, 1, 1};
  std::vector<double> labels = {1, 0, 0, 1};
  const std::vector<OpCase> cases = {
      {"matmul", {{2, 3}, {3, 2}}, [](const auto& x) { return ad::matmul(x[0], x[1]); }},
      {"add", {{2, 3}, {3}}, [](const auto& x) { return ad::add(x[0], x[1]); }},
      {"sub", {{4}, {4}}, [](const auto& x) { return ad::sub(x[0], x[1]); }},
      {"mul", {{2, 2}, {2, 2}}, [](const auto& x) { return ad::mul(x[0], x[1]); }},
      {"scale", {{3}, {1}}, [](const auto& x) { return ad::scale(x[0], x[1]); }},
      {"dot", {{4}, {4}}, [](const auto& x) { return ad::dot(x[0], x[1]); }},
      {"sigmoid", {{5}}, [](const auto& x) { return ad::mul(ad::sigmoid(x[0]), x[0]); }},
      {"tanh", {{5}}, [](const auto& x) { return ad::mul(ad::tanh(x[0]), x[0]); }},
      {"gelu", {{5}}, [](const auto& x) { return ad::gelu(x[0]); }},
      {"exp", {{3}}, [](const auto& x) { return ad::exp(x[0]); }},
      {"softmax0", {{3, 4}}, [](const auto& x) { return ad::mul(ad::softmax(x[0], 0), x[0]); }},
      {"softmax1", {{3, 4}}, [](const auto& x) { return ad::mul(ad::softmax(x[0], 1), x[0]); }},
      {"softmax_masked", {{4}}, [&](const auto& x) { return ad::mul(ad::softmax(x[0], 0, mask), x[0]); }},
      {"concat0", {{2, 3}, {1, 3}}, [](const auto& x) { return ad::mul(ad::concat<double>({x[0], x[1]}, 0), ad::concat<double>({x[0], x[1]}, 0)); }},
      {"concat1", {{2, 3}, {2, 1}}, [](const auto& x) { auto c = ad::concat<double>({x[0], x[1]}, 1); return ad::mul(c, c); }},
      {"slice", {{3, 4}}, [](const auto& x) { auto s = ad::slice(x[0], 1, 1, 3); return ad::mul(s, s); }},
      {"transpose", {{2, 3}, {2, 3}}, [](const auto& x) { return ad::matmul(x[0], ad::transpose(x[1])); }},
      {"sum_axis", {{3, 2}}, [](const auto& x) { auto s = ad::sum(x[0], 0); return ad::mul(s, s); }},
      {"mean_axis", {{3, 2}}, [](const auto& x) { auto s = ad::mean(x[0], 1); return ad::mul(s, s); }},
      {"cosine", {{4}, {4}}, [](const auto& x) { return ad::cosine(x[0], x[1]); }},
      {"layer_norm", {{2, 4}, {4}, {4}}, [](const auto& x) { auto y = ad::layer_norm(x[0], x[1], x[2]); return ad::mul(y, y); }},
      {"cross_entropy", {{4}}, [&](const auto& x) { return ad::cross_entropy(x[0], mask, 2); }},
      {"bce", {{4}}, [&](const auto& x) { return ad::binary_cross_entropy(ad::sigmoid(x[0]), std::span<const double>(labels)); }},
      {"gather_rows", {{4, 2}}, [](const auto& x) { std::vector<std::size_t> ids = {2, 0, 2}; auto g = ad::gather_rows(x[0], std::span<const std::size_t>(ids)); return ad::mul(g, g); }},
      {"scatter_rows", {{2, 3}}, [](const auto& x) { std::vector<std::size_t> ids = {3, 1}; auto g = ad::scatter_rows(4, std::span<const std::size_t>(ids), x[0]); return ad::mul(g, g); }},
      {"reshape", {{2, 3}}, [](const auto& x) { auto r = ad::reshape(x[0], {3, 2}); return ad::matmul(x[0], r); }},
  };
  std::mt19937_64 rng(11);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<T64> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
      worst = std::max(worst, max_fd_error(inputs, c.fn));
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(GradCheck, AgreesWithIndependentOracle) {
  std::mt19937_64 rng(5);
  auto a = random_tensor({3, 3}, rng), b = random_tensor({3}, rng);
  auto r = ad::grad_check<double>({{"a", a}, {"b", b}},
                                  [&] { return ad::sum(ad::tanh(ad::add(ad::matmul(a, ad::reshape(b, {3, 1})), T64::zeros({3, 1})))); });
  EXPECT_LT(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.checked, 12u);
}

TEST(Determinism, ForwardAndBackwardAreBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(9);
    auto w = random_tensor({4, 4}, rng), x = random_tensor({4, 1}, rng);
    ad::Tape<double> tape;
    ad::Recording<double> rec(tape);
    auto y = ad::sum(ad::softmax(ad::reshape(ad::matmul(w, x), {4}), 0));
    auto loss = ad::sum(ad::mul(ad::gelu(ad::matmul(w, x)), ad::matmul(w, x)));
    tape.backward(loss);
    std::vector<double> out = {loss.item(), y.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(ParameterSet, UniqueNamesAndTrainability) {
  ad::ParameterSet<double> p;
  p.add("w", T64::zeros({2}));
  EXPECT_THROW(p.add("w", T64::zeros({2})), kfmrc::Error);
  p.add("frozen", T64::zeros({2}), false);
  EXPECT_TRUE(p.at("w").requires_grad());
  EXPECT_FALSE(p.at("frozen").requires_grad());
  EXPECT_EQ(p.scalar_count(), 4u);
  EXPECT_THROW(p.at("missing"), kfmrc::Error);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  ad::ParameterSet<double> p;
  auto w = p.add("w", T64::vector({1.0, -1.0}));
  auto frozen = p.add("f", T64::vector({3.0}), false);
  ad::Adam<double> opt(p, {0.1, 0.9, 0.999, 1e-8});
  auto g = w.mutable_grad();
  g[0] = 2.0;
  g[1] = -0.5;
  opt.step();
  EXPECT_NEAR(w[0], 0.9, 1e-6);
  EXPECT_NEAR(w[1], -0.9, 1e-6);
  EXPECT_EQ(frozen[0], 3.0);
}

TEST(Adam, ZeroLearningRateLeavesValuesUnchanged) {
  ad::ParameterSet<double> p;
  auto w = p.add("w", T64::vector({1.5, 2.5}));
  ad::Adam<double> opt(p, {0.0, 0.9, 0.999, 1e-8});
  w.mutable_grad()[0] = 4.0;
  opt.step();
  EXPECT_EQ(w.data(), (std::vector<double>{1.5, 2.5}));
}

}  // namespace
