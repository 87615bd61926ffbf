// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <functional>

#include "helpers.hpp"

using namespace hqga;
using hqga::testing::max_abs_diff;
using hqga::testing::randn;

namespace {

using V = ag::Var<double>;
using Op = std::function<V(std::vector<V>&)>;

// Reduces an op output to a scalar through a fixed random weighting, so
// every output entry contributes a distinct gradient.
V weighted_sum(V out, const Mat<double>& w) {
  auto prod = ag::mul(out, out.tape->constant(w));
  return ag::sum_all<double>(std::span<const V>(&prod, 1));
}

// Largest |analytic - central difference| over all input entries.
double op_grad_error(const Op& op, std::vector<Mat<double>> inputs, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::vector<Parameter<double>> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.emplace_back("in" + std::to_string(i), inputs[i].rows(), inputs[i].cols());
    params.back().value = inputs[i];
  }
  Mat<double> w;
  auto eval = [&](bool backward) {
    ag::Tape<double> t;
    std::vector<V> vars;
    for (auto& p : params) vars.push_back(t.param(p));
    V out = op(vars);
    if (w.size() == 0) w = randn(rng, out.rows(), out.cols());
    V loss = weighted_sum(out, w);
    if (backward) t.backward(loss);
    return loss.value()(0, 0);
  };
  eval(true);
  double worst = 0;
  const double h = 1e-6;
  for (auto& p : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + h;
      const double up = eval(false);
      p.value.data()[i] = saved - h;
      const double down = eval(false);
      p.value.data()[i] = saved;
      worst = std::max(worst, std::abs((up - down) / (2 * h) - p.grad.data()[i]));
    }
  }
  return worst;
}

// Inputs kept away from ReLU/ELU kinks.
Mat<double> off_zero(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  Mat<double> m = randn(rng, r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (std::abs(m.data()[i]) < 0.1) m.data()[i] += m.data()[i] < 0 ? -0.1 : 0.1;
  return m;
}

}  // namespace

TEST(AutogradOps, BinaryOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto a = randn(rng, 3, 4), b = randn(rng, 4, 2), c = randn(rng, 3, 4), r = randn(rng, 1, 4);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::matmul(v[0], v[1]); }, {a, b}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::matmul_nt(v[0], v[1]); }, {a, c}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::add(v[0], v[1]); }, {a, c}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::sub(v[0], v[1]); }, {a, c}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::mul(v[0], v[1]); }, {a, c}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::add_row(v[0], v[1]); }, {a, r}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::concat_cols(v[0], v[1]); }, {a, c}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::concat_rows(std::vector<V>{v[0], v[1]}); }, {a, c}), 1e-8);
}

TEST(AutogradOps, UnaryOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  auto a = off_zero(rng, 4, 3);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::scale(v[0], -2.5); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::relu(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::elu(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::sigmoid(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::tanh(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::softmax_rows(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::transpose(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::sum_rows(v[0]); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::slice_rows(v[0], 1, 2); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::slice_cols(v[0], 1, 2); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::shift_rows(v[0], 1); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::shift_rows(v[0], -2); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::gather_rows(v[0], {3, 0, 3, 1}); }, {a}), 1e-8);
  EXPECT_LT(op_grad_error([](auto& v) { return ag::broadcast_rows(ag::slice_rows(v[0], 0, 1), 5); }, {a}), 1e-8);
}

TEST(AutogradOps, LossOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  auto s = randn(rng, 1, 5, 0.3);
  auto hinge = [](auto& v) { return ag::hinge_loss(v[0], 2); };
  auto ce = [](auto& v) { return ag::cross_entropy(ag::softmax_rows(v[0]), 1); };
  EXPECT_LT(op_grad_error(hinge, {s}), 1e-8);
  EXPECT_LT(op_grad_error(ce, {s}), 1e-8);
}

TEST(AutogradOps, ReusedVariableAccumulatesGradient) {
  Parameter<double> p("p", 1, 1);
  p.value(0, 0) = 3.0;
  ag::Tape<double> t;
  auto x = t.param(p);
  auto y = ag::mul(x, x);  // x^2, x used twice
  t.backward(ag::add(y, x));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 7.0);
}

TEST(AutogradOps, RepeatedParamSharesOneLeaf) {
  Parameter<double> p("p", 2, 2);
  ag::Tape<double> t;
  EXPECT_EQ(t.param(p).id, t.param(p).id);
}

TEST(AutogradOps, FrozenParameterGetsNoGradient) {
  Parameter<double> p("p", 1, 2);
  p.value << 1.0, 2.0;
  p.trainable = false;
  ag::Tape<double> t;
  auto s = ag::sum_rows(ag::transpose(t.param(p)));
  t.backward(s);
  EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(AutogradOps, ShiftRowsZeroFillsOutsideRange) {
  ag::Tape<double> t;
  Mat<double> x(3, 1);
  x << 1, 2, 3;
  auto v = t.constant(x);
  Mat<double> fwd(3, 1), back(3, 1);
  fwd << 2, 3, 0;
  back << 0, 1, 2;
  EXPECT_EQ(max_abs_diff(ag::shift_rows(v, 1).value(), fwd), 0.0);
  EXPECT_EQ(max_abs_diff(ag::shift_rows(v, -1).value(), back), 0.0);
  EXPECT_EQ(ag::shift_rows(v, 5).value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(AutogradOps, GatherRowsRejectsOutOfRangeIds) {
  ag::Tape<double> t;
  auto table = t.constant(Mat<double>::Zero(4, 2));
  EXPECT_THROW(ag::gather_rows(table, {0, 4}), DataError);
  EXPECT_THROW(ag::gather_rows(table, {-1}), DataError);
  EXPECT_NO_THROW(ag::gather_rows(table, {3}));
}

TEST(AutogradOps, BackwardNeedsScalarRoot) {
  Parameter<double> p("p", 2, 2);
  ag::Tape<double> t;
  EXPECT_THROW(t.backward(t.param(p)), ConfigError);
}

TEST(AutogradOps, KinkSignatureTracksBranches) {
  ag::Tape<double> t(true);
  Mat<double> s(1, 3);
  s << 0.0, 0.5, 3.0;  // margins vs positive 0: 1.5 (active), 4.0 (active)
  ag::hinge_loss(t.constant(s), 0);
  ag::hinge_loss(t.constant(s), 2);  // margins 1+0-3, 1+0.5-3: both inactive
  EXPECT_EQ(t.kink_signature(), (std::vector<std::uint8_t>{1, 1, 0, 0}));

  ag::Tape<double> quiet;
  ag::hinge_loss(quiet.constant(s), 0);
  EXPECT_TRUE(quiet.kink_signature().empty());
}

TEST(AutogradOps, SoftmaxRowsIsStableForLargeLogits) {
  Mat<double> x(1, 3);
  x << 1000.0, 1000.0, -1000.0;
  auto s = ag::softmax_rows_value(x);
  EXPECT_TRUE(s.allFinite());
  EXPECT_NEAR(s(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s(0, 2), 0.0, 1e-15);
}
