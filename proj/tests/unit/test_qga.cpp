// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "helpers.hpp"

using namespace hqga;
using hqga::testing::max_abs_diff;
using hqga::testing::randn;

namespace {

QGAUnitParams<double> random_unit(std::mt19937_64& rng, int d, int H) {
  QGAUnitParams<double> p("u", d, H);
  p.init(rng);
  return p;
}

void expect_rows_stochastic(const Mat<double>& m, double tol = 1e-6) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    EXPECT_NEAR(m.row(i).sum(), 1.0, tol);
    EXPECT_GE(m.row(i).minCoeff(), 0.0);
  }
}

Mat<double> permute_rows(const Mat<double>& m, const std::vector<int>& perm) {
  Mat<double> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

}  // namespace

TEST(QueryCondition, SingleWordGivesUnitAlphaAndBroadcast) {
  std::mt19937_64 rng(1);
  Mat<double> X = randn(rng, 3, 4), Q = randn(rng, 1, 4);
  auto [X_hat, alpha] = query_condition(X, Q);
  EXPECT_EQ(max_abs_diff(alpha, Mat<double>::Ones(3, 1)), 0.0);
  EXPECT_LT(max_abs_diff(X_hat, Mat<double>(X.rowwise() + Q.row(0))), 1e-15);
}

TEST(QueryCondition, IdenticalWordsGiveUniformAlpha) {
  std::mt19937_64 rng(2);
  Mat<double> X = randn(rng, 2, 4);
  Mat<double> word = randn(rng, 1, 4);
  Mat<double> Q = word.replicate(3, 1);
  auto [X_hat, alpha] = query_condition(X, Q);
  EXPECT_LT(max_abs_diff(alpha, Mat<double>::Constant(2, 3, 1.0 / 3)), 1e-15);
  EXPECT_LT(max_abs_diff(X_hat, Mat<double>(X.rowwise() + word.row(0))), 1e-14);
}

TEST(QueryCondition, MatchesDoubleLoop) {
  std::mt19937_64 rng(3);
  Mat<double> X = randn(rng, 2, 4), Q = randn(rng, 3, 4);
  auto [X_hat, alpha] = query_condition(X, Q);
  for (int i = 0; i < 2; ++i) {
    double s[3], mx = -1e300, z = 0;
    for (int m = 0; m < 3; ++m) {
      s[m] = 0;
      for (int j = 0; j < 4; ++j) s[m] += X(i, j) * Q(m, j);
      mx = std::max(mx, s[m]);
    }
    for (double& v : s) z += (v = std::exp(v - mx));
    for (int m = 0; m < 3; ++m) EXPECT_NEAR(alpha(i, m), s[m] / z, 1e-6);
    for (int j = 0; j < 4; ++j) {
      double acc = X(i, j);
      for (int m = 0; m < 3; ++m) acc += s[m] / z * Q(m, j);
      EXPECT_NEAR(X_hat(i, j), acc, 1e-6);
    }
  }
}

TEST(QueryCondition, NonFiniteInputIsDataError) {
  Mat<double> X = Mat<double>::Zero(2, 2), Q = Mat<double>::Zero(1, 2);
  X(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(query_condition(X, Q), DataError);
}

TEST(BuildAdjacency, SingleNode) {
  std::mt19937_64 rng(4);
  auto p = random_unit(rng, 4, 1);
  EXPECT_EQ(build_adjacency(randn(rng, 1, 4), p.W_av.value, p.W_ak.value)(0, 0), 1.0);
}

TEST(BuildAdjacency, IdenticalNodesGiveUniformRows) {
  std::mt19937_64 rng(5);
  auto p = random_unit(rng, 4, 1);
  Mat<double> X = randn(rng, 1, 4).replicate(4, 1);
  EXPECT_LT(max_abs_diff(build_adjacency(X, p.W_av.value, p.W_ak.value), Mat<double>::Constant(4, 4, 0.25)), 1e-15);
}

TEST(BuildAdjacency, MatchesPairwiseLoop) {
  std::mt19937_64 rng(6);
  auto p = random_unit(rng, 4, 1);
  Mat<double> X = randn(rng, 3, 4);
  Mat<double> A = build_adjacency(X, p.W_av.value, p.W_ak.value);
  for (int i = 0; i < 3; ++i) {
    double logits[3], z = 0;
    for (int k = 0; k < 3; ++k) {
      logits[k] = 0;
      for (int c = 0; c < 2; ++c) {
        double v = 0, w = 0;
        for (int j = 0; j < 4; ++j) {
          v += X(i, j) * p.W_av.value(j, c);
          w += X(k, j) * p.W_ak.value(j, c);
        }
        logits[k] += v * w;
      }
      z += std::exp(logits[k]);
    }
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(A(i, k), std::exp(logits[k]) / z, 1e-6);
  }
}

TEST(GraphAttention, ZeroWeightsAreSkipIdentity) {
  std::mt19937_64 rng(7);
  Mat<double> X = randn(rng, 3, 4);
  Mat<double> A = Mat<double>::Constant(3, 3, 1.0 / 3);
  std::vector<Mat<double>> W(2, Mat<double>::Zero(4, 4));
  EXPECT_EQ(max_abs_diff(graph_attention(X, A, W), X), 0.0);
}

TEST(GraphAttention, ZeroInputStaysZero) {
  std::mt19937_64 rng(8);
  auto p = random_unit(rng, 4, 2);
  Mat<double> X = Mat<double>::Zero(3, 4);
  Mat<double> A = build_adjacency(X, p.W_av.value, p.W_ak.value);
  EXPECT_LT(max_abs_diff(A, Mat<double>::Constant(3, 3, 1.0 / 3)), 1e-15);
  std::vector<Mat<double>> W{p.W_graph[0].value, p.W_graph[1].value};
  EXPECT_EQ(graph_attention(X, A, W).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GraphAttention, HandInstanceMatchesUnrolledLoop) {
  Mat<double> X(2, 3), A(2, 2), W1(3, 3), W2(3, 3);
  X << 1, -1, 0.5, 0.2, 0.3, -0.4;
  A << 0.75, 0.25, 0.4, 0.6;
  W1 << 0.5, -0.2, 0.1, 0.3, 0.8, -0.5, -0.1, 0.4, 0.2;
  W2 << 1, 0, -0.3, 0.2, -0.6, 0.1, 0.05, 0.3, 0.9;
  Mat<double> cur = X;
  for (const Mat<double>* W : {&W1, &W2}) {
    Mat<double> next(2, 3);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int c = 0; c < 3; ++c) {
          double agg = cur(i, c);
          for (int k = 0; k < 2; ++k) agg += A(i, k) * cur(k, c);
          acc += agg * (*W)(c, j);
        }
        next(i, j) = std::max(0.0, acc);
      }
    cur = next;
  }
  EXPECT_LT(max_abs_diff(graph_attention(X, A, {W1, W2}), Mat<double>(X + cur)), 1e-6);
}

TEST(PoolNodes, SingleNode) {
  std::mt19937_64 rng(9);
  Mat<double> X = randn(rng, 1, 3);
  auto [x_p, beta] = pool_nodes(X, randn(rng, 3, 1));
  EXPECT_EQ(beta(0, 0), 1.0);
  EXPECT_EQ(max_abs_diff(x_p, X), 0.0);
}

TEST(PoolNodes, IdenticalNodes) {
  std::mt19937_64 rng(10);
  Mat<double> X = randn(rng, 1, 3).replicate(4, 1);
  auto [x_p, beta] = pool_nodes(X, randn(rng, 3, 1));
  EXPECT_LT(max_abs_diff(beta, Mat<double>::Constant(1, 4, 0.25)), 1e-15);
  EXPECT_LT(max_abs_diff(x_p, X.row(0)), 1e-14);
}

TEST(PoolNodes, MatchesWeightedSumLoop) {
  std::mt19937_64 rng(11);
  Mat<double> X = randn(rng, 4, 3), Wp = randn(rng, 3, 1);
  auto [x_p, beta] = pool_nodes(X, Wp);
  double s[4], z = 0;
  for (int i = 0; i < 4; ++i) {
    s[i] = X(i, 0) * Wp(0, 0) + X(i, 1) * Wp(1, 0) + X(i, 2) * Wp(2, 0);
    z += std::exp(s[i]);
  }
  for (int j = 0; j < 3; ++j) {
    double acc = 0;
    for (int i = 0; i < 4; ++i) acc += std::exp(s[i]) / z * X(i, j);
    EXPECT_NEAR(x_p(0, j), acc, 1e-6);
  }
}

TEST(QGAForward, SumpoolAddsRows) {
  QGAUnitParams<double> p("u", 2, 1);
  Mat<double> X(2, 2);
  X << 1, 0, 0, 1;
  auto out = qga_forward(X, Mat<double>(Mat<double>::Zero(1, 2)), p, true, true);
  EXPECT_EQ(out.x_p(0, 0), 1.0);
  EXPECT_EQ(out.x_p(0, 1), 1.0);
}

TEST(QGAForward, NoConditionZeroGraphIsIdentity) {
  std::mt19937_64 rng(12);
  auto p = random_unit(rng, 4, 2);
  for (auto& w : p.W_graph) w.value.setZero();
  Mat<double> X = randn(rng, 3, 4);
  auto out = qga_forward(X, randn(rng, 2, 4), p, false, false);
  EXPECT_EQ(max_abs_diff(out.X_out, X), 0.0);
  EXPECT_FALSE(out.alpha.has_value());
}

TEST(QGAForward, MatchesOracleComposition) {
  std::mt19937_64 rng(13);
  auto p = random_unit(rng, 4, 2);
  Mat<double> X = randn(rng, 3, 4), Q = randn(rng, 2, 4);
  auto out = qga_forward(X, Q, p, true, false);
  auto ref = oracle::naive_qga(oracle::from_eigen(X), oracle::from_eigen(Q), oracle::unit_of(p), true, false);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.X_out(i, j), ref.X_out[i][j], 1e-6);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.x_p(0, j), ref.x_p[j], 1e-6);
}

TEST(QGAProperties, RowStochasticOnRandomInstances) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + trial % 6, d = 2 * (1 + trial % 5), M = 1 + trial % 4;
    auto p = random_unit(rng, d, 1 + trial % 3);
    auto out = qga_forward(randn(rng, n, d, 3.0), randn(rng, M, d, 3.0), p, true, false);
    expect_rows_stochastic(*out.alpha);
    expect_rows_stochastic(out.A);
    expect_rows_stochastic(out.beta);
    EXPECT_LE(out.beta.maxCoeff(), 1.0);
  }
}

TEST(QGAProperties, PermutationEquivariance) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 5, d = 6;
    auto p = random_unit(rng, d, 2);
    Mat<double> X = randn(rng, n, d), Q = randn(rng, 3, d);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto a = qga_forward(X, Q, p, true, false);
    auto b = qga_forward(permute_rows(X, perm), Q, p, true, false);
    EXPECT_LT(max_abs_diff(b.X_out, permute_rows(a.X_out, perm)), 1e-6);
    EXPECT_LT(max_abs_diff(b.x_p, a.x_p), 1e-6);
    EXPECT_LT(max_abs_diff(*b.alpha, permute_rows(*a.alpha, perm)), 1e-6);
    EXPECT_LT(max_abs_diff(b.beta.transpose(), permute_rows(a.beta.transpose(), perm)), 1e-6);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) EXPECT_NEAR(b.A(i, k), a.A(perm[i], perm[k]), 1e-6);
  }
}

TEST(QGAProperties, SoftmaxShiftInvariance) {
  std::mt19937_64 rng(16);
  Mat<double> z = randn(rng, 3, 5);
  Mat<double> shifted = z;
  shifted.row(1).array() += 17.5;
  Mat<double> a = ag::softmax_rows_value(z), b = ag::softmax_rows_value(shifted);
  EXPECT_LT(max_abs_diff(a, b), 1e-6);
}

TEST(QGAProperties, DegenerateSingleNodeMatchesOracle) {
  std::mt19937_64 rng(17);
  auto p = random_unit(rng, 4, 3);
  Mat<double> X = randn(rng, 1, 4), Q = randn(rng, 2, 4);
  auto out = qga_forward(X, Q, p, true, false);
  auto ref = oracle::naive_qga(oracle::from_eigen(X), oracle::from_eigen(Q), oracle::unit_of(p), true, false);
  EXPECT_EQ(out.A(0, 0), 1.0);
  EXPECT_EQ(out.beta(0, 0), 1.0);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.x_p(0, j), ref.x_p[j], 1e-12);
}

TEST(QGAProperties, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(18);
  auto p = random_unit(rng, 6, 2);
  const Mat<double> X = randn(rng, 4, 6), Q = randn(rng, 3, 6), target = randn(rng, 6, 1);
  auto loss = [&](bool backward) {
    ag::Tape<double> tape(true);
    auto out = qga_forward(tape.constant(X), std::optional<ag::Var<double>>(tape.constant(Q)), p, true, false);
    auto l = ag::matmul(out.x_p, tape.constant(target));
    if (backward) tape.backward(l);
    return oracle::LossEvaluation{l.value()(0, 0), tape.kink_signature()};
  };
  ParameterList<double> params;
  p.collect(params);
  auto report = oracle::fd_gradient_check(loss, params);
  EXPECT_LE(report.max_rel_err(), 1e-4);
}
