// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace hqga;
using hqga::testing::max_abs_diff;
using hqga::testing::randn;

namespace {

HierarchyConfig decoder_config(DecoderMode mode, int d = 4, int answers = 6) {
  HierarchyConfig c;
  c.d = d;
  c.decoder_mode = mode;
  c.answer_set_size = answers;
  return c;
}

Mat<double> row(std::initializer_list<double> v) {
  Mat<double> m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST(McScores, IdenticalLogitsAreUniform) {
  std::mt19937_64 rng(1);
  DecoderParams<double> p(decoder_config(DecoderMode::MultiChoice));
  p.init(rng);
  ag::Tape<double> t;
  auto fq = t.constant(randn(rng, 1, 4)), fv = t.constant(randn(rng, 1, 4));
  std::vector<std::pair<ag::Var<double>, ag::Var<double>>> pairs(5, {fq, fv});
  auto s = mc_scores<double>(pairs, p).value();
  EXPECT_LT(max_abs_diff(s, Mat<double>::Constant(1, 5, 0.2)), 1e-15);
}

TEST(McScores, ZeroWeightIsUniform) {
  std::mt19937_64 rng(2);
  DecoderParams<double> p(decoder_config(DecoderMode::MultiChoice));
  p.init(rng);
  p.mc_weight.value.setZero();
  ag::Tape<double> t;
  std::vector<std::pair<ag::Var<double>, ag::Var<double>>> pairs;
  for (int i = 0; i < 4; ++i) pairs.push_back({t.constant(randn(rng, 1, 4)), t.constant(randn(rng, 1, 4))});
  EXPECT_LT(max_abs_diff(mc_scores<double>(pairs, p).value(), Mat<double>::Constant(1, 4, 0.25)), 1e-15);
}

TEST(McScores, HandLogitsClosedForm) {
  EXPECT_LT(max_abs_diff(softmax(row({0, std::log(2.0), std::log(4.0)})), row({1.0 / 7, 2.0 / 7, 4.0 / 7})), 1e-6);
}

TEST(McScores, LogitIsHadamardProjectionPlusBias) {
  DecoderParams<double> p(decoder_config(DecoderMode::MultiChoice));
  p.mc_weight.value << 1, 2, 3, 4;
  p.mc_bias.value << 0.5;
  ag::Tape<double> t;
  auto logit = mc_logit(t.constant(row({1, 1, 2, 0})), t.constant(row({3, -1, 0.5, 7})), p).value()(0, 0);
  EXPECT_DOUBLE_EQ(logit, 1 * 3 + 2 * -1 + 3 * 1 + 0 + 0.5);
}

TEST(McScores, FewerThanTwoCandidatesIsConfigError) {
  DecoderParams<double> p(decoder_config(DecoderMode::MultiChoice));
  ag::Tape<double> t;
  std::vector<std::pair<ag::Var<double>, ag::Var<double>>> one{{t.constant(row({1, 1, 1, 1})), t.constant(row({1, 1, 1, 1}))}};
  EXPECT_THROW(mc_scores<double>(one, p), ConfigError);
}

TEST(HingeLoss, ClosedForms) {
  EXPECT_DOUBLE_EQ(hinge_loss(row({1, 0, 0, 0}), 0), 0.0);
  EXPECT_DOUBLE_EQ(hinge_loss(row({0, 1, 0, 0}), 0), 4.0);
  EXPECT_DOUBLE_EQ(hinge_loss(Mat<double>(Mat<double>::Constant(1, 5, 0.2)), 2), 4.0);
  EXPECT_NEAR(hinge_loss(row({0.7, 0.2, 0.1}), 0), 0.9, 1e-15);
  EXPECT_THROW(hinge_loss(row({0.5, 0.5}), 2), ConfigError);
}

TEST(HingeLoss, MatchesSumOverNegatives) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    Mat<double> s = softmax(randn(rng, 1, 5, 2.0));
    const int y = i % 5;
    double ref = 0;
    for (int n = 0; n < 5; ++n)
      if (n != y) ref += std::max(0.0, 1.0 + s(0, n) - s(0, y));
    EXPECT_NEAR(hinge_loss(s, y), ref, 1e-15);
  }
}

TEST(HingeLoss, TapeVersionMatchesValueVersion) {
  std::mt19937_64 rng(3);
  Mat<double> s = softmax(randn(rng, 1, 5));
  ag::Tape<double> t;
  EXPECT_NEAR(ag::hinge_loss(t.constant(s), 3).value()(0, 0), hinge_loss(s, 3), 1e-15);
}

TEST(OeScores, ZeroWeightsAreUniform) {
  std::mt19937_64 rng(4);
  DecoderParams<double> p(decoder_config(DecoderMode::OpenEnded));
  p.init(rng);
  p.oe_weight.value.setZero();
  p.oe_bias.value.setZero();
  ag::Tape<double> t;
  auto s = oe_scores(t.constant(randn(rng, 1, 4)), t.constant(randn(rng, 1, 4)), p).value();
  EXPECT_LT(max_abs_diff(s, Mat<double>::Constant(1, 6, 1.0 / 6)), 1e-15);
}

TEST(OeScores, LargeBiasSaturates) {
  std::mt19937_64 rng(5);
  DecoderParams<double> p(decoder_config(DecoderMode::OpenEnded));
  p.init(rng);
  p.oe_weight.value.setZero();
  p.oe_bias.value.setZero();
  p.oe_bias.value(0, 3) = 20;
  ag::Tape<double> t;
  auto s = oe_scores(t.constant(randn(rng, 1, 4)), t.constant(randn(rng, 1, 4)), p).value();
  Mat<double> onehot = Mat<double>::Zero(1, 6);
  onehot(0, 3) = 1;
  EXPECT_LT(max_abs_diff(s, onehot), 1e-6 * 6);
  EXPECT_NEAR(s(0, 3), 1.0 / (1.0 + 5.0 * std::exp(-20.0)), 1e-12);
}

TEST(OeScores, MatchesConcatEluLinearSoftmax) {
  std::mt19937_64 rng(6);
  DecoderParams<double> p(decoder_config(DecoderMode::OpenEnded, 4, 5));
  p.init(rng);
  Mat<double> fq = randn(rng, 1, 4), fv = randn(rng, 1, 4);
  ag::Tape<double> t;
  auto s = oe_scores(t.constant(fq), t.constant(fv), p).value();
  double h[4], logits[5], z = 0;
  for (int j = 0; j < 4; ++j) {
    double acc = p.oe_fuse.bias.value(0, j);
    for (int i = 0; i < 4; ++i) acc += fq(0, i) * p.oe_fuse.weight.value(i, j) + fv(0, i) * p.oe_fuse.weight.value(4 + i, j);
    h[j] = acc > 0 ? acc : std::exp(acc) - 1;
  }
  for (int a = 0; a < 5; ++a) {
    logits[a] = p.oe_bias.value(0, a);
    for (int j = 0; j < 4; ++j) logits[a] += h[j] * p.oe_weight.value(j, a);
    z += std::exp(logits[a]);
  }
  for (int a = 0; a < 5; ++a) EXPECT_NEAR(s(0, a), std::exp(logits[a]) / z, 1e-6);
}

TEST(CeLoss, ClosedForms) {
  EXPECT_DOUBLE_EQ(ce_loss(row({0, 1, 0}), 1), 0.0);
  EXPECT_NEAR(ce_loss(Mat<double>(Mat<double>::Constant(1, 4, 0.25)), 2), std::log(4.0), 1e-6);
  EXPECT_NEAR(ce_loss(row({0.25, 0.75}), 0), 1.3863, 1e-4);
  EXPECT_NEAR(ce_loss(row({0, 1}), 0), -std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(ce_loss(row({0, 1}), 0)));
}

TEST(CeLoss, StrictlyDecreasingInTrueScore) {
  double prev = ce_loss(row({0.01, 0.99}), 0);
  for (double s = 0.02; s < 1.0; s += 0.01) {
    double cur = ce_loss(row({s, 1 - s}), 0);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Predict, ArgmaxWithLowestIndexTieBreak) {
  EXPECT_EQ(predict(row({0.1, 0.7, 0.2})), 1);
  EXPECT_EQ(predict(row({0.5, 0.5})), 0);
  EXPECT_EQ(predict(row({0, 0, 0, 1})), 3);
}

TEST(Predict, InvariantToLogitShift) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20; ++i) {
    Mat<double> z = randn(rng, 1, 6);
    Mat<double> shifted = z.array() + 3.7;
    EXPECT_EQ(predict(softmax(z)), predict(softmax(shifted)));
  }
}

TEST(Scores, AreDistributions) {
  std::mt19937_64 rng(8);
  DecoderParams<double> p(decoder_config(DecoderMode::OpenEnded));
  p.init(rng);
  for (int i = 0; i < 10; ++i) {
    ag::Tape<double> t;
    auto s = oe_scores(t.constant(randn(rng, 1, 4, 3)), t.constant(randn(rng, 1, 4, 3)), p).value();
    EXPECT_NEAR(s.sum(), 1.0, 1e-6);
    EXPECT_GE(s.minCoeff(), 0.0);
  }
}
