// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Answer decoders and losses.
//
// Multi-choice: logit_i = W_c^T (f_Q_i * f_V_i) + b, softmax over candidates,
// trained with a hinge on the softmax scores summed over negatives only.
// Open-ended: s = softmax(W_c^T ELU(W_qv [f_Q ; f_V]) + b), trained with
// cross-entropy.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "hqga/autograd.hpp"
#include "hqga/config.hpp"

namespace hqga {

template <typename S>
struct DecoderParams {
  DecoderMode mode = DecoderMode::MultiChoice;
  // Multi-choice.
  Parameter<S> mc_weight;  // d x 1
  Parameter<S> mc_bias;    // 1 x 1
  // Open-ended.
  Linear<S> oe_fuse;       // 2d -> d
  Parameter<S> oe_weight;  // d x |A_oe|
  Parameter<S> oe_bias;    // 1 x |A_oe|

  DecoderParams() = default;
  explicit DecoderParams(const HierarchyConfig& c) : mode(c.decoder_mode) {
    if (mode == DecoderMode::MultiChoice) {
      mc_weight = Parameter<S>("decoder.mc_weight", c.d, 1);
      mc_bias = Parameter<S>("decoder.mc_bias", 1, 1);
    } else {
      oe_fuse = Linear<S>("decoder.oe_fuse", 2 * c.d, c.d);
      oe_weight = Parameter<S>("decoder.oe_weight", c.d, c.answer_set_size);
      oe_bias = Parameter<S>("decoder.oe_bias", 1, c.answer_set_size);
    }
  }

  void init(std::mt19937_64& rng) {
    if (mode == DecoderMode::MultiChoice) {
      init_fan_in(mc_weight, rng, mc_weight.rows());
      mc_bias.value.setZero();
    } else {
      oe_fuse.init(rng);
      init_fan_in(oe_weight, rng, oe_weight.rows());
      oe_bias.value.setZero();
    }
  }
  void collect(ParameterList<S>& out) {
    if (mode == DecoderMode::MultiChoice) {
      out.push_back(&mc_weight);
      out.push_back(&mc_bias);
    } else {
      oe_fuse.collect(out);
      out.push_back(&oe_weight);
      out.push_back(&oe_bias);
    }
  }
};

// Pre-softmax logit of one (question+candidate, video) pair, 1 x 1.
template <typename S>
ag::Var<S> mc_logit(ag::Var<S> f_Q, ag::Var<S> f_V, DecoderParams<S>& p) {
  ag::Tape<S>& t = *f_Q.tape;
  return ag::add(ag::matmul(ag::mul(f_Q, f_V), t.param(p.mc_weight)), t.param(p.mc_bias));
}

template <typename S>
ag::Var<S> mc_scores(std::span<const std::pair<ag::Var<S>, ag::Var<S>>> pairs, DecoderParams<S>& p) {
  if (pairs.size() < 2) throw ConfigError("mc_scores: at least two candidates are required");
  std::vector<ag::Var<S>> logits;
  logits.reserve(pairs.size());
  for (const auto& [f_Q, f_V] : pairs) logits.push_back(mc_logit(f_Q, f_V, p));
  return ag::softmax_rows(ag::transpose(ag::concat_rows(logits)));
}

template <typename S>
ag::Var<S> oe_scores(ag::Var<S> f_Q, ag::Var<S> f_V, DecoderParams<S>& p) {
  ag::Tape<S>& t = *f_Q.tape;
  auto fused = ag::elu(ag::add_row(ag::matmul(ag::concat_cols(f_Q, f_V), t.param(p.oe_fuse.weight)),
                                   t.param(p.oe_fuse.bias)));
  return ag::softmax_rows(ag::add_row(ag::matmul(fused, t.param(p.oe_weight)), t.param(p.oe_bias)));
}

// Value-level helpers over a score vector.

template <typename S>
Mat<S> softmax(const Mat<S>& logits) {
  return ag::softmax_rows_value(logits);
}

template <typename S>
S hinge_loss(const Mat<S>& scores, int positive) {
  if (positive < 0 || positive >= scores.cols()) throw ConfigError("hinge_loss: positive index out of range");
  S total = 0;
  for (Eigen::Index n = 0; n < scores.cols(); ++n)
    if (n != positive) total += std::max(S(0), S(1) + scores(0, n) - scores(0, positive));
  return total;
}

inline constexpr double kProbabilityFloor = 1e-12;

template <typename S>
S ce_loss(const Mat<S>& scores, int answer) {
  if (answer < 0 || answer >= scores.cols()) throw ConfigError("ce_loss: answer index out of range");
  return -std::log(std::max(scores(0, answer), static_cast<S>(kProbabilityFloor)));
}

// Argmax with lowest-index tie-break.
template <typename S>
int predict(const Mat<S>& scores) {
  if (scores.size() == 0) throw ConfigError("predict: empty score vector");
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores.data()[i] > scores.data()[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace hqga
