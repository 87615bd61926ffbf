// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Query-conditioned graph attention (QGA) unit.
//
// Given n input nodes X_in (n x d) and query tokens Q (M x d):
//
//   alpha = softmax_words(X_in Q^T)              X_hat = X_in + alpha Q
//   A     = softmax_rows((X_hat W_av)(X_hat W_ak)^T)
//   X^(0) = X_hat,  X^(h) = ReLU((A + I) X^(h-1) W^(h)),  X_out = X_hat + X^(H)
//   beta  = softmax_nodes(X_out W_p)             x_p = sum_i beta_i x_out_i
//
// No scaling inside the adjacency logits, (A + I) is not renormalized and all
// maps are bias-free. In sum-pool mode the unit is replaced by x_p = sum_i x_in_i.

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hqga/autograd.hpp"
#include "hqga/tensor.hpp"

namespace hqga {

template <typename S>
struct QGAUnitParams {
  Parameter<S> W_av;                   // d x d/2
  Parameter<S> W_ak;                   // d x d/2
  std::vector<Parameter<S>> W_graph;   // H matrices, d x d
  Parameter<S> W_p;                    // d x 1

  QGAUnitParams() = default;
  QGAUnitParams(const std::string& name, Eigen::Index d, int H)
      : W_av(name + ".W_av", d, d / 2), W_ak(name + ".W_ak", d, d / 2), W_p(name + ".W_p", d, 1) {
    W_graph.reserve(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) W_graph.emplace_back(name + ".W_graph." + std::to_string(h), d, d);
  }

  Eigen::Index width() const { return W_av.rows(); }
  int layers() const { return static_cast<int>(W_graph.size()); }

  void init(std::mt19937_64& rng) {
    const Eigen::Index d = width();
    init_fan_in(W_av, rng, d);
    init_fan_in(W_ak, rng, d);
    for (auto& w : W_graph) init_fan_in(w, rng, d);
    init_fan_in(W_p, rng, d);
  }
  void collect(ParameterList<S>& out) {
    out.push_back(&W_av);
    out.push_back(&W_ak);
    for (auto& w : W_graph) out.push_back(&w);
    out.push_back(&W_p);
  }
};

// Attention tensors of one unit invocation, detached from the tape.
template <typename S>
struct UnitTrace {
  int unit_index = 0;
  std::optional<Mat<S>> alpha;  // n x M, absent when conditioning is off
  Mat<S> A;                     // n x n
  Mat<S> beta;                  // 1 x n
};

template <typename S>
struct QGAVars {
  ag::Var<S> X_out;
  ag::Var<S> x_p;
  std::optional<ag::Var<S>> alpha;
  std::optional<ag::Var<S>> A;
  std::optional<ag::Var<S>> beta;
};

// Plain-value result of qga_forward.
template <typename S>
struct QGAOutput {
  Mat<S> X_out;
  Mat<S> x_p;
  std::optional<Mat<S>> alpha;
  Mat<S> A;
  Mat<S> beta;
};

template <typename S>
struct Conditioned {
  ag::Var<S> X_hat;
  ag::Var<S> alpha;
};

template <typename S>
Conditioned<S> query_condition(ag::Var<S> X_in, ag::Var<S> Q) {
  if (X_in.rows() < 1 || Q.rows() < 1) throw ConfigError("query_condition: needs at least one node and one word");
  if (X_in.cols() != Q.cols()) throw ConfigError("query_condition: node and word widths differ");
  if (!X_in.value().allFinite() || !Q.value().allFinite()) throw DataError("query_condition: non-finite input");
  auto alpha = ag::softmax_rows(ag::matmul_nt(X_in, Q));
  auto X_hat = ag::add(X_in, ag::matmul(alpha, Q));
  return {X_hat, alpha};
}

template <typename S>
ag::Var<S> build_adjacency(ag::Var<S> X_hat, ag::Var<S> W_av, ag::Var<S> W_ak) {
  if (X_hat.rows() < 1) throw ConfigError("build_adjacency: empty node set");
  return ag::softmax_rows(ag::matmul_nt(ag::matmul(X_hat, W_av), ag::matmul(X_hat, W_ak)));
}

template <typename S>
ag::Var<S> graph_attention(ag::Var<S> X_hat, ag::Var<S> A, const std::vector<ag::Var<S>>& W_graph) {
  if (A.rows() != X_hat.rows() || A.cols() != X_hat.rows()) throw ConfigError("graph_attention: A must be n x n");
  ag::Var<S> X = X_hat;
  for (const auto& W : W_graph) {
    auto propagated = ag::add(ag::matmul(A, X), X);  // (A + I) X
    X = ag::relu(ag::matmul(propagated, W));
  }
  return ag::add(X_hat, X);
}

template <typename S>
std::pair<ag::Var<S>, ag::Var<S>> pool_nodes(ag::Var<S> X_out, ag::Var<S> W_p) {
  if (X_out.rows() < 1) throw ConfigError("pool_nodes: empty node set");
  auto beta = ag::softmax_rows(ag::transpose(ag::matmul(X_out, W_p)));
  return {ag::matmul(beta, X_out), beta};
}

template <typename S>
QGAVars<S> qga_forward(ag::Var<S> X_in, std::optional<ag::Var<S>> Q, QGAUnitParams<S>& p, bool cond_enabled,
                       bool sumpool) {
  if (X_in.rows() < 1) throw ConfigError("qga_forward: empty node set");
  if (sumpool) return QGAVars<S>{X_in, ag::sum_rows(X_in), std::nullopt, std::nullopt, std::nullopt};
  if (X_in.cols() != p.width()) throw ConfigError("qga_forward: node width does not match unit width");
  ag::Tape<S>& t = *X_in.tape;
  QGAVars<S> out;
  ag::Var<S> X_hat = X_in;
  if (cond_enabled) {
    if (!Q) throw ConfigError("qga_forward: conditioning requested without a query");
    auto c = query_condition(X_in, *Q);
    X_hat = c.X_hat;
    out.alpha = c.alpha;
  }
  auto A = build_adjacency(X_hat, t.param(p.W_av), t.param(p.W_ak));
  std::vector<ag::Var<S>> W;
  W.reserve(p.W_graph.size());
  for (auto& w : p.W_graph) W.push_back(t.param(w));
  out.X_out = graph_attention(X_hat, A, W);
  auto [x_p, beta] = pool_nodes(out.X_out, t.param(p.W_p));
  out.x_p = x_p;
  out.A = A;
  out.beta = beta;
  return out;
}

template <typename S>
UnitTrace<S> to_trace(const QGAVars<S>& v, int unit_index) {
  UnitTrace<S> tr;
  tr.unit_index = unit_index;
  if (v.alpha) tr.alpha = v.alpha->value();
  if (v.A) tr.A = v.A->value();
  if (v.beta) tr.beta = v.beta->value();
  return tr;
}

// Value-level entry points.

template <typename S>
std::pair<Mat<S>, Mat<S>> query_condition(const Mat<S>& X_in, const Mat<S>& Q) {
  ag::Tape<S> t;
  auto c = query_condition(t.constant(X_in), t.constant(Q));
  return {c.X_hat.value(), c.alpha.value()};
}

template <typename S>
Mat<S> build_adjacency(const Mat<S>& X_hat, const Mat<S>& W_av, const Mat<S>& W_ak) {
  ag::Tape<S> t;
  return build_adjacency(t.constant(X_hat), t.constant(W_av), t.constant(W_ak)).value();
}

template <typename S>
Mat<S> graph_attention(const Mat<S>& X_hat, const Mat<S>& A, const std::vector<Mat<S>>& W_graph) {
  ag::Tape<S> t;
  std::vector<ag::Var<S>> W;
  for (const auto& w : W_graph) W.push_back(t.constant(w));
  return graph_attention(t.constant(X_hat), t.constant(A), W).value();
}

template <typename S>
std::pair<Mat<S>, Mat<S>> pool_nodes(const Mat<S>& X_out, const Mat<S>& W_p) {
  ag::Tape<S> t;
  auto [x_p, beta] = pool_nodes(t.constant(X_out), t.constant(W_p));
  return {x_p.value(), beta.value()};
}

template <typename S>
QGAOutput<S> qga_forward(const Mat<S>& X_in, const Mat<S>& Q, QGAUnitParams<S>& p, bool cond_enabled, bool sumpool) {
  ag::Tape<S> t;
  auto v = qga_forward(t.constant(X_in), std::optional<ag::Var<S>>(t.constant(Q)), p, cond_enabled, sumpool);
  QGAOutput<S> out;
  out.X_out = v.X_out.value();
  out.x_p = v.x_p.value();
  if (v.alpha) out.alpha = v.alpha->value();
  if (v.A) out.A = v.A->value();
  if (v.beta) out.beta = v.beta->value();
  return out;
}

}  // namespace hqga
