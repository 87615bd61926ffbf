// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations for verification.
//
// naive_qga and naive_hqga restate the QGA unit and the hierarchy as plain
// scalar loops over nested std::vector<double>. They use nothing from the
// main modules except the parameter and config structs as data sources, so
// agreement between the two routes is meaningful.
//
// fd_gradient_check compares analytic gradients with central differences.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqga/config.hpp"
#include "hqga/errors.hpp"
#include "hqga/hierarchy.hpp"
#include "hqga/model.hpp"

namespace hqga::oracle {

using Matrix = std::vector<std::vector<double>>;
using Vector = std::vector<double>;

inline Matrix from_eigen(const Mat<double>& m) {
  Matrix out(static_cast<std::size_t>(m.rows()), Vector(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

struct Unit {
  Matrix W_av, W_ak;
  std::vector<Matrix> W_graph;
  Matrix W_p;  // d x 1
};

struct Affine {
  Matrix W;  // in x out
  Vector b;
};

struct Hierarchy {
  Unit O, F, C;
  Affine merge_ao, merge_am;
  Affine global_O, global_F, global_C;
};

inline Unit unit_of(const QGAUnitParams<double>& p) {
  Unit u{from_eigen(p.W_av.value), from_eigen(p.W_ak.value), {}, from_eigen(p.W_p.value)};
  for (const auto& w : p.W_graph) u.W_graph.push_back(from_eigen(w.value));
  return u;
}

inline Affine affine_of(const Linear<double>& l) { return {from_eigen(l.weight.value), from_eigen(l.bias.value).at(0)}; }

inline Hierarchy hierarchy_of(const HierarchyParams<double>& p) {
  return {unit_of(p.unit_O),         unit_of(p.unit_F),         unit_of(p.unit_C),        affine_of(p.merge_appearance),
          affine_of(p.merge_motion), affine_of(p.global_O),     affine_of(p.global_F),    affine_of(p.global_C)};
}

inline Vector softmax(const Vector& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  Vector e(z.size());
  double sum = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - mx);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return e;
}

inline double elu(double x) { return x > 0 ? x : std::expm1(x); }

struct QGAResult {
  Matrix X_out;
  Vector x_p;
  std::optional<Matrix> alpha;
  Matrix A;
  Vector beta;
};

// Q may be empty when cond is false.
inline QGAResult naive_qga(const Matrix& X, const Matrix& Q, const Unit& u, bool cond, bool sumpool) {
  const std::size_t n = X.size();
  if (n == 0) throw ConfigError("naive_qga: empty node set");
  const std::size_t d = X[0].size();
  QGAResult r;
  if (sumpool) {
    r.X_out = X;
    r.x_p.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) r.x_p[j] += X[i][j];
    return r;
  }

  Matrix Xh = X;
  if (cond) {
    const std::size_t M = Q.size();
    Matrix alpha(n, Vector(M));
    for (std::size_t i = 0; i < n; ++i) {
      Vector s(M, 0.0);
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t j = 0; j < d; ++j) s[m] += X[i][j] * Q[m][j];
      alpha[i] = softmax(s);
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t m = 0; m < M; ++m) Xh[i][j] += alpha[i][m] * Q[m][j];
    }
    r.alpha = alpha;
  }

  const std::size_t half = u.W_av[0].size();
  Matrix V(n, Vector(half, 0.0)), Kk(n, Vector(half, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < half; ++c)
      for (std::size_t j = 0; j < d; ++j) {
        V[i][c] += Xh[i][j] * u.W_av[j][c];
        Kk[i][c] += Xh[i][j] * u.W_ak[j][c];
      }
  r.A.assign(n, Vector(n));
  for (std::size_t i = 0; i < n; ++i) {
    Vector logits(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < half; ++c) logits[k] += V[i][c] * Kk[k][c];
    r.A[i] = softmax(logits);
  }

  Matrix cur = Xh;
  for (const auto& W : u.W_graph) {
    Matrix P = cur;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < d; ++j) P[i][j] += r.A[i][k] * cur[k][j];
    Matrix next(n, Vector(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < d; ++c) acc += P[i][c] * W[c][j];
        next[i][j] = acc > 0 ? acc : 0.0;
      }
    cur = next;
  }
  r.X_out = Xh;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) r.X_out[i][j] += cur[i][j];

  Vector logits(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) logits[i] += r.X_out[i][j] * u.W_p[j][0];
  r.beta = softmax(logits);
  r.x_p.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) r.x_p[j] += r.beta[i] * r.X_out[i][j];
  return r;
}

// ELU(W [a ; b] + bias) for one row.
inline Vector merge_rows(const Vector& a, const Vector& b, const Affine& f) {
  Vector in = a;
  in.insert(in.end(), b.begin(), b.end());
  Vector out = f.b;
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t i = 0; i < in.size(); ++i) out[j] += in[i] * f.W[i][j];
    out[j] = elu(out[j]);
  }
  return out;
}

struct Bundle {
  Matrix F_m;  // K x d
  Matrix F_a;  // T x d
  Matrix F_o;  // T*N x d
  Matrix Q;    // M x d
  Vector f_Q;  // d
};

inline Bundle bundle_of(const FeatureBundle<double>& b) {
  return {from_eigen(b.F_m), from_eigen(b.F_a), from_eigen(b.F_o), from_eigen(b.Q), from_eigen(b.f_Q).at(0)};
}

inline Vector naive_hqga(const Bundle& in, const Hierarchy& p, const HierarchyConfig& c) {
  const int per_clip = static_cast<int>(std::lround(c.gamma * c.L));
  const int T = per_clip * c.K;

  auto unit = [&](Matrix nodes, const Unit& u, const Affine& global, bool cond, bool sumpool) {
    if (sumpool) return naive_qga(nodes, {}, u, false, true).x_p;
    if (c.global_fQ_condition) {
      if (cond)
        for (auto& row : nodes) row = merge_rows(row, in.f_Q, global);
      return naive_qga(nodes, {}, u, false, false).x_p;
    }
    return naive_qga(nodes, in.Q, u, cond, false).x_p;
  };

  Matrix clips;
  if (!c.use_GO && !c.use_GF) {
    clips = in.F_m;
  } else {
    Matrix frames;
    if (c.use_GO) {
      for (int t = 0; t < T; ++t) {
        Matrix objs(in.F_o.begin() + t * c.N, in.F_o.begin() + (t + 1) * c.N);
        Vector f = unit(objs, p.O, p.global_O, c.cond_O, c.sumpool_O);
        frames.push_back(c.use_Fa ? merge_rows(in.F_a[t], f, p.merge_ao) : f);
      }
    } else {
      frames = in.F_a;
    }
    for (int k = 0; k < c.K; ++k) {
      Vector v;
      if (c.use_GF) {
        Matrix clip(frames.begin() + k * per_clip, frames.begin() + (k + 1) * per_clip);
        v = unit(clip, p.F, p.global_F, c.cond_F, c.sumpool_F);
      } else {
        v = frames[k * per_clip + per_clip / 2];
      }
      clips.push_back(c.use_Fm ? merge_rows(in.F_m[k], v, p.merge_am) : v);
    }
  }
  return unit(clips, p.C, p.global_C, c.cond_C, c.sumpool_C);
}

// Finite-difference gradient check.

// The loss is carried in extended precision so that the difference of two
// nearby evaluations keeps its low-order digits.
struct LossEvaluation {
  long double loss = 0;
  std::vector<std::uint8_t> kinks;  // branch signature of every piecewise op
};

// Evaluates the loss at the current parameter values; when `backward` is
// set it also accumulates analytic gradients into the parameters.
using LossFn = std::function<LossEvaluation(bool backward)>;

struct GroupReport {
  double max_rel_err = 0;
  int skipped_kinks = 0;
  int non_finite = 0;
  int checked = 0;
};

struct GradCheckReport {
  std::map<std::string, GroupReport> groups;

  double max_rel_err() const {
    double m = 0;
    for (const auto& [_, g] : groups) m = std::max(m, g.max_rel_err);
    return m;
  }
  int skipped_kinks() const {
    int s = 0;
    for (const auto& [_, g] : groups) s += g.skipped_kinks;
    return s;
  }
  int total() const {
    int s = 0;
    for (const auto& [_, g] : groups) s += g.checked + g.skipped_kinks + g.non_finite;
    return s;
  }
};

inline void to_json(nlohmann::json& j, const GradCheckReport& r) {
  j = nlohmann::json::object();
  for (const auto& [name, g] : r.groups)
    j[name] = {{"max_rel_err", g.max_rel_err},
               {"skipped_kinks", g.skipped_kinks},
               {"non_finite", g.non_finite},
               {"checked", g.checked}};
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central differences over every scalar of every trainable parameter; one
// group per parameter tensor. A perturbation whose branch signature differs
// from the unperturbed one straddles a kink and is skipped.
inline GradCheckReport fd_gradient_check(const LossFn& fn, const ParameterList<double>& params, double step = 1e-5) {
  for (auto* p : params) p->zero_grad();
  const LossEvaluation base = fn(true);
  if (!std::isfinite(base.loss)) throw DataError("fd_gradient_check: loss is not finite at the base point");
  GradCheckReport report;
  for (auto* p : params) {
    if (!p->trainable) continue;
    GroupReport& g = report.groups[p->name];
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      const double hi = saved + step, lo = saved - step;
      x = hi;
      const LossEvaluation plus = fn(false);
      x = lo;
      const LossEvaluation minus = fn(false);
      x = saved;
      if (!std::isfinite(plus.loss) || !std::isfinite(minus.loss)) {
        ++g.non_finite;
        continue;
      }
      if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
        ++g.skipped_kinks;
        continue;
      }
      const double numeric = static_cast<double>((plus.loss - minus.loss) / static_cast<long double>(hi - lo));
      g.max_rel_err = std::max(g.max_rel_err, relative_error(p->grad.data()[i], numeric));
      ++g.checked;
    }
  }
  return report;
}

// Loss of one sample through the full model, for gradient checking.
// Analytic gradients come from the 64-bit model; loss values and branch
// signatures come from an extended-precision copy of the same parameters.
inline LossFn model_loss(ModelParams<double>& params, const PreparedVideo<double>& video, const QASample& sample) {
  using LD = long double;
  auto wide = std::make_shared<ModelParams<LD>>(params.config);
  auto wide_video = std::make_shared<PreparedVideo<LD>>(
      PreparedVideo<LD>{video.motion.cast<LD>(), video.appearance.cast<LD>(), video.descriptors.cast<LD>()});
  return [&params, &video, &sample, wide, wide_video](bool backward) {
    if (backward) {
      ag::Tape<double> tape;
      auto v = project_video(tape, video, params);
      tape.backward(forward_sample(tape, params, v, sample).loss);
    }
    const auto narrow_list = params.parameters();
    const auto wide_list = wide->parameters();
    for (std::size_t i = 0; i < narrow_list.size(); ++i) wide_list[i]->value = narrow_list[i]->value.cast<LD>();
    ag::Tape<LD> tape(true);
    auto v = project_video(tape, *wide_video, *wide);
    auto f = forward_sample(tape, *wide, v, sample);
    return LossEvaluation{f.loss.value()(0, 0), tape.kink_signature()};
  };
}

}  // namespace hqga::oracle
