// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Three-level conditional graph hierarchy:
//
//   objects per frame --G_O--> frames --merge F_a--> G_F per clip
//     --merge F_m--> G_C over clips --> f_V
//
// Units at one level share a single parameter set, so the parameter count
// does not depend on T, K or N.

#pragma once

#include <optional>
#include <random>
#include <vector>

#include "hqga/autograd.hpp"
#include "hqga/config.hpp"
#include "hqga/datamodel.hpp"
#include "hqga/qga.hpp"

namespace hqga {

template <typename S>
struct HierarchyParams {
  QGAUnitParams<S> unit_O;
  QGAUnitParams<S> unit_F;
  QGAUnitParams<S> unit_C;
  Linear<S> merge_appearance;  // [f_a ; f_GO] -> d
  Linear<S> merge_motion;      // [f_m ; f_GF] -> d
  // Global-query conditioning: [x ; f_Q] -> d, one map per level.
  Linear<S> global_O;
  Linear<S> global_F;
  Linear<S> global_C;

  HierarchyParams() = default;
  explicit HierarchyParams(const HierarchyConfig& c)
      : unit_O("hier.O", c.d, c.H), unit_F("hier.F", c.d, c.H), unit_C("hier.C", c.d, c.H),
        merge_appearance("hier.merge_ao", 2 * c.d, c.d), merge_motion("hier.merge_am", 2 * c.d, c.d),
        global_O("hier.global_O", 2 * c.d, c.d), global_F("hier.global_F", 2 * c.d, c.d),
        global_C("hier.global_C", 2 * c.d, c.d) {}

  void init(std::mt19937_64& rng) {
    unit_O.init(rng);
    unit_F.init(rng);
    unit_C.init(rng);
    merge_appearance.init(rng);
    merge_motion.init(rng);
    global_O.init(rng);
    global_F.init(rng);
    global_C.init(rng);
  }
  void collect(ParameterList<S>& out) {
    unit_O.collect(out);
    unit_F.collect(out);
    unit_C.collect(out);
    merge_appearance.collect(out);
    merge_motion.collect(out);
    global_O.collect(out);
    global_F.collect(out);
    global_C.collect(out);
  }
};

template <typename S>
struct HierTrace {
  std::vector<UnitTrace<S>> level_O;  // one per frame
  std::vector<UnitTrace<S>> level_F;  // one per clip
  std::vector<UnitTrace<S>> level_C;  // single unit
};

template <typename S>
struct HierarchyInputs {
  ag::Var<S> F_m;  // K x d
  ag::Var<S> F_a;  // T x d
  ag::Var<S> F_o;  // (T*N) x d, frame-major
  ag::Var<S> Q;    // length x d
  ag::Var<S> f_Q;  // 1 x d
};

// Index of the frame standing in for clip k when G_F is removed.
inline int middle_frame(const HierarchyConfig& c, int clip) {
  const int per_clip = c.frames_per_clip();
  return clip * per_clip + per_clip / 2;
}

namespace detail {

template <typename S>
ag::Var<S> linear_elu(ag::Var<S> x, Linear<S>& lin) {
  ag::Tape<S>& t = *x.tape;
  return ag::elu(ag::add_row(ag::matmul(x, t.param(lin.weight)), t.param(lin.bias)));
}

// One QGA invocation with the level's conditioning policy applied.
template <typename S>
QGAVars<S> run_unit(ag::Var<S> X, const HierarchyInputs<S>& in, QGAUnitParams<S>& unit, Linear<S>& global,
                    bool cond, bool sumpool, const HierarchyConfig& c) {
  if (sumpool) return qga_forward<S>(X, std::nullopt, unit, false, true);
  if (c.global_fQ_condition) {
    if (cond) X = linear_elu(ag::concat_cols(X, ag::broadcast_rows(in.f_Q, X.rows())), global);
    return qga_forward<S>(X, std::nullopt, unit, false, false);
  }
  return qga_forward<S>(X, std::optional<ag::Var<S>>(in.Q), unit, cond, false);
}

}  // namespace detail

// G_O: one unit per frame over its N objects. Returns T x d.
template <typename S>
ag::Var<S> level_object(const HierarchyInputs<S>& in, HierarchyParams<S>& p, const HierarchyConfig& c,
                        HierTrace<S>* trace) {
  const int T = c.T();
  std::vector<ag::Var<S>> rows;
  rows.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    auto objects = ag::slice_rows(in.F_o, static_cast<Eigen::Index>(t) * c.N, c.N);
    auto out = detail::run_unit(objects, in, p.unit_O, p.global_O, c.cond_O, c.sumpool_O, c);
    if (trace != nullptr && !c.sumpool_O) trace->level_O.push_back(to_trace(out, t));
    rows.push_back(out.x_p);
  }
  return ag::concat_rows(rows);
}

// ELU(W [context ; level] + b) per row.
template <typename S>
ag::Var<S> merge_context(ag::Var<S> level, ag::Var<S> context, Linear<S>& merge) {
  if (level.rows() != context.rows()) throw ConfigError("merge_context: row counts differ");
  return detail::linear_elu(ag::concat_cols(context, level), merge);
}

// G_F: one unit per clip over its gamma*L frame vectors. Returns K x d.
template <typename S>
ag::Var<S> level_frame(ag::Var<S> frames, const HierarchyInputs<S>& in, HierarchyParams<S>& p,
                       const HierarchyConfig& c, HierTrace<S>* trace) {
  if (frames.rows() % c.K != 0) throw ConfigError("level_frame: frame count is not divisible by K");
  const Eigen::Index per_clip = frames.rows() / c.K;
  std::vector<ag::Var<S>> rows;
  rows.reserve(static_cast<std::size_t>(c.K));
  for (int k = 0; k < c.K; ++k) {
    auto clip = ag::slice_rows(frames, k * per_clip, per_clip);
    auto out = detail::run_unit(clip, in, p.unit_F, p.global_F, c.cond_F, c.sumpool_F, c);
    if (trace != nullptr && !c.sumpool_F) trace->level_F.push_back(to_trace(out, k));
    rows.push_back(out.x_p);
  }
  return ag::concat_rows(rows);
}

// G_C: a single unit over the clip vectors. Returns f_V, 1 x d.
template <typename S>
ag::Var<S> level_clip(ag::Var<S> clips, const HierarchyInputs<S>& in, HierarchyParams<S>& p,
                      const HierarchyConfig& c, HierTrace<S>* trace) {
  auto out = detail::run_unit(clips, in, p.unit_C, p.global_C, c.cond_C, c.sumpool_C, c);
  if (trace != nullptr && !c.sumpool_C) trace->level_C.push_back(to_trace(out, 0));
  return out.x_p;
}

template <typename S>
ag::Var<S> hqga_forward(const HierarchyInputs<S>& in, HierarchyParams<S>& p, const HierarchyConfig& c,
                        HierTrace<S>* trace = nullptr) {
  c.validate();
  if (!c.use_GO && !c.use_GF) return level_clip(in.F_m, in, p, c, trace);

  ag::Var<S> frames;
  if (c.use_GO) {
    frames = level_object(in, p, c, trace);
    if (c.use_Fa) frames = merge_context(frames, in.F_a, p.merge_appearance);
  } else {
    frames = in.F_a;
  }

  ag::Var<S> clips;
  if (c.use_GF) {
    clips = level_frame(frames, in, p, c, trace);
  } else {
    std::vector<ag::Var<S>> picked;
    for (int k = 0; k < c.K; ++k) picked.push_back(ag::slice_rows(frames, middle_frame(c, k), 1));
    clips = ag::concat_rows(picked);
  }
  if (c.use_Fm) clips = merge_context(clips, in.F_m, p.merge_motion);
  return level_clip(clips, in, p, c, trace);
}

// Value-level entry point over an already projected bundle.
template <typename S>
Mat<S> hqga_forward(const FeatureBundle<S>& bundle, HierarchyParams<S>& p, const HierarchyConfig& c,
                    HierTrace<S>* trace = nullptr) {
  bundle.validate(c);
  ag::Tape<S> t;
  HierarchyInputs<S> in{t.constant(bundle.F_m), t.constant(bundle.F_a), t.constant(bundle.F_o),
                        t.constant(bundle.Q), t.constant(bundle.f_Q)};
  return hqga_forward(in, p, c, trace).value();
}

}  // namespace hqga
