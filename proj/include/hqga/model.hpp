// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Full model: input projections, question encoder, hierarchy and decoder,
// plus the per-sample forward pass used by training and evaluation.

#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hqga/autograd.hpp"
#include "hqga/config.hpp"
#include "hqga/datamodel.hpp"
#include "hqga/decoder.hpp"
#include "hqga/hierarchy.hpp"

namespace hqga {

template <typename S>
struct ModelParams {
  HierarchyConfig config;
  ConvParams<S> conv_motion;
  ConvParams<S> conv_appearance;
  Linear<S> object_proj;
  QuestionEncoderParams<S> question;
  HierarchyParams<S> hierarchy;
  DecoderParams<S> decoder;

  ModelParams() = default;
  explicit ModelParams(const HierarchyConfig& c)
      : config(c), conv_motion("proj.motion", c.d_m, c.d), conv_appearance("proj.appearance", c.d_a, c.d),
        object_proj("proj.object", c.d_r + ObjectDescriptor::kGeometryWidth, c.d), question(c.vocab_size, c.d_e, c.d),
        hierarchy(c), decoder(c) {
    c.validate();
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    conv_motion.init(rng);
    conv_appearance.init(rng);
    object_proj.init(rng);
    question.init(rng);
    hierarchy.init(rng);
    decoder.init(rng);
  }

  // Every parameter in a fixed order. Pointers refer into this object.
  ParameterList<S> parameters() {
    ParameterList<S> out;
    conv_motion.collect(out);
    conv_appearance.collect(out);
    object_proj.collect(out);
    question.collect(out);
    hierarchy.collect(out);
    decoder.collect(out);
    return out;
  }

  // Replaces the learned lookup table by fixed precomputed embeddings.
  void use_fixed_embeddings(const Mat<float>& table) {
    if (table.rows() != config.vocab_size || table.cols() != config.d_e)
      throw ConfigError("embedding table must be vocab_size x d_e");
    question.embeddings.value = table.cast<S>();
    question.embeddings.trainable = false;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
};

// Tape-independent inputs of one video.
template <typename S>
struct PreparedVideo {
  Mat<S> motion;       // K x d_m
  Mat<S> appearance;   // T x d_a
  Mat<S> descriptors;  // (T*N) x (d_r + 8)
};

template <typename S>
PreparedVideo<S> prepare_video(const RawFeatureBundle& raw) {
  validate(raw);
  return {raw.motion.cast<S>(), raw.appearance.cast<S>(), descriptor_matrix<S>(raw)};
}

template <typename S>
void check_video(const PreparedVideo<S>& v, const HierarchyConfig& c) {
  if (v.motion.rows() != c.K || v.motion.cols() != c.d_m)
    throw ConfigError("motion features do not match K x d_m of the model config");
  if (v.appearance.rows() != c.T() || v.appearance.cols() != c.d_a)
    throw ConfigError("appearance features do not match T x d_a of the model config");
  if (v.descriptors.rows() != static_cast<Eigen::Index>(c.T()) * c.N ||
      v.descriptors.cols() != c.d_r + ObjectDescriptor::kGeometryWidth)
    throw ConfigError("region features do not match T x N x d_r of the model config");
}

template <typename S>
struct VideoVars {
  ag::Var<S> F_m;
  ag::Var<S> F_a;
  ag::Var<S> F_o;
};

template <typename S>
VideoVars<S> project_video(ag::Tape<S>& tape, const PreparedVideo<S>& v, ModelParams<S>& p) {
  check_video(v, p.config);
  return {project_temporal(tape.constant(v.motion), p.conv_motion),
          project_temporal(tape.constant(v.appearance), p.conv_appearance),
          encode_objects(tape.constant(v.descriptors), p.object_proj)};
}

template <typename S>
struct SampleForward {
  ag::Var<S> scores;                 // 1 x C (MC) or 1 x |A_oe| (OE)
  ag::Var<S> loss;                   // 1 x 1
  std::vector<HierTrace<S>> traces;  // per candidate (MC) or one (OE) when tracing
  std::vector<ag::Var<S>> f_V;       // per candidate (MC) or one (OE)
};

template <typename S>
SampleForward<S> forward_sample(ag::Tape<S>& tape, ModelParams<S>& p, const VideoVars<S>& video,
                                const QASample& sample, bool trace = false) {
  const HierarchyConfig& c = p.config;
  SampleForward<S> out;
  auto run = [&](const std::vector<int>& tokens) {
    auto q = encode_tokens(tape, tokens, p.question);
    HierarchyInputs<S> in{video.F_m, video.F_a, video.F_o, q.Q, q.f_Q};
    HierTrace<S>* tr = nullptr;
    if (trace) tr = &out.traces.emplace_back();
    auto f_V = hqga_forward(in, p.hierarchy, c, tr);
    out.f_V.push_back(f_V);
    return std::make_pair(q.f_Q, f_V);
  };

  if (c.decoder_mode == DecoderMode::MultiChoice) {
    if (sample.candidates.size() < 2) throw DataError(sample.sample_id + ": multi-choice sample needs >= 2 candidates");
    std::vector<std::pair<ag::Var<S>, ag::Var<S>>> pairs;
    pairs.reserve(sample.candidates.size());
    for (const auto& cand : sample.candidates) pairs.push_back(run(build_mc_query(sample.question_tokens, cand, c.M)));
    out.scores = mc_scores<S>(pairs, p.decoder);
    out.loss = ag::hinge_loss(out.scores, sample.answer_index);
  } else {
    std::vector<int> tokens = sample.question_tokens;
    if (static_cast<int>(tokens.size()) > c.M) tokens.resize(static_cast<std::size_t>(c.M));
    auto [f_Q, f_V] = run(tokens);
    out.scores = oe_scores(f_Q, f_V, p.decoder);
    out.loss = ag::cross_entropy(out.scores, sample.answer_index, static_cast<S>(kProbabilityFloor));
  }
  return out;
}

// Convenience: forward one sample on a fresh tape and return the scores.
template <typename S>
Mat<S> predict_scores(ModelParams<S>& p, const PreparedVideo<S>& v, const QASample& s) {
  ag::Tape<S> tape;
  auto video = project_video(tape, v, p);
  return forward_sample(tape, p, video, s).scores.value();
}

}  // namespace hqga
