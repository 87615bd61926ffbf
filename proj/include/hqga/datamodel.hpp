// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Input tensors, feature archives, and the projections that run before the
// hierarchy: temporal convolutions for motion/appearance, the object
// encoder, and the bidirectional GRU question encoder.

#pragma once

#include <cmath>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqga/archive.hpp"
#include "hqga/autograd.hpp"
#include "hqga/config.hpp"
#include "hqga/tensor.hpp"

namespace hqga {

// Dimensions recorded in a feature archive's manifest.
struct FeatureManifest {
  int K = 0;
  int L = 0;
  double gamma = 0;
  int N = 0;
  int d_m = 0;
  int d_a = 0;
  int d_r = 0;

  int frames_per_clip() const { return static_cast<int>(std::lround(gamma * L)); }
  int T() const { return frames_per_clip() * K; }
  bool operator==(const FeatureManifest&) const = default;
};

inline void to_json(nlohmann::json& j, const FeatureManifest& m) {
  j = nlohmann::json{{"K", m.K}, {"L", m.L}, {"gamma", m.gamma}, {"N", m.N},
                     {"d_m", m.d_m}, {"d_a", m.d_a}, {"d_r", m.d_r}};
}

inline void from_json(const nlohmann::json& j, FeatureManifest& m) {
  j.at("K").get_to(m.K);
  j.at("L").get_to(m.L);
  j.at("gamma").get_to(m.gamma);
  j.at("N").get_to(m.N);
  j.at("d_m").get_to(m.d_m);
  j.at("d_a").get_to(m.d_a);
  j.at("d_r").get_to(m.d_r);
}

inline FeatureManifest manifest_of(const HierarchyConfig& c) {
  return FeatureManifest{c.K, c.L, c.gamma, c.N, c.d_m, c.d_a, c.d_r};
}

// Pre-projection activations of one video. Region rows are frame-major:
// row t * N + n holds region n of sparse frame t.
struct RawFeatureBundle {
  FeatureManifest manifest;
  Mat<float> motion;        // K x d_m
  Mat<float> appearance;    // T x d_a
  Mat<float> region_feats;  // (T*N) x d_r
  Mat<float> region_boxes;  // (T*N) x 4, pixel (x1, y1, x2, y2)
  float frame_width = 0;
  float frame_height = 0;
  std::vector<float> frame_times;  // T, strictly increasing in [0, 1]

  int T() const { return manifest.T(); }
};

inline void validate(const RawFeatureBundle& b) {
  const FeatureManifest& m = b.manifest;
  if (m.K < 1 || m.N < 1 || m.T() < 1 || m.d_m < 1 || m.d_a < 1 || m.d_r < 1)
    throw ValidationError("manifest dimensions must be positive");
  const int T = m.T();
  auto shape = [](const Mat<float>& x, Eigen::Index r, Eigen::Index c, const char* what) {
    if (x.rows() != r || x.cols() != c)
      throw ShapeMismatchError(std::string(what) + " has shape " + std::to_string(x.rows()) + "x" +
                               std::to_string(x.cols()) + ", expected " + std::to_string(r) + "x" + std::to_string(c));
  };
  shape(b.motion, m.K, m.d_m, "motion");
  shape(b.appearance, T, m.d_a, "appearance");
  shape(b.region_feats, static_cast<Eigen::Index>(T) * m.N, m.d_r, "region_feats");
  shape(b.region_boxes, static_cast<Eigen::Index>(T) * m.N, 4, "region_boxes");
  if (static_cast<int>(b.frame_times.size()) != T) throw ShapeMismatchError("frame_times must have T entries");
  if (!b.motion.allFinite() || !b.appearance.allFinite() || !b.region_feats.allFinite() ||
      !b.region_boxes.allFinite())
    throw ValidationError("feature arrays contain non-finite values");
  if (!(b.frame_width > 0 && b.frame_height > 0)) throw ValidationError("frame_size must be positive");
  for (Eigen::Index i = 0; i < b.region_boxes.rows(); ++i) {
    const float x1 = b.region_boxes(i, 0), y1 = b.region_boxes(i, 1);
    const float x2 = b.region_boxes(i, 2), y2 = b.region_boxes(i, 3);
    if (!(0 <= x1 && x1 < x2 && x2 <= b.frame_width && 0 <= y1 && y1 < y2 && y2 <= b.frame_height))
      throw ValidationError("region box " + std::to_string(i) + " violates 0 <= x1 < x2 <= W, 0 <= y1 < y2 <= H");
  }
  for (int t = 0; t < T; ++t) {
    const float v = b.frame_times[t];
    if (!(v >= 0.f && v <= 1.f)) throw ValidationError("frame_times must lie in [0, 1]");
    if (t > 0 && !(v > b.frame_times[t - 1])) throw ValidationError("frame_times must be strictly increasing");
  }
}

inline void save_feature_archive(const RawFeatureBundle& b, const std::filesystem::path& path) {
  validate(b);
  const FeatureManifest& m = b.manifest;
  const std::int64_t T = m.T();
  NamedArrays a;
  auto span_of = [](const Mat<float>& x) { return std::span<const float>(x.data(), static_cast<std::size_t>(x.size())); };
  a.put<float>("motion", {m.K, m.d_m}, span_of(b.motion));
  a.put<float>("appearance", {T, m.d_a}, span_of(b.appearance));
  a.put<float>("region_feats", {T, m.N, m.d_r}, span_of(b.region_feats));
  a.put<float>("region_boxes", {T, m.N, 4}, span_of(b.region_boxes));
  const float size[2] = {b.frame_width, b.frame_height};
  a.put<float>("frame_size", {2}, std::span<const float>(size, 2));
  a.put<float>("frame_times", {T}, std::span<const float>(b.frame_times));
  a.metadata()["manifest"] = nlohmann::json(m).dump();
  write_archive(a, path);
}

inline RawFeatureBundle load_feature_archive(const std::filesystem::path& path) {
  NamedArrays a = read_archive(path);
  RawFeatureBundle b;
  auto it = a.metadata().find("manifest");
  if (it == a.metadata().end()) throw CorruptManifestError(path.string() + ": manifest metadata is missing");
  try {
    b.manifest = nlohmann::json::parse(it->second).get<FeatureManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptManifestError(path.string() + ": manifest is not valid: " + e.what());
  }
  const FeatureManifest& m = b.manifest;
  if (m.K < 1 || m.N < 1 || m.L < 1 || !(m.gamma > 0 && m.gamma < 1) || m.T() < 1 || m.d_m < 1 || m.d_a < 1 ||
      m.d_r < 1)
    throw CorruptManifestError(path.string() + ": manifest dimensions are invalid");
  static const char* kNames[] = {"motion", "appearance", "region_feats", "region_boxes", "frame_size", "frame_times"};
  for (const char* name : kNames)
    if (!a.contains(name)) throw MissingArrayError(name);
  if (a.arrays().size() != std::size(kNames)) throw CorruptManifestError(path.string() + ": unexpected extra arrays");

  const std::int64_t T = m.T();
  auto load = [&](const char* name, std::vector<std::int64_t> shape, Eigen::Index rows, Eigen::Index cols) {
    auto v = a.get<float>(name, shape);
    return Mat<float>(Eigen::Map<const Mat<float>>(v.data(), rows, cols));
  };
  b.motion = load("motion", {m.K, m.d_m}, m.K, m.d_m);
  b.appearance = load("appearance", {T, m.d_a}, T, m.d_a);
  b.region_feats = load("region_feats", {T, m.N, m.d_r}, T * m.N, m.d_r);
  b.region_boxes = load("region_boxes", {T, m.N, 4}, T * m.N, 4);
  auto size = a.get<float>("frame_size", {2});
  b.frame_width = size[0];
  b.frame_height = size[1];
  b.frame_times = a.get<float>("frame_times", {T});
  validate(b);
  return b;
}

// Joint descriptor of one region: appearance, normalized box geometry and
// normalized temporal position.
struct ObjectDescriptor {
  std::vector<double> f_r;
  std::array<double, 6> f_s{};  // x1/W, y1/H, x2/W, y2/H, w/W, h/H
  std::array<double, 2> f_t{};  // frame_index/T, clip_index/K

  static constexpr int kGeometryWidth = 8;
};

inline ObjectDescriptor describe_object(const RawFeatureBundle& b, int t, int n) {
  const FeatureManifest& m = b.manifest;
  const Eigen::Index row = static_cast<Eigen::Index>(t) * m.N + n;
  ObjectDescriptor d;
  d.f_r.resize(static_cast<std::size_t>(m.d_r));
  for (int i = 0; i < m.d_r; ++i) d.f_r[i] = b.region_feats(row, i);
  const double W = b.frame_width, H = b.frame_height;
  const double x1 = b.region_boxes(row, 0), y1 = b.region_boxes(row, 1);
  const double x2 = b.region_boxes(row, 2), y2 = b.region_boxes(row, 3);
  d.f_s = {x1 / W, y1 / H, x2 / W, y2 / H, (x2 - x1) / W, (y2 - y1) / H};
  d.f_t = {static_cast<double>(t) / m.T(), static_cast<double>(t / m.frames_per_clip()) / m.K};
  return d;
}

template <typename S>
Mat<S> descriptor_row(const ObjectDescriptor& d) {
  Mat<S> r(1, static_cast<Eigen::Index>(d.f_r.size()) + ObjectDescriptor::kGeometryWidth);
  Eigen::Index c = 0;
  for (double v : d.f_r) r(0, c++) = static_cast<S>(v);
  for (double v : d.f_s) r(0, c++) = static_cast<S>(v);
  for (double v : d.f_t) r(0, c++) = static_cast<S>(v);
  return r;
}

// All region descriptors of a video, (T*N) x (d_r + 8), frame-major.
template <typename S>
Mat<S> descriptor_matrix(const RawFeatureBundle& b) {
  const int T = b.T(), N = b.manifest.N;
  Mat<S> out(static_cast<Eigen::Index>(T) * N, b.manifest.d_r + ObjectDescriptor::kGeometryWidth);
  for (int t = 0; t < T; ++t)
    for (int n = 0; n < N; ++n) out.row(static_cast<Eigen::Index>(t) * N + n) = descriptor_row<S>(describe_object(b, t, n));
  return out;
}

// ---------------------------------------------------------------------------
// Temporal projection: 1-D convolution with window 3, zero same-padding,
// stride 1, bias, no activation.

template <typename S>
struct ConvParams {
  Parameter<S> prev;    // tap applied to position s-1
  Parameter<S> center;  // tap applied to position s
  Parameter<S> next;    // tap applied to position s+1
  Parameter<S> bias;

  ConvParams() = default;
  ConvParams(const std::string& name, Eigen::Index in, Eigen::Index out)
      : prev(name + ".prev", in, out), center(name + ".center", in, out), next(name + ".next", in, out),
        bias(name + ".bias", 1, out) {}

  Eigen::Index in_width() const { return center.rows(); }
  void init(std::mt19937_64& rng) {
    const Eigen::Index fan_in = 3 * in_width();
    init_fan_in(prev, rng, fan_in);
    init_fan_in(center, rng, fan_in);
    init_fan_in(next, rng, fan_in);
    init_fan_in(bias, rng, fan_in);
  }
  void collect(ParameterList<S>& out) {
    out.push_back(&prev);
    out.push_back(&center);
    out.push_back(&next);
    out.push_back(&bias);
  }
};

template <typename S>
ag::Var<S> project_temporal(ag::Var<S> raw, ConvParams<S>& conv) {
  if (raw.cols() != conv.in_width())
    throw ConfigError("project_temporal: input width " + std::to_string(raw.cols()) + " does not match kernel width " +
                      std::to_string(conv.in_width()));
  if (raw.rows() < 1) throw DataError("project_temporal: empty sequence");
  ag::Tape<S>& t = *raw.tape;
  auto y = ag::matmul(raw, t.param(conv.center));
  y = ag::add(y, ag::matmul(ag::shift_rows(raw, -1), t.param(conv.prev)));
  y = ag::add(y, ag::matmul(ag::shift_rows(raw, +1), t.param(conv.next)));
  return ag::add_row(y, t.param(conv.bias));
}

template <typename S>
Mat<S> project_temporal(const Mat<S>& raw, ConvParams<S>& conv) {
  ag::Tape<S> tape;
  return project_temporal(tape.constant(raw), conv).value();
}

// ---------------------------------------------------------------------------
// Object encoder: f_o = ELU(W_o [f_r; f_s; f_t] + b).

template <typename S>
ag::Var<S> encode_objects(ag::Var<S> descriptors, Linear<S>& proj) {
  if (descriptors.cols() != proj.weight.rows())
    throw ConfigError("encode_object: descriptor width " + std::to_string(descriptors.cols()) +
                      " does not match projection width " + std::to_string(proj.weight.rows()));
  if (!descriptors.value().allFinite()) throw DataError("encode_object: non-finite descriptor");
  ag::Tape<S>& t = *descriptors.tape;
  auto y = ag::matmul(descriptors, t.param(proj.weight));
  if (proj.has_bias()) y = ag::add_row(y, t.param(proj.bias));
  return ag::elu(y);
}

template <typename S>
Mat<S> encode_object(const ObjectDescriptor& desc, Linear<S>& proj) {
  ag::Tape<S> tape;
  return encode_objects(tape.constant(descriptor_row<S>(desc)), proj).value();
}

// ---------------------------------------------------------------------------
// Question encoder: one GRU per direction with hidden width d/2.
//
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + (r * h) Un + bn)
//   h' = z * h + (1 - z) * n

template <typename S>
struct GRUParams {
  Parameter<S> input;   // d_e x 3h, gate columns [z | r | n]
  Parameter<S> gates;   // h x 2h, recurrent weights for [z | r]
  Parameter<S> cand;    // h x h, recurrent weights for n
  Parameter<S> bias;    // 1 x 3h

  GRUParams() = default;
  GRUParams(const std::string& name, Eigen::Index in, Eigen::Index hidden)
      : input(name + ".input", in, 3 * hidden), gates(name + ".gates", hidden, 2 * hidden),
        cand(name + ".cand", hidden, hidden), bias(name + ".bias", 1, 3 * hidden) {}

  Eigen::Index hidden() const { return cand.rows(); }
  void init(std::mt19937_64& rng) {
    init_fan_in(input, rng, hidden());
    init_fan_in(gates, rng, hidden());
    init_fan_in(cand, rng, hidden());
    init_fan_in(bias, rng, hidden());
  }
  void collect(ParameterList<S>& out) {
    out.push_back(&input);
    out.push_back(&gates);
    out.push_back(&cand);
    out.push_back(&bias);
  }
};

template <typename S>
struct QuestionEncoderParams {
  Parameter<S> embeddings;  // V x d_e lookup table
  GRUParams<S> forward;
  GRUParams<S> backward;

  QuestionEncoderParams() = default;
  QuestionEncoderParams(Eigen::Index vocab, Eigen::Index d_e, Eigen::Index d)
      : embeddings("question.embeddings", vocab, d_e), forward("question.gru_fwd", d_e, d / 2),
        backward("question.gru_bwd", d_e, d / 2) {}

  void init(std::mt19937_64& rng) {
    init_uniform(embeddings, rng, 1.0);
    forward.init(rng);
    backward.init(rng);
  }
  void collect(ParameterList<S>& out) {
    out.push_back(&embeddings);
    forward.collect(out);
    backward.collect(out);
  }
};

template <typename S>
struct EncodedQuestion {
  ag::Var<S> Q;    // length x d
  ag::Var<S> f_Q;  // 1 x d, the last row of Q
};

namespace detail {
// Hidden states of one direction; states[i] follows input row order[i].
template <typename S>
std::vector<ag::Var<S>> run_gru(ag::Var<S> x, GRUParams<S>& p, bool reverse) {
  ag::Tape<S>& t = *x.tape;
  const Eigen::Index len = x.rows();
  const Eigen::Index h = p.hidden();
  auto xw = ag::add_row(ag::matmul(x, t.param(p.input)), t.param(p.bias));
  auto gates_w = t.param(p.gates);
  auto cand_w = t.param(p.cand);
  ag::Var<S> state = t.constant(Mat<S>::Zero(1, h));
  std::vector<ag::Var<S>> states(static_cast<std::size_t>(len));
  for (Eigen::Index step = 0; step < len; ++step) {
    const Eigen::Index pos = reverse ? len - 1 - step : step;
    auto xr = ag::slice_rows(xw, pos, 1);
    auto zr = ag::sigmoid(ag::add(ag::slice_cols(xr, 0, 2 * h), ag::matmul(state, gates_w)));
    auto z = ag::slice_cols(zr, 0, h);
    auto r = ag::slice_cols(zr, h, h);
    auto n = ag::tanh(ag::add(ag::slice_cols(xr, 2 * h, h), ag::matmul(ag::mul(r, state), cand_w)));
    state = ag::add(n, ag::mul(z, ag::sub(state, n)));
    states[static_cast<std::size_t>(pos)] = state;
  }
  return states;
}
}  // namespace detail

// Encodes token embeddings (length x d_e) into Q (length x d) and f_Q.
// Row m of Q is [forward state after tokens 0..m ; backward state after
// tokens m..length-1]; f_Q is the last row.
template <typename S>
EncodedQuestion<S> encode_question(ag::Var<S> embeddings, QuestionEncoderParams<S>& p) {
  if (embeddings.rows() < 1) throw DataError("encode_question: empty question");
  if (embeddings.cols() != p.forward.input.rows())
    throw ConfigError("encode_question: embedding width does not match encoder input width");
  auto fwd = detail::run_gru(embeddings, p.forward, false);
  auto bwd = detail::run_gru(embeddings, p.backward, true);
  std::vector<ag::Var<S>> rows;
  rows.reserve(fwd.size());
  for (std::size_t m = 0; m < fwd.size(); ++m) rows.push_back(ag::concat_cols(fwd[m], bwd[m]));
  auto Q = ag::concat_rows(rows);
  return {Q, rows.back()};
}

template <typename S>
EncodedQuestion<S> encode_tokens(ag::Tape<S>& tape, const std::vector<int>& tokens, QuestionEncoderParams<S>& p) {
  if (tokens.empty()) throw DataError("encode_question: empty question");
  return encode_question(ag::gather_rows(tape.param(p.embeddings), tokens), p);
}

// Holistic multi-choice query: question followed by the candidate. When the
// pair exceeds max_len the question tail is truncated; the candidate is kept.
inline std::vector<int> build_mc_query(const std::vector<int>& question, const std::vector<int>& candidate,
                                       int max_len) {
  std::vector<int> out;
  const std::size_t room =
      candidate.size() >= static_cast<std::size_t>(max_len) ? 0 : static_cast<std::size_t>(max_len) - candidate.size();
  const std::size_t keep = std::min(question.size(), room);
  out.assign(question.begin(), question.begin() + static_cast<std::ptrdiff_t>(keep));
  out.insert(out.end(), candidate.begin(), candidate.end());
  return out;
}

// Projected inputs of the hierarchy. F_o rows are frame-major (t * N + n).
template <typename S>
struct FeatureBundle {
  Mat<S> F_m;  // K x d
  Mat<S> F_a;  // T x d
  Mat<S> F_o;  // (T*N) x d
  Mat<S> Q;    // length x d
  Mat<S> f_Q;  // 1 x d

  void validate(const HierarchyConfig& c) const {
    const Eigen::Index T = c.T();
    if (F_m.rows() != c.K || F_m.cols() != c.d) throw ShapeMismatchError("F_m must be K x d");
    if (F_a.rows() != T || F_a.cols() != c.d) throw ShapeMismatchError("F_a must be T x d");
    if (F_o.rows() != T * c.N || F_o.cols() != c.d) throw ShapeMismatchError("F_o must be (T*N) x d");
    if (Q.rows() < 1 || Q.rows() > c.M || Q.cols() != c.d) throw ShapeMismatchError("Q must be m x d with 1 <= m <= M");
    if (f_Q.rows() != 1 || f_Q.cols() != c.d) throw ShapeMismatchError("f_Q must be 1 x d");
    if (!F_m.allFinite() || !F_a.allFinite() || !F_o.allFinite() || !Q.allFinite() || !f_Q.allFinite())
      throw DataError("feature bundle contains non-finite values");
  }
};

// One question instance.
struct QASample {
  std::string sample_id;
  std::vector<int> question_tokens;
  std::vector<std::vector<int>> candidates;  // empty in open-ended mode
  int answer_index = 0;
  std::string granularity_tag;  // object | relation | action | event
  std::string video_ref;

  void validate(DecoderMode mode, int answer_set_size) const {
    if (question_tokens.empty()) throw DataError(sample_id + ": empty question");
    if (mode == DecoderMode::MultiChoice) {
      if (answer_index < 0 || answer_index >= static_cast<int>(candidates.size()))
        throw ValidationError(sample_id + ": answer_index out of candidate range");
    } else if (answer_index < 0 || answer_index >= answer_set_size) {
      throw ValidationError(sample_id + ": answer_index out of answer-set range");
    }
  }
};

inline void to_json(nlohmann::json& j, const QASample& s) {
  j = nlohmann::json{{"sample_id", s.sample_id},          {"question_tokens", s.question_tokens},
                     {"candidates", s.candidates},        {"answer_index", s.answer_index},
                     {"granularity_tag", s.granularity_tag}, {"video_ref", s.video_ref}};
}

inline void from_json(const nlohmann::json& j, QASample& s) {
  j.at("sample_id").get_to(s.sample_id);
  j.at("question_tokens").get_to(s.question_tokens);
  j.at("candidates").get_to(s.candidates);
  j.at("answer_index").get_to(s.answer_index);
  s.granularity_tag = j.value("granularity_tag", std::string{});
  j.at("video_ref").get_to(s.video_ref);
}

inline std::vector<QASample> load_qa_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset manifest " + path.string());
  try {
    return nlohmann::json::parse(in).get<std::vector<QASample>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed dataset manifest: " + e.what());
  }
}

// Precomputed token embeddings for real-data mode.
struct EmbeddingTable {
  Mat<float> embeddings;  // V x d_e
  std::map<std::string, int> vocab;
};

inline void save_embedding_archive(const EmbeddingTable& e, const std::filesystem::path& path) {
  NamedArrays a;
  a.put_matrix<float>("embeddings", e.embeddings);
  a.metadata()["vocab"] = nlohmann::json(e.vocab).dump();
  write_archive(a, path);
}

inline EmbeddingTable load_embedding_archive(const std::filesystem::path& path) {
  NamedArrays a = read_archive(path);
  const StoredArray& raw = a.at("embeddings");
  if (raw.shape.size() != 2) throw ShapeMismatchError("embeddings must be a V x d_e matrix");
  EmbeddingTable e;
  e.embeddings = a.get_matrix<float>("embeddings", raw.shape[0], raw.shape[1]);
  auto it = a.metadata().find("vocab");
  if (it == a.metadata().end()) throw MissingArrayError("vocab");
  try {
    e.vocab = nlohmann::json::parse(it->second).get<std::map<std::string, int>>();
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptManifestError(std::string("vocab is not a string-to-index map: ") + ex.what());
  }
  for (const auto& [tok, idx] : e.vocab)
    if (idx < 0 || idx >= e.embeddings.rows()) throw ValidationError("vocab index out of range for token " + tok);
  return e;
}

}  // namespace hqga
