// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded generator of compositional synthetic video-QA episodes.
//
// A world defines object classes with allowed attributes, atomic verbs,
// activities (fixed verb sequences) and events (fixed pairs of activities).
// An episode picks an event, lays its two activities over the K clips, gives
// every clip a verb, and places N objects per frame: a subject that performs
// the verbs (its box drifts with each verb's motion), a partner that stays
// next to the subject, and distractors kept farther away. Questions at four
// granularities are derived from the script and are therefore verifiable.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqga/config.hpp"
#include "hqga/datamodel.hpp"
#include "hqga/errors.hpp"

namespace hqga {

struct ClassSpec {
  std::string name;
  std::vector<int> attributes;  // indices into WorldSpec::attributes
};

struct VerbSpec {
  std::string name;
  bool transitive = false;
  double dx = 0;  // subject displacement per frame, pixels
  double dy = 0;
};

struct ActivitySpec {
  std::string name;
  std::vector<int> verbs;  // 2-3 verb indices, in order
};

struct EventSpec {
  std::string name;
  std::array<int, 2> activities{};
  double weight = 1.0;
};

struct WorldSpec {
  std::vector<std::string> attributes;
  std::vector<ClassSpec> classes;
  std::vector<VerbSpec> verbs;
  std::vector<ActivitySpec> activities;
  std::vector<EventSpec> events;
  int d_r = 32;
  int d_m = 32;
  int d_a = 32;
  double noise_sigma = 0.1;
  std::uint64_t prototype_seed = 7;
  float frame_width = 320;
  float frame_height = 240;

  // Structural consistency: every reference resolves, names are unique, and
  // activity/event maps are functions of their ids.
  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("world spec: " + m); };
    if (attributes.empty() || classes.empty() || verbs.empty() || activities.empty() || events.empty())
      fail("needs at least one attribute, class, verb, activity and event");
    if (d_r < 1 || d_m < 1 || d_a < 1) fail("feature widths must be positive");
    if (d_a != d_r) fail("d_a must equal d_r (appearance mixes region prototypes)");
    if (noise_sigma < 0) fail("noise_sigma must be non-negative");
    if (!(frame_width > 0 && frame_height > 0)) fail("frame size must be positive");
    std::set<std::string> answer_names;
    for (const auto& c : classes) {
      if (c.attributes.empty()) fail("class " + c.name + " has no attributes");
      for (int a : c.attributes)
        if (a < 0 || a >= static_cast<int>(attributes.size())) fail("class " + c.name + " references a bad attribute");
      if (!answer_names.insert(c.name).second) fail("duplicate name " + c.name);
    }
    for (const auto& v : verbs)
      if (!answer_names.insert(v.name).second) fail("duplicate name " + v.name);
    for (const auto& e : events)
      if (!answer_names.insert(e.name).second) fail("duplicate name " + e.name);
    for (const auto& a : activities) {
      if (a.verbs.empty()) fail("activity " + a.name + " has no verbs");
      for (int v : a.verbs)
        if (v < 0 || v >= static_cast<int>(verbs.size())) fail("activity " + a.name + " references a bad verb");
    }
    for (const auto& e : events) {
      for (int a : e.activities)
        if (a < 0 || a >= static_cast<int>(activities.size())) fail("event " + e.name + " references a bad activity");
      if (!(e.weight > 0)) fail("event weights must be positive");
    }
  }

  // Size minimums of the benchmark grammar.
  bool meets_benchmark_minimums() const {
    if (classes.size() < 8 || verbs.size() < 6) return false;
    for (const auto& c : classes)
      if (c.attributes.size() < 3) return false;
    for (const auto& a : activities)
      if (a.verbs.size() < 2 || a.verbs.size() > 3) return false;
    return true;
  }
};

inline void to_json(nlohmann::json& j, const WorldSpec& w) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : w.classes) classes.push_back({{"name", c.name}, {"attributes", c.attributes}});
  nlohmann::json verbs = nlohmann::json::array();
  for (const auto& v : w.verbs) verbs.push_back({{"name", v.name}, {"transitive", v.transitive}, {"dx", v.dx}, {"dy", v.dy}});
  nlohmann::json activities = nlohmann::json::array();
  for (const auto& a : w.activities) activities.push_back({{"name", a.name}, {"verbs", a.verbs}});
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : w.events) events.push_back({{"name", e.name}, {"activities", e.activities}, {"weight", e.weight}});
  j = nlohmann::json{{"attributes", w.attributes}, {"classes", classes},         {"verbs", verbs},
                     {"activities", activities},   {"events", events},           {"d_r", w.d_r},
                     {"d_m", w.d_m},               {"d_a", w.d_a},               {"noise_sigma", w.noise_sigma},
                     {"prototype_seed", w.prototype_seed}, {"frame_width", w.frame_width},
                     {"frame_height", w.frame_height}};
}

inline void from_json(const nlohmann::json& j, WorldSpec& w) {
  try {
    j.at("attributes").get_to(w.attributes);
    w.classes.clear();
    for (const auto& c : j.at("classes")) w.classes.push_back({c.at("name"), c.at("attributes")});
    w.verbs.clear();
    for (const auto& v : j.at("verbs"))
      w.verbs.push_back({v.at("name"), v.value("transitive", false), v.value("dx", 0.0), v.value("dy", 0.0)});
    w.activities.clear();
    for (const auto& a : j.at("activities")) w.activities.push_back({a.at("name"), a.at("verbs")});
    w.events.clear();
    for (const auto& e : j.at("events")) w.events.push_back({e.at("name"), e.at("activities"), e.value("weight", 1.0)});
    w.d_r = j.value("d_r", w.d_r);
    w.d_m = j.value("d_m", w.d_m);
    w.d_a = j.value("d_a", w.d_a);
    w.noise_sigma = j.value("noise_sigma", w.noise_sigma);
    w.prototype_seed = j.value("prototype_seed", w.prototype_seed);
    w.frame_width = j.value("frame_width", w.frame_width);
    w.frame_height = j.value("frame_height", w.frame_height);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world spec: ") + e.what());
  }
}

inline WorldSpec default_world() {
  WorldSpec w;
  w.attributes = {"red", "blue", "green", "yellow", "black", "white", "brown", "gray"};
  w.classes = {{"person", {0, 1, 4, 5}}, {"dog", {4, 5, 6, 7}},   {"cat", {3, 4, 6, 7}},   {"ball", {0, 1, 2, 3}},
               {"car", {0, 1, 4, 7}},    {"bike", {1, 2, 4, 5}},  {"cup", {0, 3, 5, 6}},   {"chair", {2, 5, 6, 7}},
               {"horse", {4, 5, 6, 7}},  {"guitar", {0, 3, 6, 4}}};
  w.verbs = {{"walk", false, 2.0, 0.0},  {"run", false, 4.0, 0.0},     {"jump", false, 0.0, -3.0},
             {"sit", false, 0.0, 2.0},   {"throw", true, -1.0, -1.0},  {"pick_up", true, 1.0, 1.0},
             {"push", true, -3.0, 0.0},  {"wave", false, 0.0, 0.0}};
  w.activities = {{"play", {1, 4, 2}},   {"cook", {5, 6}},      {"travel", {0, 1}},
                  {"rest", {3, 7}},      {"exercise", {2, 1, 0}}, {"clean", {5, 6, 7}}};
  w.events = {{"camping", {1, 0}, 1.0}, {"picnic", {3, 1}, 1.0},  {"commute", {2, 3}, 1.0},
              {"workout", {4, 2}, 1.0}, {"chores", {5, 1}, 1.0},  {"sports", {0, 4}, 1.0}};
  return w;
}

// Unit-norm prototype vectors derived from WorldSpec::prototype_seed.
struct Prototypes {
  std::vector<Eigen::VectorXd> classes;     // d_r
  std::vector<Eigen::VectorXd> attributes;  // d_r
  std::vector<Eigen::VectorXd> verbs;       // d_m
  std::vector<Eigen::VectorXd> activities;  // d_m
  std::vector<Eigen::VectorXd> scenes;      // d_a, one per event
};

inline Prototypes make_prototypes(const WorldSpec& w) {
  std::mt19937_64 rng(w.prototype_seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto unit = [&](int dim) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = g(rng);
    return Eigen::VectorXd(v / v.norm());
  };
  Prototypes p;
  for (std::size_t i = 0; i < w.classes.size(); ++i) p.classes.push_back(unit(w.d_r));
  for (std::size_t i = 0; i < w.attributes.size(); ++i) p.attributes.push_back(unit(w.d_r));
  for (std::size_t i = 0; i < w.verbs.size(); ++i) p.verbs.push_back(unit(w.d_m));
  for (std::size_t i = 0; i < w.activities.size(); ++i) p.activities.push_back(unit(w.d_m));
  for (std::size_t i = 0; i < w.events.size(); ++i) p.scenes.push_back(unit(w.d_a));
  return p;
}

// SplitMix64 finalizer, used to derive independent per-episode seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Box = std::array<float, 4>;  // x1, y1, x2, y2

struct ScriptObject {
  int cls = -1;        // -1: null padding object
  int attribute = -1;
  bool is_null() const { return cls < 0; }
};

struct EpisodeScript {
  int event = 0;
  std::array<int, 2> activity_order{};
  std::vector<std::pair<int, int>> activity_spans;  // [first clip, end clip) per activity
  std::vector<int> clip_activity;                   // K
  std::vector<int> clip_verb;                       // K
  std::vector<int> clip_patient;                    // K, object index or -1
  std::vector<ScriptObject> objects;                // N, same set in every frame
  int subject = 0;
  int partner = 1;
  std::vector<std::vector<Box>> boxes;              // T x N
  // Manifest of the rendered video.
  int K = 0;
  int frames_per_clip = 0;
  int N = 0;

  int T() const { return K * frames_per_clip; }
};

namespace detail {

// Box with top-left (x, y) and size (w, h). In float, x + w can round one
// ulp past the frame edge even when x <= W - w, so the far edges are capped.
inline Box fit_box(float x, float y, float w, float h, float W, float H) {
  return {x, y, std::min(x + w, W), std::min(y + h, H)};
}

inline double center_distance(const Box& a, const Box& b) {
  const double ax = 0.5 * (a[0] + a[2]), ay = 0.5 * (a[1] + a[3]);
  const double bx = 0.5 * (b[0] + b[2]), by = 0.5 * (b[1] + b[3]);
  return std::hypot(ax - bx, ay - by);
}

}  // namespace detail

// Nearest non-null object to `anchor` (by box-center distance) in frame t.
inline int nearest_object(const EpisodeScript& s, int t, int anchor) {
  int best = -1;
  double best_d = 0;
  for (int n = 0; n < s.N; ++n) {
    if (n == anchor || s.objects[n].is_null()) continue;
    const double d = detail::center_distance(s.boxes[t][anchor], s.boxes[t][n]);
    if (best < 0 || d < best_d) {
      best = n;
      best_d = d;
    }
  }
  return best;
}

inline EpisodeScript sample_script(const WorldSpec& w, const FeatureManifest& m, std::uint64_t seed) {
  w.validate();
  if (m.K < 1 || m.N < 2 || m.frames_per_clip() < 1) throw ConfigError("sample_script: needs K >= 1, N >= 2, gamma*L >= 1");
  std::mt19937_64 rng(seed);
  EpisodeScript s;
  s.K = m.K;
  s.frames_per_clip = m.frames_per_clip();
  s.N = m.N;
  const int T = s.T();

  std::vector<double> weights;
  for (const auto& e : w.events) weights.push_back(e.weight);
  s.event = std::discrete_distribution<int>(weights.begin(), weights.end())(rng);

  // Activity order and clip spans.
  const auto& ev = w.events[s.event];
  const bool swap = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  s.activity_order = swap ? std::array<int, 2>{ev.activities[1], ev.activities[0]} : ev.activities;
  const int split = m.K == 1 ? 1 : std::uniform_int_distribution<int>(1, m.K - 1)(rng);
  s.activity_spans = {{0, split}, {split, m.K}};
  s.clip_activity.assign(m.K, 0);
  s.clip_verb.assign(m.K, 0);
  for (int a = 0; a < 2; ++a) {
    const auto& act = w.activities[s.activity_order[a]];
    for (int k = s.activity_spans[a].first; k < s.activity_spans[a].second; ++k) {
      s.clip_activity[k] = s.activity_order[a];
      s.clip_verb[k] = act.verbs[(k - s.activity_spans[a].first) % act.verbs.size()];
    }
  }

  // Objects: distinct classes, distinct attributes; null padding beyond the class count.
  const int real = std::min<int>(m.N, static_cast<int>(w.classes.size()));
  if (real < 2) throw GenerationError("sample_script: need at least two real objects per frame");
  std::vector<int> class_ids(w.classes.size());
  for (std::size_t i = 0; i < class_ids.size(); ++i) class_ids[i] = static_cast<int>(i);
  bool placed = false;
  for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
    std::shuffle(class_ids.begin(), class_ids.end(), rng);
    s.objects.assign(m.N, ScriptObject{});
    std::set<int> used;
    placed = true;
    for (int n = 0; n < real; ++n) {
      const auto& allowed = w.classes[class_ids[n]].attributes;
      std::vector<int> free;
      for (int a : allowed)
        if (!used.count(a)) free.push_back(a);
      if (free.empty()) {
        placed = false;
        break;
      }
      const int a = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
      used.insert(a);
      s.objects[n] = ScriptObject{class_ids[n], a};
    }
  }
  if (!placed) throw GenerationError("sample_script: cannot assign distinct attributes to the objects");

  // Roles: subject acts, partner stays adjacent, transitive verbs pick a patient.
  std::vector<int> order(real);
  for (int i = 0; i < real; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  s.subject = order[0];
  s.partner = order[1];
  s.clip_patient.assign(m.K, -1);
  for (int k = 0; k < m.K; ++k) {
    if (!w.verbs[s.clip_verb[k]].transitive) continue;
    if (real > 2) {
      s.clip_patient[k] = order[2 + std::uniform_int_distribution<int>(0, real - 3)(rng)];
    } else {
      s.clip_patient[k] = s.partner;
    }
  }

  // Trajectories.
  const float W = w.frame_width, H = w.frame_height;
  std::uniform_real_distribution<float> size_d(20.f, 36.f);
  const float gap = 2.f;
  const float sw = size_d(rng), sh = size_d(rng), pw = size_d(rng), ph = size_d(rng);
  const float group_w = sw + gap + pw;
  const float group_h = std::max(sh, ph);
  std::uniform_real_distribution<float> gx(0.f, W - group_w), gy(0.f, H - group_h);
  std::vector<std::array<float, 2>> origin(T);  // subject top-left per frame
  float ox = gx(rng), oy = gy(rng);
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      const auto& v = w.verbs[s.clip_verb[t / s.frames_per_clip]];
      ox = std::clamp(ox + static_cast<float>(v.dx), 0.f, W - group_w);
      oy = std::clamp(oy + static_cast<float>(v.dy), 0.f, H - group_h);
    }
    origin[t] = {ox, oy};
  }
  s.boxes.assign(T, std::vector<Box>(m.N));
  for (int t = 0; t < T; ++t) {
    s.boxes[t][s.subject] = detail::fit_box(origin[t][0], origin[t][1], sw, sh, W, H);
    const float px = origin[t][0] + sw + gap;
    s.boxes[t][s.partner] = detail::fit_box(px, origin[t][1], pw, ph, W, H);
  }
  const double partner_d = detail::center_distance(s.boxes[0][s.subject], s.boxes[0][s.partner]);
  for (int n = 0; n < m.N; ++n) {
    if (n == s.subject || n == s.partner) continue;
    const bool null_obj = s.objects[n].is_null();
    const float bw = null_obj ? 8.f : size_d(rng), bh = null_obj ? 8.f : size_d(rng);
    std::uniform_real_distribution<float> px(0.f, W - bw), py(0.f, H - bh);
    bool ok = false;
    Box b{};
    for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
      const float x = px(rng), y = py(rng);
      b = detail::fit_box(x, y, bw, bh, W, H);
      ok = true;
      for (int t = 0; t < T && ok; ++t)
        if (detail::center_distance(b, s.boxes[t][s.subject]) < partner_d + 24.0) ok = false;
    }
    if (!ok) throw GenerationError("sample_script: cannot place distractor objects away from the subject");
    for (int t = 0; t < T; ++t) s.boxes[t][n] = b;
  }
  return s;
}

// Optional planted saliency: one object's region features are scaled.
struct Saliency {
  int object = -1;
  double gain = 1.0;
};

inline RawFeatureBundle render_features(const EpisodeScript& s, const WorldSpec& w, const FeatureManifest& m,
                                        std::uint64_t seed, const Prototypes& protos,
                                        std::optional<Saliency> saliency = std::nullopt) {
  if (m.K != s.K || m.N != s.N || m.frames_per_clip() != s.frames_per_clip)
    throw ConfigError("render_features: script does not match the manifest");
  if (m.d_m != w.d_m || m.d_a != w.d_a || m.d_r != w.d_r)
    throw ConfigError("render_features: manifest widths differ from the world spec");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = w.noise_sigma;
  const int T = s.T();

  RawFeatureBundle b;
  b.manifest = m;
  b.frame_width = w.frame_width;
  b.frame_height = w.frame_height;
  b.motion.resize(m.K, m.d_m);
  b.appearance.resize(T, m.d_a);
  b.region_feats.resize(static_cast<Eigen::Index>(T) * m.N, m.d_r);
  b.region_boxes.resize(static_cast<Eigen::Index>(T) * m.N, 4);
  b.frame_times.resize(T);

  auto object_proto = [&](int n) {
    const auto& o = s.objects[n];
    if (o.is_null()) return Eigen::VectorXd(Eigen::VectorXd::Zero(w.d_r));
    return Eigen::VectorXd(protos.classes[o.cls] + protos.attributes[o.attribute]);
  };

  for (int k = 0; k < m.K; ++k)
    for (int i = 0; i < m.d_m; ++i) b.motion(k, i) = static_cast<float>(protos.verbs[s.clip_verb[k]][i] + sigma * noise(rng));

  for (int t = 0; t < T; ++t) {
    b.frame_times[t] = static_cast<float>((t + 0.5) / T);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(w.d_r);
    int present = 0;
    for (int n = 0; n < m.N; ++n) {
      const Eigen::Index row = static_cast<Eigen::Index>(t) * m.N + n;
      Eigen::VectorXd proto = object_proto(n);
      if (!s.objects[n].is_null()) {
        mean += proto;
        ++present;
      }
      const double gain = (saliency && saliency->object == n) ? saliency->gain : 1.0;
      for (int i = 0; i < m.d_r; ++i) b.region_feats(row, i) = static_cast<float>(gain * (proto[i] + sigma * noise(rng)));
      for (int c = 0; c < 4; ++c) b.region_boxes(row, c) = s.boxes[t][n][c];
    }
    if (present > 0) mean /= present;
    const Eigen::VectorXd& scene = protos.scenes[s.event];
    for (int i = 0; i < m.d_a; ++i) b.appearance(t, i) = static_cast<float>(scene[i] + mean[i] + sigma * noise(rng));
  }
  return b;
}

// Token and answer vocabularies of a world.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;
  std::vector<std::string> answers;  // open-ended answer set
  std::map<std::string, int> answer_index;

  int id(const std::string& tok) const {
    auto it = index.find(tok);
    if (it == index.end()) throw DataError("token \"" + tok + "\" is not in the vocabulary");
    return it->second;
  }
};

inline Vocabulary build_vocabulary(const WorldSpec& w, int K) {
  Vocabulary v;
  auto add = [&](const std::string& t) {
    if (!v.index.count(t)) {
      v.index[t] = static_cast<int>(v.tokens.size());
      v.tokens.push_back(t);
    }
  };
  for (const char* t : {"what", "is", "the", "object", "next", "to", "does", "do", "in", "clip", "happening"}) add(t);
  for (const auto& a : w.attributes) add(a);
  for (const auto& c : w.classes) add(c.name);
  for (const auto& vb : w.verbs) add(vb.name);
  for (const auto& e : w.events) add(e.name);
  for (int k = 1; k <= K; ++k) add(std::to_string(k));
  auto add_answer = [&](const std::string& a) {
    if (!v.answer_index.count(a)) {
      v.answer_index[a] = static_cast<int>(v.answers.size());
      v.answers.push_back(a);
    }
  };
  for (const auto& c : w.classes) add_answer(c.name);
  for (const auto& vb : w.verbs) add_answer(vb.name);
  for (const auto& e : w.events) add_answer(e.name);
  return v;
}

inline const std::vector<std::string> kGranularityTags = {"object", "relation", "action", "event"};

// A generated question before mode-specific encoding.
struct ScriptQuestion {
  std::string tag;
  std::vector<std::string> words;
  std::string answer;
  std::string category;  // "class", "verb" or "event"
};

// Recomputes the answer of a question from the script alone.
inline std::string answer_from_script(const EpisodeScript& s, const WorldSpec& w, const std::vector<std::string>& q) {
  auto find_class_object = [&](const std::string& name) {
    for (int n = 0; n < s.N; ++n)
      if (!s.objects[n].is_null() && w.classes[s.objects[n].cls].name == name) return n;
    throw DataError("question refers to a class absent from the video: " + name);
  };
  if (q.size() == 3 && q[2] == "happening") return w.events[s.event].name;
  if (q.size() == 5 && q[4] == "object") {
    for (int n = 0; n < s.N; ++n)
      if (!s.objects[n].is_null() && w.attributes[s.objects[n].attribute] == q[3]) return w.classes[s.objects[n].cls].name;
    throw DataError("no object has attribute " + q[3]);
  }
  if (q.size() == 6 && q[2] == "next") {
    const int anchor = find_class_object(q[5]);
    std::map<int, int> votes;
    for (int t = 0; t < s.T(); ++t) ++votes[nearest_object(s, t, anchor)];
    auto best = std::max_element(votes.begin(), votes.end(), [](auto& a, auto& b) { return a.second < b.second; });
    return w.classes[s.objects[best->first].cls].name;
  }
  if (q.size() == 8 && q[1] == "does") {
    const int k = std::stoi(q[7]) - 1;
    if (k < 0 || k >= s.K) throw DataError("clip index out of range in question");
    return w.verbs[s.clip_verb[k]].name;
  }
  throw DataError("unrecognized question form");
}

inline std::vector<ScriptQuestion> script_questions(const EpisodeScript& s, const WorldSpec& w, std::mt19937_64& rng) {
  std::vector<int> real;
  for (int n = 0; n < s.N; ++n)
    if (!s.objects[n].is_null()) real.push_back(n);
  const int target = real[std::uniform_int_distribution<std::size_t>(0, real.size() - 1)(rng)];
  const int clip = std::uniform_int_distribution<int>(0, s.K - 1)(rng);
  const auto& subj = w.classes[s.objects[s.subject].cls].name;

  std::vector<ScriptQuestion> qs;
  qs.push_back({"object",
                {"what", "is", "the", w.attributes[s.objects[target].attribute], "object"},
                w.classes[s.objects[target].cls].name,
                "class"});
  qs.push_back({"relation", {"what", "is", "next", "to", "the", subj}, w.classes[s.objects[s.partner].cls].name, "class"});
  qs.push_back({"action",
                {"what", "does", "the", subj, "do", "in", "clip", std::to_string(clip + 1)},
                w.verbs[s.clip_verb[clip]].name,
                "verb"});
  qs.push_back({"event", {"what", "is", "happening"}, w.events[s.event].name, "event"});
  return qs;
}

inline std::vector<std::string> category_members(const WorldSpec& w, const std::string& category) {
  std::vector<std::string> out;
  if (category == "class") {
    for (const auto& c : w.classes) out.push_back(c.name);
  } else if (category == "verb") {
    for (const auto& v : w.verbs) out.push_back(v.name);
  } else {
    for (const auto& e : w.events) out.push_back(e.name);
  }
  return out;
}

// Encodes the script's questions as QASamples. Multi-choice candidates are
// the answer plus num_choices-1 distractors from the same category.
inline std::vector<QASample> make_questions(const EpisodeScript& s, const WorldSpec& w, const Vocabulary& vocab,
                                            DecoderMode mode, std::uint64_t seed, const std::string& video_ref,
                                            int num_choices = 5) {
  std::mt19937_64 rng(seed);
  std::vector<QASample> out;
  for (const auto& q : script_questions(s, w, rng)) {
    QASample qa;
    qa.sample_id = video_ref + "_" + q.tag;
    qa.granularity_tag = q.tag;
    qa.video_ref = video_ref;
    for (const auto& word : q.words) qa.question_tokens.push_back(vocab.id(word));
    if (mode == DecoderMode::MultiChoice) {
      std::vector<std::string> pool;
      for (const auto& m : category_members(w, q.category))
        if (m != q.answer) pool.push_back(m);
      if (static_cast<int>(pool.size()) < num_choices - 1)
        throw GenerationError("grammar too small: category " + q.category + " cannot supply " +
                              std::to_string(num_choices - 1) + " distinct distractors");
      std::shuffle(pool.begin(), pool.end(), rng);
      std::vector<std::string> choices(pool.begin(), pool.begin() + (num_choices - 1));
      const int pos = std::uniform_int_distribution<int>(0, num_choices - 1)(rng);
      choices.insert(choices.begin() + pos, q.answer);
      for (const auto& c : choices) qa.candidates.push_back({vocab.id(c)});
      qa.answer_index = pos;
    } else {
      qa.answer_index = vocab.answer_index.at(q.answer);
    }
    out.push_back(std::move(qa));
  }
  return out;
}

struct DatasetSizes {
  int train = 0;  // episodes; each contributes one question per granularity tag
  int val = 0;
  int test = 0;
};

struct Episode {
  std::string video_ref;
  std::string split;
  EpisodeScript script;
  RawFeatureBundle features;
};

struct SyntheticDataset {
  WorldSpec world;
  FeatureManifest manifest;
  DecoderMode mode = DecoderMode::MultiChoice;
  int num_choices = 5;
  std::uint64_t seed = 0;
  Vocabulary vocab;
  std::vector<Episode> episodes;
  std::vector<QASample> train, val, test;

  const std::vector<QASample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split " + name);
  }
};

inline std::uint64_t episode_seed(std::uint64_t seed, const std::string& split, int index) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the split name
  for (char ch : split) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  return mix_seed(mix_seed(seed ^ h) + static_cast<std::uint64_t>(index));
}

inline Episode make_episode(const WorldSpec& w, const FeatureManifest& m, const Prototypes& protos,
                            const std::string& split, int index, std::uint64_t seed) {
  Episode e;
  char ref[64];
  std::snprintf(ref, sizeof(ref), "%s_%06d", split.c_str(), index);
  e.video_ref = ref;
  e.split = split;
  const std::uint64_t base = episode_seed(seed, split, index);
  e.script = sample_script(w, m, mix_seed(base + 1));
  e.features = render_features(e.script, w, m, mix_seed(base + 2), protos);
  return e;
}

inline void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  auto write_json = [&](const std::filesystem::path& p, const nlohmann::json& j) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out << j.dump(1) << "\n";
  };
  write_json(dir / "world.json", nlohmann::json(ds.world));
  write_json(dir / "dataset.json", nlohmann::json{{"mode", to_string(ds.mode)},
                                                  {"num_choices", ds.num_choices},
                                                  {"seed", ds.seed},
                                                  {"vocab", ds.vocab.tokens},
                                                  {"answer_set", ds.vocab.answers},
                                                  {"manifest", ds.manifest}});
  write_json(dir / "train.json", nlohmann::json(ds.train));
  write_json(dir / "val.json", nlohmann::json(ds.val));
  write_json(dir / "test.json", nlohmann::json(ds.test));
  for (const auto& e : ds.episodes) save_feature_archive(e.features, dir / "features" / (e.video_ref + ".safetensors"));
}

inline SyntheticDataset build_dataset(const WorldSpec& w, const FeatureManifest& m, DatasetSizes sizes,
                                      std::uint64_t seed, DecoderMode mode, int num_choices = 5,
                                      const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  w.validate();
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0) throw ConfigError("split sizes must be non-negative");
  SyntheticDataset ds;
  ds.world = w;
  ds.manifest = m;
  ds.mode = mode;
  ds.num_choices = num_choices;
  ds.seed = seed;
  ds.vocab = build_vocabulary(w, m.K);
  const Prototypes protos = make_prototypes(w);
  auto fill = [&](const std::string& split, int count, std::vector<QASample>& qas) {
    for (int i = 0; i < count; ++i) {
      Episode e = make_episode(w, m, protos, split, i, seed);
      auto qs = make_questions(e.script, w, ds.vocab, mode, mix_seed(episode_seed(seed, split, i) + 3), e.video_ref,
                               num_choices);
      qas.insert(qas.end(), qs.begin(), qs.end());
      ds.episodes.push_back(std::move(e));
    }
  };
  fill("train", sizes.train, ds.train);
  fill("val", sizes.val, ds.val);
  fill("test", sizes.test, ds.test);
  if (out_dir) write_dataset(ds, *out_dir);
  return ds;
}

}  // namespace hqga
