// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "json.hpp"

#include "hqga/errors.hpp"

namespace hqga {

enum class DecoderMode { MultiChoice, OpenEnded };

inline std::string to_string(DecoderMode m) { return m == DecoderMode::MultiChoice ? "MC" : "OE"; }

inline DecoderMode decoder_mode_from_string(const std::string& s) {
  if (s == "MC" || s == "mc") return DecoderMode::MultiChoice;
  if (s == "OE" || s == "oe") return DecoderMode::OpenEnded;
  throw ConfigError("decoder_mode must be MC or OE, got \"" + s + "\"");
}

// Structural hyperparameters of the hierarchy plus the ablation switches.
struct HierarchyConfig {
  int K = 4;             // clips per video
  int L = 16;            // frames per dense clip
  double gamma = 0.25;   // sparse sampling ratio
  int N = 5;             // regions per frame
  int M = 12;            // max query tokens
  int d = 64;            // hidden width
  int H = 2;             // graph layers per QGA unit

  // Raw input widths.
  int d_m = 32;
  int d_a = 32;
  int d_r = 32;
  int d_e = 32;          // token embedding width
  int vocab_size = 64;

  bool use_GO = true;
  bool use_GF = true;
  bool use_GC = true;
  bool cond_O = true;
  bool cond_F = true;
  bool cond_C = true;
  bool global_fQ_condition = false;
  bool sumpool_O = false;
  bool sumpool_F = false;
  bool sumpool_C = false;
  bool use_Fa = true;
  bool use_Fm = true;

  DecoderMode decoder_mode = DecoderMode::MultiChoice;
  int num_choices = 5;
  int answer_set_size = 32;

  // Sparse frames per clip, gamma * L.
  int frames_per_clip() const { return static_cast<int>(std::lround(gamma * L)); }
  // Sparse frame count T = gamma * L * K.
  int T() const { return frames_per_clip() * K; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (K < 1) fail("K must be >= 1");
    if (L < 1) fail("L must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must lie in (0, 1)");
    const double t = gamma * L;
    if (std::abs(t - std::round(t)) > 1e-9 || std::lround(t) < 1)
      fail("gamma * L must be a positive integer (T = gamma * L * K)");
    if (N < 1) fail("N must be >= 1");
    if (M < 1) fail("M must be >= 1");
    if (H < 1) fail("H must be >= 1");
    if (d < 2 || d % 2 != 0) fail("d must be a positive even number");
    if (d_m < 1 || d_a < 1 || d_r < 1 || d_e < 1) fail("input widths must be >= 1");
    if (vocab_size < 1) fail("vocab_size must be >= 1");
    if (!use_GC) fail("use_GC=false is not a valid variant: the top level always produces f_V");
    if (sumpool_O && !use_GO) fail("sumpool_O requires use_GO");
    if (sumpool_F && !use_GF) fail("sumpool_F requires use_GF");
    if (sumpool_C && !use_GC) fail("sumpool_C requires use_GC");
    if (decoder_mode == DecoderMode::MultiChoice && num_choices < 2) fail("num_choices must be >= 2");
    if (decoder_mode == DecoderMode::OpenEnded && answer_set_size < 1) fail("answer_set_size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const HierarchyConfig& c) {
  j = nlohmann::json{{"K", c.K},
                     {"L", c.L},
                     {"gamma", c.gamma},
                     {"N", c.N},
                     {"M", c.M},
                     {"d", c.d},
                     {"H", c.H},
                     {"d_m", c.d_m},
                     {"d_a", c.d_a},
                     {"d_r", c.d_r},
                     {"d_e", c.d_e},
                     {"vocab_size", c.vocab_size},
                     {"use_GO", c.use_GO},
                     {"use_GF", c.use_GF},
                     {"use_GC", c.use_GC},
                     {"cond_O", c.cond_O},
                     {"cond_F", c.cond_F},
                     {"cond_C", c.cond_C},
                     {"global_fQ_condition", c.global_fQ_condition},
                     {"sumpool_O", c.sumpool_O},
                     {"sumpool_F", c.sumpool_F},
                     {"sumpool_C", c.sumpool_C},
                     {"use_Fa", c.use_Fa},
                     {"use_Fm", c.use_Fm},
                     {"decoder_mode", to_string(c.decoder_mode)},
                     {"num_choices", c.num_choices},
                     {"answer_set_size", c.answer_set_size}};
}

namespace detail {
template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
}
}  // namespace detail

inline void from_json(const nlohmann::json& j, HierarchyConfig& c) {
  detail::reject_unknown(j, nlohmann::json(HierarchyConfig{}), "model config");
  detail::read_key(j, "K", c.K);
  detail::read_key(j, "L", c.L);
  detail::read_key(j, "gamma", c.gamma);
  detail::read_key(j, "N", c.N);
  detail::read_key(j, "M", c.M);
  detail::read_key(j, "d", c.d);
  detail::read_key(j, "H", c.H);
  detail::read_key(j, "d_m", c.d_m);
  detail::read_key(j, "d_a", c.d_a);
  detail::read_key(j, "d_r", c.d_r);
  detail::read_key(j, "d_e", c.d_e);
  detail::read_key(j, "vocab_size", c.vocab_size);
  detail::read_key(j, "use_GO", c.use_GO);
  detail::read_key(j, "use_GF", c.use_GF);
  detail::read_key(j, "use_GC", c.use_GC);
  detail::read_key(j, "cond_O", c.cond_O);
  detail::read_key(j, "cond_F", c.cond_F);
  detail::read_key(j, "cond_C", c.cond_C);
  detail::read_key(j, "global_fQ_condition", c.global_fQ_condition);
  detail::read_key(j, "sumpool_O", c.sumpool_O);
  detail::read_key(j, "sumpool_F", c.sumpool_F);
  detail::read_key(j, "sumpool_C", c.sumpool_C);
  detail::read_key(j, "use_Fa", c.use_Fa);
  detail::read_key(j, "use_Fm", c.use_Fm);
  if (j.contains("decoder_mode")) c.decoder_mode = decoder_mode_from_string(j.at("decoder_mode").get<std::string>());
  detail::read_key(j, "num_choices", c.num_choices);
  detail::read_key(j, "answer_set_size", c.answer_set_size);
}

struct TrainConfig {
  double lr_stage1 = 1e-4;
  double lr_stage2 = 5e-5;
  int batch_size = 32;
  int max_epochs = 25;
  int stage2_epochs = -1;  // -1: reuse max_epochs
  std::uint64_t seed = 0;
  bool stage2_enabled = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Stop a stage once training accuracy reaches this value (<= 0 disables).
  double target_train_accuracy = 0.0;

  int stage2_epoch_count() const { return stage2_epochs < 0 ? max_epochs : stage2_epochs; }

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (lr_stage1 < 0 || lr_stage2 < 0) throw ConfigError("learning rates must be non-negative");
    if (lr_stage2 > lr_stage1) throw ConfigError("lr_stage2 must not exceed lr_stage1");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
      throw ConfigError("invalid Adam hyperparameters");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr_stage1", c.lr_stage1},     {"lr_stage2", c.lr_stage2},
                     {"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
                     {"stage2_epochs", c.stage2_epochs}, {"seed", c.seed},
                     {"stage2_enabled", c.stage2_enabled}, {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},   {"adam_eps", c.adam_eps},
                     {"target_train_accuracy", c.target_train_accuracy}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown(j, nlohmann::json(TrainConfig{}), "train config");
  detail::read_key(j, "lr_stage1", c.lr_stage1);
  detail::read_key(j, "lr_stage2", c.lr_stage2);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "max_epochs", c.max_epochs);
  detail::read_key(j, "stage2_epochs", c.stage2_epochs);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "stage2_enabled", c.stage2_enabled);
  detail::read_key(j, "adam_beta1", c.adam_beta1);
  detail::read_key(j, "adam_beta2", c.adam_beta2);
  detail::read_key(j, "adam_eps", c.adam_eps);
  detail::read_key(j, "target_train_accuracy", c.target_train_accuracy);
}

}  // namespace hqga
