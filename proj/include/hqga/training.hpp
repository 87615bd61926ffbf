// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training, accuracy evaluation, checkpoints and the ablation suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqga/archive.hpp"
#include "hqga/config.hpp"
#include "hqga/model.hpp"
#include "hqga/synthdata.hpp"

namespace hqga {

// Videos and question splits ready for the model.
template <typename S>
struct Corpus {
  std::map<std::string, PreparedVideo<S>> videos;
  std::vector<QASample> train, val, test;

  const PreparedVideo<S>& video(const std::string& ref) const {
    auto it = videos.find(ref);
    if (it == videos.end()) throw DataError("video \"" + ref + "\" is not in the corpus");
    return it->second;
  }

  const std::vector<QASample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split \"" + name + "\"");
  }
};

template <typename S>
Corpus<S> corpus_from(const SyntheticDataset& ds) {
  Corpus<S> c;
  for (const auto& e : ds.episodes) c.videos.emplace(e.video_ref, prepare_video<S>(e.features));
  c.train = ds.train;
  c.val = ds.val;
  c.test = ds.test;
  return c;
}

// Dataset-level facts stored next to the splits.
struct DatasetInfo {
  DecoderMode mode = DecoderMode::MultiChoice;
  int num_choices = 5;
  std::vector<std::string> vocab;
  std::vector<std::string> answer_set;
  FeatureManifest manifest;
};

inline DatasetInfo load_dataset_info(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw DataError("cannot open " + (dir / "dataset.json").string());
  try {
    auto j = nlohmann::json::parse(in);
    DatasetInfo info;
    info.mode = decoder_mode_from_string(j.at("mode").get<std::string>());
    info.num_choices = j.at("num_choices").get<int>();
    j.at("vocab").get_to(info.vocab);
    j.at("answer_set").get_to(info.answer_set);
    info.manifest = j.at("manifest").get<FeatureManifest>();
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptManifestError("dataset.json: " + std::string(e.what()));
  }
}

template <typename S>
Corpus<S> load_corpus(const std::filesystem::path& dir) {
  Corpus<S> c;
  c.train = load_qa_manifest(dir / "train.json");
  c.val = load_qa_manifest(dir / "val.json");
  c.test = load_qa_manifest(dir / "test.json");
  for (const auto* split : {&c.train, &c.val, &c.test})
    for (const auto& s : *split)
      if (!c.videos.count(s.video_ref))
        c.videos.emplace(s.video_ref,
                         prepare_video<S>(load_feature_archive(dir / "features" / (s.video_ref + ".safetensors"))));
  return c;
}

// Model config fields that must agree with a dataset.
inline void check_dataset_config(const HierarchyConfig& c, const DatasetInfo& info) {
  const FeatureManifest m = manifest_of(c);
  if (!(m == info.manifest)) throw ConfigError("model config does not match the dataset's feature manifest");
  if (c.decoder_mode != info.mode) throw ConfigError("decoder_mode differs from the dataset mode");
  if (c.vocab_size < static_cast<int>(info.vocab.size()))
    throw ConfigError("vocab_size " + std::to_string(c.vocab_size) + " is smaller than the dataset vocabulary (" +
                      std::to_string(info.vocab.size()) + ")");
  if (c.decoder_mode == DecoderMode::OpenEnded && c.answer_set_size != static_cast<int>(info.answer_set.size()))
    throw ConfigError("answer_set_size must equal the dataset answer set size (" +
                      std::to_string(info.answer_set.size()) + ")");
}

template <typename S>
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParameterList<S>& params, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
        v_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S c1 = static_cast<S>(1.0 - std::pow(beta1_, t_)), c2 = static_cast<S>(1.0 - std::pow(beta2_, t_));
    const S rate = static_cast<S>(lr), eps = static_cast<S>(eps_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<S>& p = *params[i];
      if (!p.trainable) continue;
      m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

struct TagAccuracy {
  int correct = 0;
  int total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct AccuracyReport {
  int correct = 0;
  int total = 0;
  std::map<std::string, TagAccuracy> per_tag;  // only tags that occur

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

inline void to_json(nlohmann::json& j, const AccuracyReport& r) {
  nlohmann::json tags = nlohmann::json::object();
  for (const auto& [tag, a] : r.per_tag) tags[tag] = {{"correct", a.correct}, {"total", a.total}, {"accuracy", a.accuracy()}};
  j = nlohmann::json{{"correct", r.correct}, {"total", r.total}, {"accuracy", r.accuracy()}, {"per_tag", tags}};
}

inline AccuracyReport score_predictions(const std::vector<QASample>& samples, const std::vector<int>& predictions) {
  if (samples.empty()) throw DataError("cannot score an empty split");
  if (samples.size() != predictions.size()) throw ConfigError("one prediction per sample is required");
  AccuracyReport r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool hit = predictions[i] == samples[i].answer_index;
    auto& tag = r.per_tag[samples[i].granularity_tag];
    ++tag.total;
    ++r.total;
    if (hit) {
      ++tag.correct;
      ++r.correct;
    }
  }
  return r;
}

template <typename S>
std::vector<int> predict_split(ModelParams<S>& p, const Corpus<S>& corpus, const std::vector<QASample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(predict_scores(p, corpus.video(s.video_ref), s)));
  return out;
}

template <typename S>
AccuracyReport evaluate_accuracy(ModelParams<S>& p, const Corpus<S>& corpus, const std::vector<QASample>& samples) {
  if (samples.empty()) throw DataError("cannot evaluate an empty split");
  return score_predictions(samples, predict_split(p, corpus, samples));
}

struct EpochRecord {
  int epoch = 0;  // 1-based within its stage
  int stage = 1;
  double loss = 0;       // mean training loss over the epoch
  double val_acc = 0;
  double train_acc = 0;  // accuracy of the pre-update predictions seen during the epoch
};

template <typename S>
struct TrainResult {
  ModelParams<S> best;
  std::vector<EpochRecord> history;
  double best_val_acc = -1;
  int best_stage = 0;  // 0: initial parameters were never improved upon
  int best_epoch = 0;
};

namespace detail {

template <typename S>
EpochRecord run_epoch(ModelParams<S>& p, Adam<S>& opt, const Corpus<S>& corpus, const TrainConfig& tc, double lr,
                      std::mt19937_64& rng, int stage, int epoch) {
  std::vector<std::size_t> order(corpus.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const ParameterList<S> params = p.parameters();
  double loss_sum = 0;
  int hits = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
    for (auto* q : params) q->zero_grad();
    const S weight = static_cast<S>(1.0 / static_cast<double>(end - start));
    for (std::size_t b = start; b < end; ++b) {
      const QASample& s = corpus.train[order[b]];
      ag::Tape<S> tape;
      auto video = project_video(tape, corpus.video(s.video_ref), p);
      auto f = forward_sample(tape, p, video, s);
      const double loss = static_cast<double>(f.loss.value()(0, 0));
      if (!std::isfinite(loss))
        throw DivergenceError("non-finite loss at stage " + std::to_string(stage) + ", epoch " + std::to_string(epoch) +
                              ", sample " + s.sample_id);
      loss_sum += loss;
      hits += predict(f.scores.value()) == s.answer_index ? 1 : 0;
      tape.backward(ag::scale(f.loss, weight));
    }
    for (auto* q : params)
      if (!q->grad.allFinite())
        throw DivergenceError("non-finite gradient in " + q->name + " at stage " + std::to_string(stage) + ", epoch " +
                              std::to_string(epoch));
    opt.step(params, lr);
    for (auto* q : params)
      if (!q->value.allFinite())
        throw DivergenceError("non-finite value in " + q->name + " after an update at stage " + std::to_string(stage) +
                              ", epoch " + std::to_string(epoch));
  }
  EpochRecord r;
  r.stage = stage;
  r.epoch = epoch;
  r.loss = loss_sum / static_cast<double>(order.size());
  r.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
  return r;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

// Stage 1 trains from `init` at lr_stage1 and keeps the best-validation
// checkpoint (earliest on ties). Stage 2 restarts Adam from that checkpoint
// at lr_stage2; its epochs replace the best only on strict improvement.
template <typename S>
TrainResult<S> train_two_stage(const ModelParams<S>& init, const Corpus<S>& corpus, const TrainConfig& tc,
                               const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (corpus.train.empty() || corpus.val.empty()) throw DataError("training needs non-empty train and val splits");
  std::mt19937_64 rng(tc.seed);
  TrainResult<S> result;
  result.best = init;

  auto run_stage = [&](int stage, int epochs, double lr) {
    ModelParams<S> p = result.best;
    Adam<S> opt(tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
    for (int e = 1; e <= epochs; ++e) {
      EpochRecord r = detail::run_epoch(p, opt, corpus, tc, lr, rng, stage, e);
      r.val_acc = evaluate_accuracy(p, corpus, corpus.val).accuracy();
      result.history.push_back(r);
      if (on_epoch) on_epoch(r);
      if (r.val_acc > result.best_val_acc) {
        result.best_val_acc = r.val_acc;
        result.best = p;
        result.best_stage = stage;
        result.best_epoch = e;
      }
      if (tc.target_train_accuracy > 0 && r.train_acc >= tc.target_train_accuracy) break;
    }
  };

  run_stage(1, tc.max_epochs, tc.lr_stage1);
  if (tc.stage2_enabled) run_stage(2, tc.stage2_epoch_count(), tc.lr_stage2);
  if (result.best_stage == 0) result.best_val_acc = evaluate_accuracy(result.best, corpus, corpus.val).accuracy();
  return result;
}

inline void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,stage,loss,val_acc\n";
  char line[128];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%d,%d,%.9g,%.9g\n", r.epoch, r.stage, r.loss, r.val_acc);
    out << line;
  }
}

inline std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,stage,loss,val_acc") throw DataError(path.string() + ": unexpected header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &r.epoch, &r.stage, &r.loss, &r.val_acc) != 4)
      throw DataError(path.string() + ": malformed row \"" + line + "\"");
    out.push_back(r);
  }
  return out;
}

// Checkpoint: every parameter as a named array plus the model config.
template <typename S>
void save_checkpoint(const ModelParams<S>& params, const std::filesystem::path& path) {
  ModelParams<S> p = params;
  NamedArrays a;
  nlohmann::json frozen = nlohmann::json::array();
  for (auto* q : p.parameters()) {
    a.put_matrix<S>(q->name, q->value);
    if (!q->trainable) frozen.push_back(q->name);
  }
  a.metadata()["format"] = "hqga-checkpoint";
  a.metadata()["config"] = nlohmann::json(p.config).dump();
  a.metadata()["frozen"] = frozen.dump();
  write_archive(a, path);
}

template <typename S>
ModelParams<S> load_checkpoint(const std::filesystem::path& path) {
  NamedArrays a = read_archive(path);
  const auto& meta = a.metadata();
  if (!meta.count("config") || meta.at("format") != "hqga-checkpoint")
    throw CorruptManifestError(path.string() + " is not a model checkpoint");
  HierarchyConfig cfg;
  std::vector<std::string> frozen;
  try {
    cfg = nlohmann::json::parse(meta.at("config")).get<HierarchyConfig>();
    if (meta.count("frozen")) frozen = nlohmann::json::parse(meta.at("frozen")).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptManifestError(path.string() + ": " + e.what());
  }
  ModelParams<S> p(cfg);
  const auto params = p.parameters();
  for (auto* q : params) {
    q->value = a.get_matrix<S>(q->name, q->rows(), q->cols());
    q->trainable = std::find(frozen.begin(), frozen.end(), q->name) == frozen.end();
    q->zero_grad();
  }
  if (a.arrays().size() != params.size()) throw CorruptManifestError(path.string() + ": unexpected extra arrays");
  return p;
}

// Ablation variants: each edits a copy of the base config.
struct AblationVariant {
  std::string name;
  std::function<void(HierarchyConfig&)> apply;
};

inline const std::string kFullModel = "full";

inline std::vector<AblationVariant> ablation_variants() {
  return {
      {"w/o G_O", [](HierarchyConfig& c) { c.use_GO = false; }},
      {"w/o G_F", [](HierarchyConfig& c) { c.use_GF = false; }},
      {"w/o G_O & G_F", [](HierarchyConfig& c) { c.use_GO = c.use_GF = false; }},
      {"sumpool (s)", [](HierarchyConfig& c) { c.sumpool_O = true; }},
      {"sumpool (ss)", [](HierarchyConfig& c) { c.sumpool_O = c.sumpool_F = true; }},
      {"sumpool (sss)", [](HierarchyConfig& c) { c.sumpool_O = c.sumpool_F = c.sumpool_C = true; }},
      {"w/o Q_C", [](HierarchyConfig& c) { c.cond_C = false; }},
      {"w/o Q_C & Q_F", [](HierarchyConfig& c) { c.cond_C = c.cond_F = false; }},
      {"w/o Q_C & Q_F & Q_O", [](HierarchyConfig& c) { c.cond_C = c.cond_F = c.cond_O = false; }},
      {"w/ f_Q", [](HierarchyConfig& c) { c.global_fQ_condition = true; }},
      {"w/o F_m", [](HierarchyConfig& c) { c.use_Fm = false; }},
      {"w/o F_a & F_m", [](HierarchyConfig& c) { c.use_Fa = c.use_Fm = false; }},
  };
}

// The full model followed by the ablation variants; `only`, when non-empty,
// keeps the named rows.
inline std::vector<AblationVariant> ablation_rows(const std::vector<std::string>& only = {}) {
  std::vector<AblationVariant> rows{{kFullModel, [](HierarchyConfig&) {}}};
  for (auto& v : ablation_variants()) rows.push_back(std::move(v));
  if (only.empty()) return rows;
  std::vector<AblationVariant> kept;
  for (const auto& name : only) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AblationVariant& v) { return v.name == name; });
    if (it == rows.end()) throw ConfigError("unknown ablation variant \"" + name + "\"");
    kept.push_back(*it);
  }
  return kept;
}

struct AblationRow {
  std::string name;
  HierarchyConfig config;
  std::vector<AccuracyReport> per_seed;
  double median_accuracy = 0;
  std::map<std::string, double> median_tag_accuracy;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void to_json(nlohmann::json& j, const AblationRow& r) {
  j = nlohmann::json{{"name", r.name},
                     {"config", r.config},
                     {"per_seed", r.per_seed},
                     {"median_accuracy", r.median_accuracy},
                     {"median_tag_accuracy", r.median_tag_accuracy}};
}

using AblationProgress = std::function<void(const std::string& variant, std::uint64_t seed, const AccuracyReport&)>;

// Trains every row once per seed (model init and data order both use the
// seed) and evaluates the best checkpoint on `eval_split`.
template <typename S>
std::vector<AblationRow> run_ablation_suite(const HierarchyConfig& base, const TrainConfig& tc, const Corpus<S>& corpus,
                                            const std::vector<std::uint64_t>& seeds,
                                            const std::vector<AblationVariant>& rows = ablation_rows(),
                                            const std::string& eval_split = "val",
                                            const AblationProgress& progress = {}) {
  if (seeds.empty()) throw ConfigError("the ablation suite needs at least one seed");
  std::vector<AblationRow> out;
  for (const auto& variant : rows) {
    AblationRow row;
    row.name = variant.name;
    row.config = base;
    variant.apply(row.config);
    row.config.validate();
    std::vector<double> overall;
    std::map<std::string, std::vector<double>> tags;
    for (std::uint64_t seed : seeds) {
      ModelParams<S> init(row.config);
      init.init(seed);
      TrainConfig run = tc;
      run.seed = seed;
      auto trained = train_two_stage(init, corpus, run);
      AccuracyReport rep = evaluate_accuracy(trained.best, corpus, corpus.split(eval_split));
      if (progress) progress(variant.name, seed, rep);
      overall.push_back(rep.accuracy());
      for (const auto& [tag, a] : rep.per_tag) tags[tag].push_back(a.accuracy());
      row.per_seed.push_back(std::move(rep));
    }
    row.median_accuracy = median(overall);
    for (const auto& [tag, accs] : tags) row.median_tag_accuracy[tag] = median(accs);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace hqga
