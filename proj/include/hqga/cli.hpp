// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and the command implementations behind tools/hqga.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqga/config.hpp"
#include "hqga/oracle.hpp"
#include "hqga/synthdata.hpp"
#include "hqga/trace.hpp"
#include "hqga/training.hpp"

namespace hqga::cli {

struct DataConfig {
  std::string dir = "data";
  std::string world;  // world spec JSON; empty selects the built-in world
  DatasetSizes sizes{500, 100, 100};
};

struct RunConfig {
  HierarchyConfig model;
  TrainConfig train;
  DataConfig data;
  std::string precision = "f32";
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  void validate() const {
    model.validate();
    train.validate();
    if (precision != "f32" && precision != "f64") throw ConfigError("precision must be \"f32\" or \"f64\"");
    if (data.sizes.train < 0 || data.sizes.val < 0 || data.sizes.test < 0)
      throw ConfigError("data.sizes entries must be non-negative");
    if (data.dir.empty()) throw ConfigError("data.dir must be set");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  j = nlohmann::json{
      {"model", r.model},
      {"train", r.train},
      {"data",
       {{"dir", r.data.dir},
        {"world", r.data.world},
        {"sizes", {{"train", r.data.sizes.train}, {"val", r.data.sizes.val}, {"test", r.data.sizes.test}}}}},
      {"precision", r.precision},
      {"seed", r.seed},
      {"out", r.out}};
}

inline void from_json(const nlohmann::json& j, RunConfig& r) {
  const nlohmann::json defaults = RunConfig{};
  detail::reject_unknown(j, defaults, "run config");
  if (j.contains("model")) r.model = j.at("model").get<HierarchyConfig>();
  if (j.contains("train")) r.train = j.at("train").get<TrainConfig>();
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, defaults.at("data"), "data config");
    detail::read_key(d, "dir", r.data.dir);
    detail::read_key(d, "world", r.data.world);
    if (d.contains("sizes")) {
      const auto& s = d.at("sizes");
      detail::reject_unknown(s, defaults.at("data").at("sizes"), "data.sizes");
      detail::read_key(s, "train", r.data.sizes.train);
      detail::read_key(s, "val", r.data.sizes.val);
      detail::read_key(s, "test", r.data.sizes.test);
    }
  }
  detail::read_key(j, "precision", r.precision);
  detail::read_key(j, "seed", r.seed);
  detail::read_key(j, "out", r.out);
}

// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
// when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + assignment + "\" is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override \"" + key + "\" descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override \"" + key + "\" descends into a non-object");
  (*node)[parts.back()] = value;
}

// Defaults < config file < --set overrides < --seed/--out flags.
inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
                                std::optional<std::string> out) {
  nlohmann::json doc = RunConfig{};
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    nlohmann::json user = nlohmann::json::parse(in, nullptr, false);
    if (user.is_discarded() || !user.is_object()) throw ConfigError(file->string() + " is not a JSON object");
    doc.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  if (out) doc["out"] = *out;
  RunConfig r = doc.get<RunConfig>();
  r.train.seed = r.seed;
  r.validate();
  return r;
}

inline WorldSpec load_world(const RunConfig& r) {
  WorldSpec w = default_world();
  if (!r.data.world.empty()) {
    std::ifstream in(r.data.world);
    if (!in) throw ConfigError("cannot open world spec " + r.data.world);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(r.data.world + " is not valid JSON");
    w = j.get<WorldSpec>();
  }
  return w;
}

inline void write_json_file(const std::filesystem::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json cmd_generate(const RunConfig& r, std::ostream& log) {
  WorldSpec w = load_world(r);
  const FeatureManifest m = manifest_of(r.model);
  w.d_m = m.d_m;
  w.d_a = m.d_a;
  w.d_r = m.d_r;
  const auto ds = build_dataset(w, m, r.data.sizes, r.seed, r.model.decoder_mode, r.model.num_choices, r.data.dir);
  nlohmann::json summary{{"dir", r.data.dir},
                         {"train_qas", ds.train.size()},
                         {"val_qas", ds.val.size()},
                         {"test_qas", ds.test.size()},
                         {"vocab_size", ds.vocab.tokens.size()},
                         {"answer_set_size", ds.vocab.answers.size()}};
  log << "generated " << summary.dump() << "\n";
  return summary;
}

template <typename S>
nlohmann::json cmd_train_typed(const RunConfig& r, std::ostream& log) {
  check_dataset_config(r.model, load_dataset_info(r.data.dir));
  const Corpus<S> corpus = load_corpus<S>(r.data.dir);
  ModelParams<S> init(r.model);
  init.init(r.seed);
  const std::filesystem::path out = r.out;
  auto result = train_two_stage(init, corpus, r.train, [&](const EpochRecord& e) {
    log << "stage " << e.stage << " epoch " << e.epoch << " loss " << e.loss << " val_acc " << e.val_acc << "\n";
  });
  write_history_csv(result.history, out / "history.csv");
  save_checkpoint(result.best, out / "checkpoint.safetensors");
  nlohmann::json metrics{{"best_val_acc", result.best_val_acc},
                         {"best_stage", result.best_stage},
                         {"best_epoch", result.best_epoch}};
  write_json_file(out / "metrics.json", metrics);
  return metrics;
}

inline nlohmann::json cmd_train(const RunConfig& r, std::ostream& log) {
  write_json_file(std::filesystem::path(r.out) / "config.json", r);
  return r.precision == "f64" ? cmd_train_typed<double>(r, log) : cmd_train_typed<float>(r, log);
}

template <typename S>
nlohmann::json cmd_eval_typed(const RunConfig& r, const std::filesystem::path& checkpoint, const std::string& split) {
  ModelParams<S> p = load_checkpoint<S>(checkpoint);
  check_dataset_config(p.config, load_dataset_info(r.data.dir));
  const Corpus<S> corpus = load_corpus<S>(r.data.dir);
  return nlohmann::json(evaluate_accuracy(p, corpus, corpus.split(split)));
}

inline nlohmann::json cmd_eval(const RunConfig& r, const std::filesystem::path& checkpoint, const std::string& split) {
  auto report = r.precision == "f64" ? cmd_eval_typed<double>(r, checkpoint, split)
                                     : cmd_eval_typed<float>(r, checkpoint, split);
  write_json_file(std::filesystem::path(r.out) / ("eval_" + split + ".json"), report);
  return report;
}

template <typename S>
nlohmann::json cmd_ablate_typed(const RunConfig& r, const std::vector<std::uint64_t>& seeds,
                                const std::vector<std::string>& variants, const std::string& split,
                                std::ostream& log) {
  check_dataset_config(r.model, load_dataset_info(r.data.dir));
  const Corpus<S> corpus = load_corpus<S>(r.data.dir);
  auto rows = run_ablation_suite<S>(r.model, r.train, corpus, seeds, ablation_rows(variants), split,
                                    [&](const std::string& v, std::uint64_t seed, const AccuracyReport& rep) {
                                      log << v << " seed " << seed << " accuracy " << rep.accuracy() << "\n";
                                    });
  return nlohmann::json{{"split", split}, {"seeds", seeds}, {"rows", rows}};
}

inline nlohmann::json cmd_ablate(const RunConfig& r, const std::vector<std::uint64_t>& seeds,
                                 const std::vector<std::string>& variants, const std::string& split, std::ostream& log) {
  auto table = r.precision == "f64" ? cmd_ablate_typed<double>(r, seeds, variants, split, log)
                                    : cmd_ablate_typed<float>(r, seeds, variants, split, log);
  write_json_file(std::filesystem::path(r.out) / "ablation.json", table);
  return table;
}

template <typename S>
nlohmann::json cmd_trace_typed(const RunConfig& r, const std::filesystem::path& checkpoint,
                               std::vector<std::string> sample_ids, const std::string& split,
                               const std::filesystem::path& out_dir) {
  ModelParams<S> p = load_checkpoint<S>(checkpoint);
  check_dataset_config(p.config, load_dataset_info(r.data.dir));
  const Corpus<S> corpus = load_corpus<S>(r.data.dir);
  const auto& samples = corpus.split(split);
  if (sample_ids.empty())
    for (std::size_t i = 0; i < std::min<std::size_t>(5, samples.size()); ++i) sample_ids.push_back(samples[i].sample_id);
  std::vector<TraceRecord> records;
  nlohmann::json paths = nlohmann::json::object();
  for (const auto& id : sample_ids) {
    auto it = std::find_if(samples.begin(), samples.end(), [&](const QASample& s) { return s.sample_id == id; });
    if (it == samples.end()) throw DataError("sample \"" + id + "\" is not in split " + split);
    TraceRecord rec = trace_sample(p, corpus.video(it->video_ref), *it);
    render_trace(rec, out_dir);
    try {
      const TopDownPath path = top_down_path(rec, p.config);
      paths[id] = {{"clip", path.clip}, {"frame", path.frame}, {"object", path.object}};
    } catch (const PathUnavailableError&) {
      paths[id] = nullptr;
    }
    records.push_back(std::move(rec));
  }
  export_traces(records, out_dir / "traces.jsonl");
  return nlohmann::json{{"records", records.size()}, {"top_down_paths", paths}};
}

inline nlohmann::json cmd_trace(const RunConfig& r, const std::filesystem::path& checkpoint,
                                const std::vector<std::string>& sample_ids, const std::string& split,
                                const std::filesystem::path& out_dir) {
  return r.precision == "f64" ? cmd_trace_typed<double>(r, checkpoint, sample_ids, split, out_dir)
                              : cmd_trace_typed<float>(r, checkpoint, sample_ids, split, out_dir);
}

// Gradient check of the configured model on one generated episode, with
// every question of that episode as a loss. Always 64-bit.
inline nlohmann::json cmd_gradcheck(const RunConfig& r, double step, std::ostream& log) {
  HierarchyConfig c = r.model;
  WorldSpec w = load_world(r);
  const FeatureManifest m = manifest_of(c);
  w.d_m = m.d_m;
  w.d_a = m.d_a;
  w.d_r = m.d_r;
  const auto ds = build_dataset(w, m, {1, 0, 0}, r.seed, c.decoder_mode, c.num_choices);
  c.vocab_size = std::max<int>(c.vocab_size, static_cast<int>(ds.vocab.tokens.size()));
  if (c.decoder_mode == DecoderMode::OpenEnded) c.answer_set_size = static_cast<int>(ds.vocab.answers.size());
  ModelParams<double> p(c);
  p.init(r.seed);
  const auto video = prepare_video<double>(ds.episodes.front().features);
  nlohmann::json per_question = nlohmann::json::object();
  double worst = 0;
  int skipped = 0, total = 0;
  for (const auto& s : ds.train) {
    auto rep = oracle::fd_gradient_check(oracle::model_loss(p, video, s), p.parameters(), step);
    per_question[s.sample_id] = rep;
    worst = std::max(worst, rep.max_rel_err());
    skipped += rep.skipped_kinks();
    total += rep.total();
    log << s.sample_id << " max_rel_err " << rep.max_rel_err() << " skipped_kinks " << rep.skipped_kinks() << "\n";
  }
  nlohmann::json report{{"max_rel_err", worst},
                        {"skipped_kinks", skipped},
                        {"checked_scalars", total},
                        {"per_question", per_question}};
  write_json_file(std::filesystem::path(r.out) / "gradcheck.json", report);
  return report;
}

}  // namespace hqga::cli
