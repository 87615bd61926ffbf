// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// hqga: generate | train | eval | ablate | trace | gradcheck
//
// Exit codes: 0 ok, 1 gradient check above tolerance, 2 config error,
// 3 data error, 4 divergence.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hqga/cli.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run config JSON file");
  cmd->add_option("--set", f.overrides, "dotted key=value override (repeatable)")->take_all();
  cmd->add_option("--seed", f.seed, "seed for data generation, initialization and data order");
  cmd->add_option("--out", f.out, "output directory");
}

hqga::cli::RunConfig resolve(const CommonFlags& f) {
  std::optional<std::filesystem::path> file;
  if (!f.config.empty()) file = f.config;
  auto r = hqga::cli::resolve_config(file, f.overrides, f.seed, f.out);
  std::cout << "resolved config: " << nlohmann::json(r).dump() << "\n";
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical query-guided graph attention for video QA"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string checkpoint, split = "val", samples_csv, variants_csv, seeds_csv = "0,1,2";
  double step = 1e-5;

  auto* gen = app.add_subcommand("generate", "build a synthetic dataset in data.dir");
  auto* train = app.add_subcommand("train", "two-stage training; writes history.csv and checkpoint.safetensors");
  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a split");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation variants over several seeds");
  auto* trace = app.add_subcommand("trace", "export attention traces and render them as PNG");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check of the configured model");
  for (auto* c : {gen, train, eval, ablate, trace, grad}) add_common(c, flags);
  for (auto* c : {eval, trace}) {
    c->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/checkpoint.safetensors)");
    c->add_option("--split", split, "train, val or test");
  }
  trace->add_option("--samples", samples_csv, "comma-separated sample ids (default: first five of the split)");
  ablate->add_option("--seeds", seeds_csv, "comma-separated seeds");
  ablate->add_option("--variants", variants_csv, "comma-separated variant names (default: all rows)");
  ablate->add_option("--split", split, "split to evaluate on");
  grad->add_option("--step", step, "finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto split_csv = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(item);
    return out;
  };

  try {
    const auto r = resolve(flags);
    const std::filesystem::path ckpt =
        checkpoint.empty() ? std::filesystem::path(r.out) / "checkpoint.safetensors" : std::filesystem::path(checkpoint);
    if (gen->parsed()) {
      hqga::cli::cmd_generate(r, std::cout);
    } else if (train->parsed()) {
      std::cout << hqga::cli::cmd_train(r, std::cout).dump() << "\n";
    } else if (eval->parsed()) {
      std::cout << hqga::cli::cmd_eval(r, ckpt, split).dump(2) << "\n";
    } else if (ablate->parsed()) {
      std::vector<std::uint64_t> seeds;
      for (const auto& s : split_csv(seeds_csv)) seeds.push_back(std::stoull(s));
      auto table = hqga::cli::cmd_ablate(r, seeds, split_csv(variants_csv), split, std::cout);
      for (const auto& row : table["rows"])
        std::cout << row["name"].get<std::string>() << ": " << row["median_accuracy"].get<double>() << "\n";
    } else if (trace->parsed()) {
      const auto out_dir = std::filesystem::path(r.out) / "traces";
      std::cout << hqga::cli::cmd_trace(r, ckpt, split_csv(samples_csv), split, out_dir).dump(2) << "\n";
    } else if (grad->parsed()) {
      const auto report = hqga::cli::cmd_gradcheck(r, step, std::cout);
      const bool ok = report["max_rel_err"].get<double>() <= 1e-4;
      std::cout << "gradcheck " << (ok ? "PASS" : "FAIL") << " max_rel_err " << report["max_rel_err"] << "\n";
      return ok ? 0 : 1;
    }
    return 0;
  } catch (const hqga::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hqga::PathUnavailableError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hqga::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const hqga::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
