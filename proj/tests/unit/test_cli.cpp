// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "hqga/cli.hpp"
#include "helpers.hpp"

using namespace hqga;
using hqga::testing::temp_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Runs the CLI with stdout/stderr captured to `log`; returns the exit code.
int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(HQGA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small model and dataset so that a full train/eval cycle takes seconds.
std::string tiny_flags(const std::filesystem::path& dir) {
  return "--set model.K=2 model.L=8 model.gamma=0.25 model.N=3 model.d=8 model.d_m=8 model.d_a=8 model.d_r=8 "
         "model.d_e=8 data.sizes.train=6 data.sizes.val=3 data.sizes.test=2 train.max_epochs=2 "
         "train.stage2_epochs=1 train.batch_size=4 data.dir=" +
         (dir / "data").string() + " --out " + (dir / "run").string();
}

}  // namespace

TEST(ResolveConfig, DefaultsWhenNothingGiven) {
  const auto r = cli::resolve_config(std::nullopt, {}, std::nullopt, std::nullopt);
  EXPECT_EQ(nlohmann::json(r), nlohmann::json(cli::RunConfig{}));
}

TEST(ResolveConfig, FileThenOverridesThenFlags) {
  const auto dir = temp_dir("cli_precedence");
  cli::write_json_file(dir / "c.json", {{"seed", 4}, {"model", {{"d", 32}, {"H", 3}}}, {"out", "from_file"}});
  const auto r = cli::resolve_config(dir / "c.json", {"model.d=16", "seed=5"}, 9, std::nullopt);
  EXPECT_EQ(r.model.d, 16);   // override beats file
  EXPECT_EQ(r.model.H, 3);    // file beats default
  EXPECT_EQ(r.seed, 9u);      // flag beats override
  EXPECT_EQ(r.train.seed, 9u);
  EXPECT_EQ(r.out, "from_file");
}

TEST(ResolveConfig, UnknownKeysAreConfigErrors) {
  const auto dir = temp_dir("cli_unknown");
  cli::write_json_file(dir / "c.json", {{"model", {{"depth", 3}}}});
  EXPECT_THROW(cli::resolve_config(dir / "c.json", {}, std::nullopt, std::nullopt), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {"train.momentum=0.9"}, std::nullopt, std::nullopt), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {"colour=red"}, std::nullopt, std::nullopt), ConfigError);
}

TEST(ResolveConfig, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(cli::resolve_config(std::nullopt, {"precision=f16"}, std::nullopt, std::nullopt), ConfigError);
  EXPECT_THROW(cli::resolve_config(std::nullopt, {"model.gamma=1.5"}, std::nullopt, std::nullopt), ConfigError);
  EXPECT_THROW(cli::resolve_config(temp_dir("cli_nofile") / "absent.json", {}, std::nullopt, std::nullopt),
               ConfigError);
}

TEST(ApplyOverride, ParsesJsonAndFallsBackToString) {
  nlohmann::json doc = nlohmann::json::object();
  cli::apply_override(doc, "a.b=3");
  cli::apply_override(doc, "a.c=true");
  cli::apply_override(doc, "name=plain text");
  EXPECT_EQ(doc["a"]["b"], 3);
  EXPECT_EQ(doc["a"]["c"], true);
  EXPECT_EQ(doc["name"], "plain text");
  EXPECT_THROW(cli::apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(cli::apply_override(doc, "=3"), ConfigError);
  EXPECT_THROW(cli::apply_override(doc, "name.sub=1"), ConfigError);
}

TEST(CliExitCodes, ConfigErrorsExitTwo) {
  const auto dir = temp_dir("cli_exit2");
  EXPECT_EQ(run_cli("generate --set model.bogus=1", dir / "a.log"), 2);
  EXPECT_EQ(run_cli("generate --set model.d=0", dir / "b.log"), 2);
  EXPECT_EQ(run_cli("frobnicate", dir / "c.log"), 2);
  EXPECT_EQ(run_cli("", dir / "d.log"), 2);
  EXPECT_NE(slurp(dir / "a.log").find("config error"), std::string::npos);
}

TEST(CliExitCodes, MissingDatasetExitsThree) {
  const auto dir = temp_dir("cli_exit3");
  EXPECT_EQ(run_cli("train " + tiny_flags(dir), dir / "train.log"), 3);
  EXPECT_NE(slurp(dir / "train.log").find("data error"), std::string::npos);
}

TEST(CliExitCodes, NonFiniteLearningRateDivergesWithFour) {
  const auto dir = temp_dir("cli_exit4");
  ASSERT_EQ(run_cli("generate " + tiny_flags(dir), dir / "gen.log"), 0);
  EXPECT_EQ(run_cli("train " + tiny_flags(dir) + " --set train.lr_stage1=1e300 train.lr_stage2=1e300",
                    dir / "train.log"),
            4);
}

TEST(CliWorkflow, GenerateEchoesConfigAndIsDeterministic) {
  const auto a = temp_dir("cli_gen_a"), b = temp_dir("cli_gen_b");
  ASSERT_EQ(run_cli("generate --seed 3 " + tiny_flags(a), a / "gen.log"), 0);
  ASSERT_EQ(run_cli("generate --seed 3 " + tiny_flags(b), b / "gen.log"), 0);
  EXPECT_NE(slurp(a / "gen.log").find("resolved config: "), std::string::npos);
  int files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a / "data")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a / "data");
    EXPECT_EQ(slurp(entry.path()), slurp(b / "data" / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 0);
}

TEST(CliWorkflow, TrainThenEvalReproducesBestValAccuracy) {
  const auto dir = temp_dir("cli_train");
  ASSERT_EQ(run_cli("generate " + tiny_flags(dir), dir / "gen.log"), 0);
  ASSERT_EQ(run_cli("train --set precision=f64 " + tiny_flags(dir), dir / "train.log"), 0);
  for (const char* f : {"config.json", "history.csv", "checkpoint.safetensors", "metrics.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  EXPECT_EQ(read_history_csv(dir / "run" / "history.csv").size(), 3u);

  ASSERT_EQ(run_cli("eval --split val --set precision=f64 " + tiny_flags(dir), dir / "eval.log"), 0);
  const auto metrics = nlohmann::json::parse(slurp(dir / "run" / "metrics.json"));
  const auto report = nlohmann::json::parse(slurp(dir / "run" / "eval_val.json"));
  EXPECT_NEAR(report.at("accuracy").get<double>(), metrics.at("best_val_acc").get<double>(), 1e-12);

  ASSERT_EQ(run_cli("trace --split val --set precision=f64 " + tiny_flags(dir), dir / "trace.log"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "traces" / "traces.jsonl"));
}

TEST(CliWorkflow, GradcheckPassesOnTinyModel) {
  const auto dir = temp_dir("cli_grad");
  EXPECT_EQ(run_cli("gradcheck --set model.M=4 " + tiny_flags(dir), dir / "grad.log"), 0);
  const auto report = nlohmann::json::parse(slurp(dir / "run" / "gradcheck.json"));
  EXPECT_LE(report.at("max_rel_err").get<double>(), 1e-4);
}
