#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "cfstab/cli.hpp"
#include "cfstab/config.hpp"
#include "cfstab/errors.hpp"
#include "cfstab/model_io.hpp"
#include "test_util.hpp"

namespace cfstab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cfstab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Small experiment so that every subcommand finishes quickly.
fs::path small_config(const fs::path& dir) {
  json doc = {{"dataset", {{"n", 200}, {"origin_count", 6}}},
              {"model", {{"layer_dims", {2, 8, 1}}}},
              {"train", {{"epochs", 15}}},
              {"ensembles", {{"loo_count", 2}, {"rs_count", 2}}},
              {"methods", {{"sns_steps", 50}}},
              {"plot", {{"resolution", 16}}}};
  testing::write_file(dir / "config.json", doc.dump(2));
  return dir / "config.json";
}

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c = config_from_json(default_config_json());
  EXPECT_EQ(c.dataset.n, 500);
  EXPECT_EQ(c.layer_dims, (std::vector<int>{2, 32, 16, 1}));
  EXPECT_DOUBLE_EQ(c.report.success_floor, 0.25);
  EXPECT_EQ(c.ensembles.rs_count, 20);
}

TEST(Config, OverrideParsesJsonValues) {
  json doc = default_config_json();
  apply_override(doc, "dataset.n=123");
  apply_override(doc, "model.layer_dims=[2,4,1]");
  apply_override(doc, "dataset.synth_kind=rings");
  EXPECT_EQ(doc["dataset"]["n"], 123);
  EXPECT_EQ(doc["model"]["layer_dims"], json({2, 4, 1}));
  EXPECT_EQ(doc["dataset"]["synth_kind"], "rings");
}

TEST(Config, OverrideErrors) {
  json doc = default_config_json();
  EXPECT_THROW(apply_override(doc, "dataset.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "dataset.n"), ConfigError);
  EXPECT_THROW(apply_override(doc, "nothing.here=2"), ConfigError);
}

TEST(Config, SeedOffsetShiftsSeedFields) {
  json doc = default_config_json();
  apply_seed_offset(doc, 100);
  const ExperimentConfig c = config_from_json(doc);
  const ExperimentConfig d = config_from_json(default_config_json());
  EXPECT_EQ(c.dataset.seed, d.dataset.seed + 100);
  EXPECT_EQ(c.dataset.split_seed, d.dataset.split_seed + 100);
  EXPECT_EQ(c.init_seed, d.init_seed + 100);
  EXPECT_EQ(c.verify.seed, d.verify.seed + 100);
  EXPECT_EQ(c.dataset.n, d.dataset.n);
}

TEST(Config, SeedOffsetFromEnvironment) {
  ::setenv("CFSTAB_SEED_OFFSET", "7", 1);
  EXPECT_EQ(seed_offset_from_env(), 7);
  ::setenv("CFSTAB_SEED_OFFSET", "seven", 1);
  EXPECT_THROW(seed_offset_from_env(), ConfigError);
  ::unsetenv("CFSTAB_SEED_OFFSET");
  EXPECT_EQ(seed_offset_from_env(), 0);
}

TEST(Config, UnknownFileKeyRejected) {
  const auto dir = testing::temp_dir("cfg_unknown");
  testing::write_file(dir / "c.json", R"({"dataset": {"rows": 10}})");
  EXPECT_THROW(load_config(dir / "c.json", {}, 0), ConfigError);
  testing::write_file(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_config(dir / "bad.json", {}, 0), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(load_config({}, {"dataset.train_frac=1.5"}, 0), ConfigError);
  EXPECT_THROW(load_config({}, {"model.layer_dims=[2]"}, 0), ConfigError);
  EXPECT_THROW(load_config({}, {"report.success_floor=2"}, 0), ConfigError);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, exit_codes::kConfig);
  EXPECT_EQ(cli({"train"}).code, exit_codes::kConfig);
  EXPECT_EQ(cli({"train", "--out", "/tmp/x", "--config", "/nonexistent.json"}).code, exit_codes::kConfig);
  EXPECT_EQ(cli({"train", "--out", "/tmp/x", "--threads", "0"}).code, exit_codes::kConfig);
  EXPECT_EQ(cli({"--help"}).code, exit_codes::kOk);
}

TEST(Cli, UnknownOverrideExitsTwo) {
  const auto dir = testing::temp_dir("cli_override");
  const CliResult r = cli({"train", "--out", dir.string(), "--override", "train.nope=3"});
  EXPECT_EQ(r.code, exit_codes::kConfig);
  EXPECT_NE(r.err.find("train.nope"), std::string::npos);
}

TEST(Cli, TrainWritesReloadableModel) {
  const auto dir = testing::temp_dir("cli_train");
  const auto cfg = small_config(dir);
  const CliResult r = cli({"train", "--config", cfg.string(), "--out", (dir / "a").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "a" / "train_log.csv"));
  EXPECT_TRUE(fs::exists(dir / "a" / "effective_config.json"));
  const Network net = load_network(dir / "a" / "model.json");
  const Network again = load_network(dir / "a" / "model.json");
  const Vec x = testing::vec({0.3, -0.8});
  EXPECT_EQ(forward(net, x)[0], forward(again, x)[0]);
  const std::string log = testing::read_file(dir / "a" / "train_log.csv");
  EXPECT_EQ(log.rfind("epoch,loss\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 16);
}

TEST(Cli, TrainIsByteIdenticalAcrossRuns) {
  const auto dir = testing::temp_dir("cli_train_twice");
  const auto cfg = small_config(dir);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(testing::read_file(dir / "a" / "model.json"), testing::read_file(dir / "b" / "model.json"));
  EXPECT_EQ(testing::read_file(dir / "a" / "train_log.csv"), testing::read_file(dir / "b" / "train_log.csv"));
}

TEST(Cli, MissingDatasetExitsThreeWithPath) {
  const auto dir = testing::temp_dir("cli_missing");
  testing::write_file(dir / "schema.json", R"({"columns": [{"name": "a", "kind": "numeric"}], "label": "y"})");
  const std::string missing = (dir / "absent.csv").string();
  const CliResult r = cli({"train", "--out", (dir / "o").string(), "--override", "dataset.source=csv", "--override",
                     "dataset.csv_path=" + missing, "--override", "dataset.schema_path=" + (dir / "schema.json").string()});
  EXPECT_EQ(r.code, exit_codes::kData);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, VerifyDefaultSweepPasses) {
  const auto dir = testing::temp_dir("cli_verify");
  const CliResult r = cli({"verify", "--out", dir.string(), "--override", "verify.prop1_trials=50", "--override",
                     "verify.theorem2_path_points=200"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  const json doc = json::parse(testing::read_file(dir / "verify_report.json"));
  EXPECT_EQ(doc.size(), 3u);
  for (const auto& v : doc) EXPECT_EQ(v["checked"], v["passed"]);
}

TEST(Cli, VerifyInjectedFaultExitsFive) {
  const auto dir = testing::temp_dir("cli_fault");
  const CliResult r = cli({"verify", "--out", dir.string(), "--override", "verify.inject_fault=true"});
  EXPECT_EQ(r.code, exit_codes::kVerification);
  EXPECT_NE(r.out.find((dir / "counterexamples.json").string()), std::string::npos);
  const json cx = json::parse(testing::read_file(dir / "counterexamples.json"));
  EXPECT_FALSE(cx["prop1"].empty());
}

TEST(Cli, VerifyZeroTrialsExitsTwo) {
  const auto dir = testing::temp_dir("cli_zero");
  EXPECT_EQ(cli({"verify", "--out", dir.string(), "--override", "verify.prop1_trials=0"}).code, exit_codes::kConfig);
}

TEST(Cli, PlotRejectsNonPlanarModel) {
  const auto dir = testing::temp_dir("cli_plot3");
  const CliResult r = cli({"plot", "--out", dir.string(), "--override", "model.layer_dims=[3,4,1]"});
  EXPECT_EQ(r.code, exit_codes::kConfig);
}

TEST(Cli, PlotSingleCell) {
  const auto dir = testing::temp_dir("cli_plot1");
  const auto cfg = small_config(dir);
  const CliResult r = cli({"plot", "--config", cfg.string(), "--out", (dir / "o").string(), "--override", "plot.resolution=1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json side = json::parse(testing::read_file(dir / "o" / "pair.json"));
  EXPECT_EQ(side["resolution"], 1);
  EXPECT_EQ(testing::read_file(dir / "o" / "base.pgm").rfind("P2\n1 1\n255\n", 0), 0u);
}

TEST(Cli, PlotPairHasDisagreementBand) {
  const auto dir = testing::temp_dir("cli_plot");
  const auto cfg = small_config(dir);
  const CliResult r = cli({"plot", "--config", cfg.string(), "--out", (dir / "o").string(), "--override",
                     "model.layer_dims=[2,32,16,1]", "--override", "train.epochs=50"});
  ASSERT_EQ(r.code, 0) << r.err;
  const double f = json::parse(testing::read_file(dir / "o" / "pair.json"))["disagreement_fraction"];
  EXPECT_GT(f, 0.0);
  EXPECT_LT(f, 0.5);
}

TEST(Cli, EvaluateThreadCountIsByteIdentical) {
  const auto dir = testing::temp_dir("cli_threads");
  const auto cfg = small_config(dir);
  ASSERT_EQ(cli({"evaluate", "--config", cfg.string(), "--out", (dir / "t1").string(), "--threads", "1"}).code, 0);
  ASSERT_EQ(cli({"evaluate", "--config", cfg.string(), "--out", (dir / "t8").string(), "--threads", "8"}).code, 0);
  for (const char* f : {"report.json", "report.csv", "report.txt", "records.jsonl", "model.json"}) {
    EXPECT_EQ(testing::read_file(dir / "t1" / f), testing::read_file(dir / "t8" / f)) << f;
  }
}

TEST(Cli, StagedPipelineMatchesSinglePass) {
  const auto dir = testing::temp_dir("cli_staged");
  const auto cfg = small_config(dir);
  const std::string c = cfg.string();
  ASSERT_EQ(cli({"evaluate", "--config", c, "--out", (dir / "full").string()}).code, 0);
  ASSERT_EQ(cli({"generate", "--config", c, "--out", (dir / "gen").string()}).code, 0);
  ASSERT_EQ(cli({"ensemble", "--config", c, "--out", (dir / "ens").string()}).code, 0);
  EXPECT_EQ(testing::read_file(dir / "gen" / "model.json"), testing::read_file(dir / "ens" / "model.json"));
  EXPECT_EQ(testing::read_file(dir / "gen" / "records.jsonl"), testing::read_file(dir / "full" / "records.jsonl"));
  const CliResult r = cli({"evaluate", "--config", c, "--out", (dir / "eval").string(), "--override",
                     "paths.model=" + (dir / "gen" / "model.json").string(), "--override",
                     "paths.records=" + (dir / "gen" / "records.jsonl").string(), "--override",
                     "paths.ensembles=" + (dir / "ens" / "ensembles").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json staged = json::parse(testing::read_file(dir / "eval" / "report.json"));
  const json full = json::parse(testing::read_file(dir / "full" / "report.json"));
  EXPECT_EQ(staged["methods"], full["methods"]);
  EXPECT_EQ(staged["regression"], full["regression"]);
}

TEST(Cli, ReportReemitsSavedReport) {
  const auto dir = testing::temp_dir("cli_report");
  const auto cfg = small_config(dir);
  ASSERT_EQ(cli({"evaluate", "--config", cfg.string(), "--out", (dir / "e").string()}).code, 0);
  const CliResult r = cli({"report", "--out", (dir / "r").string(), "--override",
                     "paths.report=" + (dir / "e" / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(testing::read_file(dir / "e" / "report.json"), testing::read_file(dir / "r" / "report.json"));
  EXPECT_EQ(testing::read_file(dir / "e" / "report.txt"), testing::read_file(dir / "r" / "report.txt"));
  EXPECT_EQ(cli({"report", "--out", (dir / "x").string()}).code, exit_codes::kConfig);
}

TEST(Cli, SeedOffsetChangesModel) {
  const auto dir = testing::temp_dir("cli_offset");
  const auto cfg = small_config(dir);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ::setenv("CFSTAB_SEED_OFFSET", "3", 1);
  const CliResult r = cli({"train", "--config", cfg.string(), "--out", (dir / "b").string()});
  ::unsetenv("CFSTAB_SEED_OFFSET");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(testing::read_file(dir / "a" / "model.json"), testing::read_file(dir / "b" / "model.json"));
  const json eff = json::parse(testing::read_file(dir / "b" / "effective_config.json"));
  EXPECT_EQ(eff["model"]["init_seed"], 3);
}

}  // namespace
}  // namespace cfstab
