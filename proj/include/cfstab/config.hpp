#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfstab/generators.hpp"
#include "cfstab/geometry.hpp"
#include "cfstab/nn.hpp"

namespace cfstab {

struct DatasetConfig {
  std::string source = "synth";  // "synth" or "csv"
  std::string synth_kind = "blobs";
  int n = 500;
  double noise = 0.35;
  std::uint64_t seed = 0;
  std::string csv_path;
  std::string schema_path;
  double train_frac = 0.8;
  std::uint64_t split_seed = 1;
  int origin_count = 50;
  int desired_class = 1;
};

struct MethodsConfig {
  bool min_l1 = true;
  bool min_l2 = true;
  bool pgd = true;
  bool sns = true;
  ElasticNetConfig elastic_net;
  // 0 selects the median l2 norm of the training inputs.
  double pgd_max_eps = 0.0;
  int pgd_n_interp = 10;
  int pgd_max_steps = 100;
  double sns_delta_factor = 0.8;  // delta = factor * pgd max_eps
  int sns_steps = 200;
  int sns_grid_points = 10;
};

struct EnsembleConfig {
  int loo_count = 20;
  int rs_count = 20;
  std::uint64_t loo_seed = 7;  // drives the removal pool
};

struct ReportConfig {
  double success_floor = 0.25;
  std::vector<std::string> formats{"json", "csv", "text"};
};

struct VerifyConfig {
  int prop1_nets = 10;
  int prop1_trials = 100;
  int theorem1_nets = 5;
  int theorem1_points = 10;
  int theorem1_epochs = 30;
  int theorem1_directions = 64;
  int theorem2_nets = 5;
  int theorem2_trials = 20;
  int theorem2_doi_samples = 50;
  int theorem2_path_points = 1000;
  double theorem2_delta_ratio = 0.5;  // delta = ratio * |w|
  std::uint64_t seed = 11;
  // Test-only: run the gradient check with an inverted ReLU mask on a fixed
  // fixture network. Must produce violations.
  bool inject_fault = false;
};

struct PlotConfig {
  int resolution = 64;
  BoundingBox bbox;
};

struct PathsConfig {
  std::string model;
  std::string records;
  std::string ensembles;
  std::string report;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<int> layer_dims{2, 32, 16, 1};
  std::uint64_t init_seed = 0;
  TrainConfig train;
  MethodsConfig methods;
  EnsembleConfig ensembles;
  ReportConfig report;
  VerifyConfig verify;
  PlotConfig plot;
  PathsConfig paths;
  // Effective configuration as JSON, after defaults, overrides and seed offset.
  nlohmann::json effective;
};

nlohmann::json default_config_json();

// `key=value` with a dotted key that must exist in `doc`. The value is parsed
// as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Adds `offset` to every integer field whose key ends in "seed".
void apply_seed_offset(nlohmann::json& doc, std::int64_t offset);

// Reads CFSTAB_SEED_OFFSET; 0 when unset. ConfigError when not an integer.
std::int64_t seed_offset_from_env();

// Defaults, then the file (if any), then overrides, then the seed offset.
// Unknown keys in the file are rejected.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides, std::int64_t seed_offset);
ExperimentConfig config_from_json(const nlohmann::json& doc);

}  // namespace cfstab
