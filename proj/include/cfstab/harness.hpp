#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfstab/config.hpp"
#include "cfstab/data.hpp"
#include "cfstab/generators.hpp"
#include "cfstab/geometry.hpp"
#include "cfstab/nn.hpp"

namespace cfstab {

enum class EnsembleKind { kLoo, kRs };

std::string to_string(EnsembleKind k);
EnsembleKind parse_ensemble_kind(const std::string& s);

struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::kRs;
  int count = 1;
  // RS: member k uses init seed base_seed + k. LOO: seeds the removal pool.
  std::uint64_t base_seed = 0;

  void validate() const;
};

struct Ensemble {
  EnsembleSpec spec;
  std::vector<Network> members;
  std::vector<std::size_t> removed_rows;  // LOO only, one per member
};

// RS members are trained on `train` with init seeds base_seed+1..base_seed+count.
// LOO members reuse the base init seed (base.meta.seed), each trained without
// one row of a seeded pool. The shuffle seed is config.seed in both cases.
Ensemble build_ensemble(const Network& base, const Dataset& train, const EnsembleSpec& spec,
                        const TrainConfig& config, int threads = 1);

// Fraction of members whose prediction at the counterfactual differs from the
// base prediction there.
double invalidation_rate(const CounterfactualRecord& record, const Network& base,
                         const std::vector<Network>& ensemble);

struct Regression {
  double r_squared = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};

Regression regress_cost_iv(const std::vector<std::pair<double, double>>& points);

// Rows of the report are keyed by method label: "min_l2", "min_l2+sns", ...
std::string method_label(const CounterfactualRecord& record);

struct IvStats {
  double mean = 0.0;
  double std = 0.0;  // across ensemble members of the per-member invalidation fraction
};

struct MethodStats {
  std::string method;
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  double success_rate = 0.0;
  double cost_l1_mean = 0.0, cost_l1_std = 0.0;
  double cost_l2_mean = 0.0, cost_l2_std = 0.0;
  std::map<std::string, IvStats> iv;  // keyed by ensemble kind

  bool operator==(const MethodStats&) const = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct InvalidationReport {
  std::vector<MethodStats> methods;
  std::vector<std::string> ensemble_kinds;
  std::size_t origin_count = 0;
  bool regression_ok = false;
  Regression regression;
  std::string regression_error;
  double success_floor = 0.25;
  nlohmann::json meta = nlohmann::json::object();

  const MethodStats* find(const std::string& method) const;
};

bool operator==(const InvalidationReport& a, const InvalidationReport& b);

nlohmann::json report_to_json(const InvalidationReport& report);
InvalidationReport report_from_json(const nlohmann::json& doc);

// Aggregates records against the base model and the named ensembles. Only
// successful records enter IV and cost statistics; every success_rate has
// origin_count as its denominator.
InvalidationReport aggregate(std::vector<CounterfactualRecord> records, std::size_t origin_count,
                             const Network& base, const std::map<std::string, Ensemble>& ensembles,
                             double success_floor, int threads = 1);

// Emits report.json / report.csv / report.txt into `dir` for the requested formats.
void report_emit(const InvalidationReport& report, const std::vector<std::string>& formats,
                 const std::filesystem::path& dir);
std::string report_text_table(const InvalidationReport& report);
std::string report_csv(const InvalidationReport& report);

Dataset load_experiment_dataset(const DatasetConfig& config);

struct ExperimentData {
  Dataset train;
  Dataset validation;
};
ExperimentData prepare_data(const ExperimentConfig& config);

Network train_base(const ExperimentConfig& config, const Dataset& train);

// Validation rows (in split order) whose base prediction is not the desired
// class, up to dataset.origin_count of them.
std::vector<std::size_t> select_origins(const Network& base, const Dataset& validation,
                                        const DatasetConfig& config);

// Base-method records for every origin, followed by SNS refinements of the
// successful ones when enabled. Sorted by (method label, origin index).
std::vector<CounterfactualRecord> generate_counterfactuals(const ExperimentConfig& config,
                                                           const Network& base,
                                                           const Dataset& train,
                                                           const Dataset& validation,
                                                           const std::vector<std::size_t>& origins,
                                                           int threads = 1);

std::map<std::string, Ensemble> build_ensembles(const ExperimentConfig& config, const Network& base,
                                                const Dataset& train, int threads = 1);

struct ExperimentResult {
  InvalidationReport report;
  Network base;
  std::vector<CounterfactualRecord> records;
  std::map<std::string, Ensemble> ensembles;
};

// [d, hidden, 1] network with biases held at zero, trained on `data`.
Network train_homogeneous(const Dataset& data, int hidden, std::uint64_t seed, int epochs);

// Sweeps of the gradient inequality, the boundary construction and the
// influence bound, sized by `config`. Random nets are seeded from config.seed.
std::vector<VerifierReport> run_verify_suite(const VerifyConfig& config, int threads = 1);

// Full pipeline. Failures are rethrown as StageError naming the stage.
ExperimentResult run_experiment(const ExperimentConfig& config, int threads = 1);

}  // namespace cfstab
