#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfstab/nn.hpp"

namespace cfstab {

enum class Method { kMinL1, kMinL2, kMinEpsPgd, kSns };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct CounterfactualRecord {
  std::size_t origin_index = 0;
  Vec origin;
  Vec counterfactual;
  Method method = Method::kMinL2;
  std::optional<Method> base_method;  // set on SNS refinements
  int target_class = 1;
  bool success = false;
  double cost_l1 = 0.0;
  double cost_l2 = 0.0;
  int iterations_used = 0;
  std::string generating_model;
  // Search ball the counterfactual is confined to: (origin, eps_c) for PGD,
  // (seed counterfactual, delta) for SNS.
  std::optional<Vec> ball_center;
  std::optional<double> ball_radius;
  bool jittered = false;
};

struct ElasticNetConfig {
  double beta = 1.0;         // 1.0 for min-l1, 0.0 for min-l2
  double confidence = 0.5;   // kappa = logit(confidence)
  int max_steps = 1000;
  double step_size = 0.01;
  // Weight on the classification term, refined by bisection as in EAD.
  double initial_const = 1.0;
  int binary_search_steps = 5;
  std::uint64_t jitter_seed = 0;
};

struct PgdConfig {
  double max_eps = 1.0;
  int n_interp = 10;
  int max_steps = 100;
  std::uint64_t jitter_seed = 0;
};

struct SnsConfig {
  double delta = 1.0;  // radius of the search ball around the seed counterfactual
  int steps = 200;
  int grid_points = 10;
  double step_size = 0.01;

  // Default recipe: delta = 0.8 * max_eps, step = 2 * delta / steps.
  static SnsConfig from_pgd_max_eps(double max_eps, int steps = 200, int grid_points = 10);
  void validate() const;
};

// m == 1: sigmoid(f) for target 1, 1 - sigmoid(f) for target 0.
// m > 1: softmax probability of the target class.
double multiclass_score(const Network& net, const Vec& x, int target);
Vec multiclass_score_grad(const Network& net, const Vec& x, int target);

// Objective maximised by SNS: (1/G) sum_{k=1..G} score(k/G * x).
double sns_objective(const Network& net, const Vec& x, int target, int grid_points);
Vec sns_objective_grad(const Network& net, const Vec& x, int target, int grid_points);

CounterfactualRecord gen_elastic_net(const Network& net, const Vec& x, int target,
                                     const ElasticNetConfig& config);

CounterfactualRecord gen_pgd_min_eps(const Network& net, const Vec& x, int target,
                                     const PgdConfig& config);

CounterfactualRecord gen_sns(const Network& net, const CounterfactualRecord& start,
                             const SnsConfig& config);

// Throws VerificationError if a successful record is not classified as its
// target, or if stored costs disagree with the vectors.
void validate_record(const CounterfactualRecord& record, const Network& base);

nlohmann::json record_to_json(const CounterfactualRecord& record);
CounterfactualRecord record_from_json(const nlohmann::json& doc);

void write_records_jsonl(const std::vector<CounterfactualRecord>& records,
                         const std::filesystem::path& path);
// When `base` is given every record is validated against it on read.
std::vector<CounterfactualRecord> read_records_jsonl(const std::filesystem::path& path,
                                                     const Network* base = nullptr);

}  // namespace cfstab
