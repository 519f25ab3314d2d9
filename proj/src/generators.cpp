#include "cfstab/generators.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/model_io.hpp"
#include "cfstab/rng.hpp"

namespace cfstab {

std::string to_string(Method m) {
  switch (m) {
    case Method::kMinL1: return "min_l1";
    case Method::kMinL2: return "min_l2";
    case Method::kMinEpsPgd: return "min_eps_pgd";
    case Method::kSns: return "sns";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  if (s == "min_l1") return Method::kMinL1;
  if (s == "min_l2") return Method::kMinL2;
  if (s == "min_eps_pgd") return Method::kMinEpsPgd;
  if (s == "sns") return Method::kSns;
  throw ConfigError("unknown counterfactual method '" + s + "'");
}

namespace {

int class_count(const Network& net) { return net.output_dim() == 1 ? 2 : net.output_dim(); }

void check_target(const Network& net, int target) {
  if (target < 0 || target >= class_count(net)) {
    std::ostringstream msg;
    msg << "target class " << target << " out of range for a " << class_count(net) << "-class network";
    throw ConfigError(msg.str());
  }
}

void set_costs(CounterfactualRecord& r) {
  const Vec diff = r.counterfactual - r.origin;
  r.cost_l1 = diff.lpNorm<1>();
  r.cost_l2 = diff.norm();
}

CounterfactualRecord base_record(const Network& net, const Vec& x, int target, Method method) {
  CounterfactualRecord r;
  r.origin = x;
  r.counterfactual = x;
  r.method = method;
  r.target_class = target;
  r.generating_model = model_fingerprint(net);
  return r;
}

// Hinge margin max_{j != t} f_j - f_t + kappa, with the logit weights of its
// gradient. Single-logit heads are read as logits (0, f).
struct Margin {
  double value;
  Vec weights;
};

Margin hinge_margin(const Vec& logits, int target, double kappa) {
  if (logits.size() == 1) {
    const double sign = target == 1 ? -1.0 : 1.0;
    return {sign * logits[0] + kappa, Vec::Constant(1, sign)};
  }
  Eigen::Index other = -1;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (j == target) continue;
    if (other < 0 || logits[j] > logits[other]) other = j;
  }
  Vec w = Vec::Zero(logits.size());
  w[other] = 1.0;
  w[target] = -1.0;
  return {logits[other] - logits[target] + kappa, w};
}

// Gradient of log score(x) with respect to x; only its direction is used.
Vec log_score_grad(const Network& net, const Vec& x, int target) {
  const Vec logits = forward(net, x);
  if (logits.size() == 1) return input_vjp(net, x, Vec::Constant(1, target == 1 ? 1.0 : -1.0));
  const double top = logits.maxCoeff();
  Vec p = (logits.array() - top).exp();
  p /= p.sum();
  Vec w = -p;
  w[target] += 1.0;
  return input_vjp(net, x, w);
}

Vec jitter(const Vec& x, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  Vec out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += 1e-3 * rng.uniform(-1.0, 1.0);
  return out;
}

Vec soft_threshold(const Vec& v, double threshold) {
  Vec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]) - threshold;
    out[i] = a > 0.0 ? std::copysign(a, v[i]) : 0.0;
  }
  return out;
}

Vec project_l2_ball(const Vec& p, const Vec& center, double radius) {
  const Vec diff = p - center;
  const double norm = diff.norm();
  if (norm <= radius) return p;
  if (radius <= 0.0) return center;
  return center + diff * (radius / norm);
}

}  // namespace

SnsConfig SnsConfig::from_pgd_max_eps(double max_eps, int steps, int grid_points) {
  SnsConfig c;
  c.delta = 0.8 * max_eps;
  c.steps = steps;
  c.grid_points = grid_points;
  c.step_size = 2.0 * c.delta / steps;
  return c;
}

void SnsConfig::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("sns.delta must be non-negative");
  if (grid_points < 2) throw ConfigError("sns.grid_points must be >= 2");
  if (steps < 0) throw ConfigError("sns.steps must be non-negative");
  if (!(step_size > 0.0)) throw ConfigError("sns.step_size must be positive");
}

double multiclass_score(const Network& net, const Vec& x, int target) {
  check_target(net, target);
  const Vec logits = forward(net, x);
  if (logits.size() == 1) return target == 1 ? sigmoid(logits[0]) : sigmoid(-logits[0]);
  const double top = logits.maxCoeff();
  const Eigen::ArrayXd e = (logits.array() - top).exp();
  return e[target] / e.sum();
}

Vec multiclass_score_grad(const Network& net, const Vec& x, int target) {
  check_target(net, target);
  const Vec logits = forward(net, x);
  if (logits.size() == 1) {
    const double sign = target == 1 ? 1.0 : -1.0;
    const double s = sigmoid(sign * logits[0]);
    return input_vjp(net, x, Vec::Constant(1, sign * s * (1.0 - s)));
  }
  const double top = logits.maxCoeff();
  Vec p = (logits.array() - top).exp();
  p /= p.sum();
  Vec w = -p[target] * p;
  w[target] += p[target];
  return input_vjp(net, x, w);
}

double sns_objective(const Network& net, const Vec& x, int target, int grid_points) {
  double sum = 0.0;
  for (int k = 1; k <= grid_points; ++k) {
    const double t = static_cast<double>(k) / grid_points;
    sum += multiclass_score(net, t * x, target);
  }
  return sum / grid_points;
}

Vec sns_objective_grad(const Network& net, const Vec& x, int target, int grid_points) {
  Vec g = Vec::Zero(x.size());
  for (int k = 1; k <= grid_points; ++k) {
    const double t = static_cast<double>(k) / grid_points;
    g += t * multiclass_score_grad(net, t * x, target);
  }
  return g / grid_points;
}

CounterfactualRecord gen_elastic_net(const Network& net, const Vec& x, int target,
                                     const ElasticNetConfig& config) {
  check_target(net, target);
  if (predict(net, x) == target) throw ConfigError("origin is already classified as the target class");
  if (!(config.confidence > 0.0 && config.confidence < 1.0)) {
    throw ConfigError("elastic-net confidence must lie in (0, 1)");
  }
  if (config.max_steps < 1 || config.binary_search_steps < 1) {
    throw ConfigError("elastic-net max_steps and binary_search_steps must be positive");
  }
  const Method method = config.beta > 0.0 ? Method::kMinL1 : Method::kMinL2;
  CounterfactualRecord record = base_record(net, x, target, method);
  const double kappa = std::log(config.confidence / (1.0 - config.confidence));

  Vec start = x;
  {
    const Margin margin = hinge_margin(forward(net, x), target, kappa);
    if (input_vjp(net, x, margin.weights).isZero(0.0)) {
      start = jitter(x, config.jitter_seed);
      record.jittered = true;
    }
  }

  double best_cost = std::numeric_limits<double>::infinity();
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double c = config.initial_const;
  int total = 0;
  for (int search = 0; search < config.binary_search_steps; ++search) {
    Vec cur = start;
    bool found = false;
    for (int k = 0; k < config.max_steps; ++k) {
      const double lr =
          config.step_size * std::sqrt(1.0 - static_cast<double>(k) / config.max_steps);
      const Margin margin = hinge_margin(forward(net, cur), target, kappa);
      Vec grad = 2.0 * (cur - x);
      if (margin.value > 0.0) grad += c * input_vjp(net, cur, margin.weights);
      cur = x + soft_threshold(cur - lr * grad - x, lr * config.beta);
      ++total;
      if (predict(net, cur) == target) {
        const Vec diff = cur - x;
        const double cost = config.beta * diff.lpNorm<1>() + diff.squaredNorm();
        found = true;
        if (cost < best_cost) {
          best_cost = cost;
          record.counterfactual = cur;
          if (!record.success) record.iterations_used = total;
          record.success = true;
        }
      }
    }
    if (found) {
      hi = std::min(hi, c);
      c = 0.5 * (lo + hi);
    } else {
      lo = std::max(lo, c);
      c = std::isinf(hi) ? 10.0 * c : 0.5 * (lo + hi);
    }
  }
  if (!record.success) record.iterations_used = total;
  set_costs(record);
  return record;
}

CounterfactualRecord gen_pgd_min_eps(const Network& net, const Vec& x, int target,
                                     const PgdConfig& config) {
  check_target(net, target);
  if (predict(net, x) == target) throw ConfigError("origin is already classified as the target class");
  if (!(config.max_eps > 0.0)) throw ConfigError("pgd max_eps must be positive");
  if (config.n_interp < 1 || config.max_steps < 1) {
    throw ConfigError("pgd n_interp and max_steps must be positive");
  }
  CounterfactualRecord record = base_record(net, x, target, Method::kMinEpsPgd);
  Vec start = x;
  if (log_score_grad(net, x, target).isZero(0.0)) {
    start = jitter(x, config.jitter_seed);
    record.jittered = true;
  }

  int total = 0;
  for (int k = 1; k <= config.n_interp; ++k) {
    const double eps = config.max_eps * k / config.n_interp;
    const double step = 2.0 * eps / config.max_steps;
    Vec cur = project_l2_ball(start, x, eps);
    for (int s = 0; s < config.max_steps; ++s) {
      const Vec g = log_score_grad(net, cur, target);
      const double norm = g.norm();
      if (norm == 0.0) break;
      cur = project_l2_ball(cur + (step / norm) * g, x, eps);
      ++total;
      if (predict(net, cur) == target) {
        record.counterfactual = cur;
        record.success = true;
        record.iterations_used = total;
        record.ball_center = x;
        record.ball_radius = eps;
        set_costs(record);
        return record;
      }
    }
  }
  record.iterations_used = total;
  set_costs(record);
  return record;
}

CounterfactualRecord gen_sns(const Network& net, const CounterfactualRecord& start,
                             const SnsConfig& config) {
  if (!start.success) throw ConfigError("SNS needs a successful seed counterfactual");
  config.validate();
  const int target = start.target_class;
  check_target(net, target);
  const Vec& center = start.counterfactual;

  CounterfactualRecord record = base_record(net, start.origin, target, Method::kSns);
  record.origin_index = start.origin_index;
  record.base_method = start.method;
  record.ball_center = center;
  record.ball_radius = config.delta;

  double best = -std::numeric_limits<double>::infinity();
  if (predict(net, center) == target) {
    best = sns_objective(net, center, target, config.grid_points);
    record.counterfactual = center;
    record.success = true;
  }
  Vec cur = center;
  for (int s = 0; s < config.steps; ++s) {
    const Vec g = sns_objective_grad(net, cur, target, config.grid_points);
    const double norm = g.norm();
    if (norm == 0.0) break;
    cur = project_l2_ball(cur + (config.step_size / norm) * g, center, config.delta);
    if (predict(net, cur) != target) continue;
    const double value = sns_objective(net, cur, target, config.grid_points);
    if (value > best) {
      best = value;
      record.counterfactual = cur;
      record.success = true;
      record.iterations_used = s + 1;
    }
  }
  set_costs(record);
  return record;
}

void validate_record(const CounterfactualRecord& record, const Network& base) {
  if (record.origin.size() != record.counterfactual.size()) {
    throw VerificationError("record origin and counterfactual differ in dimension");
  }
  const Vec diff = record.counterfactual - record.origin;
  if (std::abs(diff.lpNorm<1>() - record.cost_l1) > 1e-12 ||
      std::abs(diff.norm() - record.cost_l2) > 1e-12) {
    throw VerificationError("record costs do not match its vectors");
  }
  if (record.success && predict(base, record.counterfactual) != record.target_class) {
    std::ostringstream msg;
    msg << "successful " << to_string(record.method) << " record for origin " << record.origin_index
        << " is not classified as its target by the base model";
    throw VerificationError(msg.str());
  }
}

namespace {

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec json_vec(const nlohmann::json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a.at(i).get<double>();
  return v;
}

}  // namespace

nlohmann::json record_to_json(const CounterfactualRecord& r) {
  nlohmann::json doc{
      {"origin_index", r.origin_index},
      {"origin", vec_json(r.origin)},
      {"counterfactual", vec_json(r.counterfactual)},
      {"method", to_string(r.method)},
      {"base_method", r.base_method ? nlohmann::json(to_string(*r.base_method)) : nlohmann::json(nullptr)},
      {"target_class", r.target_class},
      {"success", r.success},
      {"cost_l1", r.cost_l1},
      {"cost_l2", r.cost_l2},
      {"iterations_used", r.iterations_used},
      {"generating_model", r.generating_model},
      {"ball_center", r.ball_center ? vec_json(*r.ball_center) : nlohmann::json(nullptr)},
      {"ball_radius", r.ball_radius ? nlohmann::json(*r.ball_radius) : nlohmann::json(nullptr)},
      {"jittered", r.jittered},
  };
  return doc;
}

CounterfactualRecord record_from_json(const nlohmann::json& doc) {
  CounterfactualRecord r;
  try {
    r.origin_index = doc.at("origin_index").get<std::size_t>();
    r.origin = json_vec(doc.at("origin"));
    r.counterfactual = json_vec(doc.at("counterfactual"));
    r.method = parse_method(doc.at("method").get<std::string>());
    if (!doc.at("base_method").is_null()) r.base_method = parse_method(doc.at("base_method").get<std::string>());
    r.target_class = doc.at("target_class").get<int>();
    r.success = doc.at("success").get<bool>();
    r.cost_l1 = doc.at("cost_l1").get<double>();
    r.cost_l2 = doc.at("cost_l2").get<double>();
    r.iterations_used = doc.at("iterations_used").get<int>();
    r.generating_model = doc.at("generating_model").get<std::string>();
    if (!doc.at("ball_center").is_null()) r.ball_center = json_vec(doc.at("ball_center"));
    if (!doc.at("ball_radius").is_null()) r.ball_radius = doc.at("ball_radius").get<double>();
    r.jittered = doc.value("jittered", false);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed counterfactual record: ") + e.what());
  }
  return r;
}

void write_records_jsonl(const std::vector<CounterfactualRecord>& records,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<CounterfactualRecord> read_records_jsonl(const std::filesystem::path& path,
                                                     const Network* base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<CounterfactualRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("bad record line in " + path.string() + ": " + e.what());
    }
    out.push_back(record_from_json(doc));
    if (base) validate_record(out.back(), *base);
  }
  return out;
}

}  // namespace cfstab
