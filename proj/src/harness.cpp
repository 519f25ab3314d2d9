#include "cfstab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/model_io.hpp"
#include "cfstab/parallel.hpp"
#include "cfstab/rng.hpp"
#include "cfstab/train.hpp"

namespace cfstab {

std::string to_string(EnsembleKind k) { return k == EnsembleKind::kLoo ? "loo" : "rs"; }

EnsembleKind parse_ensemble_kind(const std::string& s) {
  if (s == "loo" || s == "LOO") return EnsembleKind::kLoo;
  if (s == "rs" || s == "RS") return EnsembleKind::kRs;
  throw ConfigError("unknown ensemble kind '" + s + "'");
}

void EnsembleSpec::validate() const {
  if (count < 1) throw ConfigError("ensemble count must be >= 1");
}

Ensemble build_ensemble(const Network& base, const Dataset& train, const EnsembleSpec& spec,
                        const TrainConfig& config, int threads) {
  spec.validate();
  Ensemble out;
  out.spec = spec;
  const auto count = static_cast<std::size_t>(spec.count);
  out.members.resize(count);
  if (spec.kind == EnsembleKind::kRs) {
    parallel_for(count, threads, [&](std::size_t k) {
      out.members[k] = cfstab::train(init_network(base.spec, spec.base_seed + k + 1), train, config);
    });
  } else {
    out.removed_rows = loo_pool(train, count, spec.base_seed);
    parallel_for(count, threads, [&](std::size_t k) {
      out.members[k] =
          cfstab::train(init_network(base.spec, base.meta.seed), without_row(train, out.removed_rows[k]),
                        config);
    });
  }
  return out;
}

double invalidation_rate(const CounterfactualRecord& record, const Network& base,
                         const std::vector<Network>& ensemble) {
  if (!record.success) throw ConfigError("invalidation rate is undefined for a failed record");
  if (ensemble.empty()) throw ConfigError("invalidation rate needs a non-empty ensemble");
  const int reference = predict(base, record.counterfactual);
  std::size_t flipped = 0;
  for (const auto& m : ensemble) flipped += predict(m, record.counterfactual) != reference;
  return static_cast<double>(flipped) / static_cast<double>(ensemble.size());
}

Regression regress_cost_iv(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw NumericError("cost/IV regression needs at least 2 points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw NumericError("cost/IV regression is undefined: cost has zero variance");
  Regression r;
  r.points = points.size();
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  if (syy > 0.0) {
    double ss_res = 0.0;
    for (const auto& [x, y] : points) {
      const double e = y - (r.intercept + r.slope * x);
      ss_res += e * e;
    }
    r.r_squared = 1.0 - ss_res / syy;
  }
  return r;
}

std::string method_label(const CounterfactualRecord& record) {
  if (record.method == Method::kSns && record.base_method) return to_string(*record.base_method) + "+sns";
  return to_string(record.method);
}

namespace {

int label_rank(const std::string& label) {
  static const std::vector<std::string> order{"min_l1",      "min_l1+sns", "min_l2", "min_l2+sns",
                                              "min_eps_pgd", "min_eps_pgd+sns", "sns"};
  const auto it = std::find(order.begin(), order.end(), label);
  return static_cast<int>(it - order.begin());
}

bool label_less(const std::string& a, const std::string& b) {
  const int ra = label_rank(a), rb = label_rank(b);
  return ra != rb ? ra < rb : a < b;
}

void sort_records(std::vector<CounterfactualRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    const std::string la = method_label(a), lb = method_label(b);
    if (la != lb) return label_less(la, lb);
    return a.origin_index < b.origin_index;
  });
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

nlohmann::json regression_json(const InvalidationReport& r) {
  if (!r.regression_ok) return {{"ok", false}, {"error", r.regression_error}};
  return {{"ok", true},
          {"r_squared", r.regression.r_squared},
          {"slope", r.regression.slope},
          {"intercept", r.regression.intercept},
          {"points", r.regression.points}};
}

template <typename F>
auto run_stage(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), exit_code(e));
  }
}

}  // namespace

const MethodStats* InvalidationReport::find(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return &m;
  }
  return nullptr;
}

nlohmann::json report_to_json(const InvalidationReport& report) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : report.methods) {
    nlohmann::json iv = nlohmann::json::object();
    for (const auto& [kind, s] : m.iv) iv[kind] = {{"iv_mean", s.mean}, {"iv_std", s.std}};
    methods.push_back({{"method", m.method},
                       {"attempted", m.attempted},
                       {"succeeded", m.succeeded},
                       {"success_rate", m.success_rate},
                       {"cost_l1_mean", m.cost_l1_mean},
                       {"cost_l1_std", m.cost_l1_std},
                       {"cost_l2_mean", m.cost_l2_mean},
                       {"cost_l2_std", m.cost_l2_std},
                       {"iv", iv}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"origin_count", report.origin_count},
          {"ensemble_kinds", report.ensemble_kinds},
          {"success_floor", report.success_floor},
          {"methods", methods},
          {"regression", regression_json(report)},
          {"meta", report.meta}};
}

InvalidationReport report_from_json(const nlohmann::json& doc) {
  InvalidationReport r;
  try {
    if (doc.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw DataError("unsupported report schema version");
    }
    r.origin_count = doc.at("origin_count").get<std::size_t>();
    r.ensemble_kinds = doc.at("ensemble_kinds").get<std::vector<std::string>>();
    r.success_floor = doc.at("success_floor").get<double>();
    for (const auto& m : doc.at("methods")) {
      MethodStats s;
      s.method = m.at("method").get<std::string>();
      s.attempted = m.at("attempted").get<std::size_t>();
      s.succeeded = m.at("succeeded").get<std::size_t>();
      s.success_rate = m.at("success_rate").get<double>();
      s.cost_l1_mean = m.at("cost_l1_mean").get<double>();
      s.cost_l1_std = m.at("cost_l1_std").get<double>();
      s.cost_l2_mean = m.at("cost_l2_mean").get<double>();
      s.cost_l2_std = m.at("cost_l2_std").get<double>();
      for (const auto& [kind, v] : m.at("iv").items()) {
        s.iv[kind] = {v.at("iv_mean").get<double>(), v.at("iv_std").get<double>()};
      }
      r.methods.push_back(std::move(s));
    }
    const auto& reg = doc.at("regression");
    r.regression_ok = reg.at("ok").get<bool>();
    if (r.regression_ok) {
      r.regression.r_squared = reg.at("r_squared").get<double>();
      r.regression.slope = reg.at("slope").get<double>();
      r.regression.intercept = reg.at("intercept").get<double>();
      r.regression.points = reg.at("points").get<std::size_t>();
    } else {
      r.regression_error = reg.at("error").get<std::string>();
    }
    r.meta = doc.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

bool operator==(const InvalidationReport& a, const InvalidationReport& b) {
  return report_to_json(a) == report_to_json(b);
}

InvalidationReport aggregate(std::vector<CounterfactualRecord> records, std::size_t origin_count,
                             const Network& base, const std::map<std::string, Ensemble>& ensembles,
                             double success_floor, int threads) {
  if (origin_count == 0) throw ConfigError("aggregate needs origin_count >= 1");
  sort_records(records);
  InvalidationReport report;
  report.origin_count = origin_count;
  report.success_floor = success_floor;
  for (const auto& [kind, e] : ensembles) {
    if (!e.members.empty()) report.ensemble_kinds.push_back(kind);
  }

  // flips[kind][record][member]
  std::map<std::string, std::vector<std::vector<char>>> flips;
  for (const auto& kind : report.ensemble_kinds) {
    const auto& members = ensembles.at(kind).members;
    auto& table = flips[kind];
    table.assign(records.size(), {});
    parallel_for(records.size(), threads, [&](std::size_t i) {
      if (!records[i].success) return;
      const int reference = predict(base, records[i].counterfactual);
      auto& row = table[i];
      row.resize(members.size());
      for (std::size_t m = 0; m < members.size(); ++m) {
        row[m] = predict(members[m], records[i].counterfactual) != reference;
      }
    });
  }

  std::vector<std::pair<double, double>> points;
  for (std::size_t begin = 0; begin < records.size();) {
    const std::string label = method_label(records[begin]);
    std::size_t end = begin;
    while (end < records.size() && method_label(records[end]) == label) ++end;

    MethodStats s;
    s.method = label;
    s.attempted = end - begin;
    std::vector<double> l1, l2;
    for (std::size_t i = begin; i < end; ++i) {
      if (!records[i].success) continue;
      l1.push_back(records[i].cost_l1);
      l2.push_back(records[i].cost_l2);
    }
    s.succeeded = l1.size();
    s.success_rate = static_cast<double>(s.succeeded) / static_cast<double>(origin_count);
    std::tie(s.cost_l1_mean, s.cost_l1_std) = mean_std(l1);
    std::tie(s.cost_l2_mean, s.cost_l2_std) = mean_std(l2);

    for (const auto& kind : report.ensemble_kinds) {
      const auto& table = flips.at(kind);
      const std::size_t members = ensembles.at(kind).members.size();
      std::vector<double> per_member(members, 0.0);
      for (std::size_t i = begin; i < end; ++i) {
        if (!records[i].success) continue;
        double iv = 0.0;
        for (std::size_t m = 0; m < members; ++m) {
          iv += table[i][m];
          per_member[m] += table[i][m];
        }
        iv /= static_cast<double>(members);
        points.emplace_back(records[i].cost_l2, iv);
      }
      IvStats stats;
      if (s.succeeded > 0) {
        for (double& v : per_member) v /= static_cast<double>(s.succeeded);
        std::tie(stats.mean, stats.std) = mean_std(per_member);
      }
      s.iv[kind] = stats;
    }
    report.methods.push_back(std::move(s));
    begin = end;
  }

  try {
    report.regression = regress_cost_iv(points);
    report.regression_ok = true;
  } catch (const NumericError& e) {
    report.regression_error = e.what();
  }
  report.meta = {{"base_model", model_fingerprint(base)},
                 {"failed_generations", "excluded from IV and cost statistics"},
                 {"iv_std", "population std across ensemble members of the per-member invalidation fraction"},
                 {"regression_input", "l2 cost vs per-record IV, pooled over methods and ensemble kinds"}};
  return report;
}

Dataset load_experiment_dataset(const DatasetConfig& config) {
  if (config.source == "synth") {
    return synth_2d(parse_synth_kind(config.synth_kind), config.n, config.noise, config.seed);
  }
  if (config.csv_path.empty()) throw ConfigError("dataset.csv_path is required for csv datasets");
  if (config.schema_path.empty()) throw ConfigError("dataset.schema_path is required for csv datasets");
  const DatasetSchema schema = load_schema(config.schema_path);
  return load_csv(config.csv_path, schema.columns, schema.label);
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  auto [train, validation] =
      split(load_experiment_dataset(config.dataset), config.dataset.train_frac, config.dataset.split_seed);
  return {std::move(train), std::move(validation)};
}

Network train_base(const ExperimentConfig& config, const Dataset& train) {
  const NetworkSpec spec{config.layer_dims};
  spec.validate();
  if (spec.input_dim() != train.dim()) {
    std::ostringstream msg;
    msg << "model input width " << spec.input_dim() << " does not match dataset width " << train.dim();
    throw ConfigError(msg.str());
  }
  const int classes = spec.is_binary() ? 2 : spec.output_dim();
  if (train.num_classes() > classes) {
    throw ConfigError("model output width is too small for the dataset's classes");
  }
  return cfstab::train(init_network(spec, config.init_seed), train, config.train);
}

std::vector<std::size_t> select_origins(const Network& base, const Dataset& validation,
                                        const DatasetConfig& config) {
  const int classes = base.output_dim() == 1 ? 2 : base.output_dim();
  if (config.desired_class < 0 || config.desired_class >= classes) {
    throw ConfigError("dataset.desired_class is out of range");
  }
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < validation.rows(); ++i) {
    if (out.size() >= static_cast<std::size_t>(config.origin_count)) break;
    if (predict(base, validation.row(i)) != config.desired_class) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

std::vector<CounterfactualRecord> generate_counterfactuals(const ExperimentConfig& config,
                                                           const Network& base,
                                                           const Dataset& train,
                                                           const Dataset& validation,
                                                           const std::vector<std::size_t>& origins,
                                                           int threads) {
  const MethodsConfig& mc = config.methods;
  const int target = config.dataset.desired_class;
  std::vector<Method> methods;
  if (mc.min_l1) methods.push_back(Method::kMinL1);
  if (mc.min_l2) methods.push_back(Method::kMinL2);
  if (mc.pgd) methods.push_back(Method::kMinEpsPgd);
  const double max_eps = mc.pgd_max_eps > 0.0 ? mc.pgd_max_eps : median_l2_norm(train);

  const std::size_t n = origins.size();
  std::vector<CounterfactualRecord> records(methods.size() * n);
  parallel_for(records.size(), threads, [&](std::size_t slot) {
    const Method method = methods[slot / n];
    const std::size_t origin = origins[slot % n];
    const Vec x = validation.row(static_cast<Eigen::Index>(origin));
    const std::uint64_t jitter = mix_seed(mix_seed(mc.elastic_net.jitter_seed, static_cast<std::uint64_t>(method)), origin);
    CounterfactualRecord r;
    if (method == Method::kMinEpsPgd) {
      PgdConfig pc;
      pc.max_eps = max_eps;
      pc.n_interp = mc.pgd_n_interp;
      pc.max_steps = mc.pgd_max_steps;
      pc.jitter_seed = jitter;
      r = gen_pgd_min_eps(base, x, target, pc);
    } else {
      ElasticNetConfig ec = mc.elastic_net;
      ec.beta = method == Method::kMinL1 ? 1.0 : 0.0;
      ec.jitter_seed = jitter;
      r = gen_elastic_net(base, x, target, ec);
    }
    r.origin_index = origin;
    records[slot] = std::move(r);
  });

  if (mc.sns) {
    SnsConfig sc;
    sc.delta = mc.sns_delta_factor * max_eps;
    sc.steps = mc.sns_steps;
    sc.grid_points = mc.sns_grid_points;
    sc.step_size = 2.0 * sc.delta / mc.sns_steps;
    sc.validate();
    std::vector<std::size_t> seeds;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].success) seeds.push_back(i);
    }
    std::vector<CounterfactualRecord> refined(seeds.size());
    parallel_for(seeds.size(), threads, [&](std::size_t k) { refined[k] = gen_sns(base, records[seeds[k]], sc); });
    for (auto& r : refined) records.push_back(std::move(r));
  }
  sort_records(records);
  return records;
}

std::map<std::string, Ensemble> build_ensembles(const ExperimentConfig& config, const Network& base,
                                                const Dataset& train, int threads) {
  std::map<std::string, Ensemble> out;
  if (config.ensembles.loo_count > 0) {
    out["loo"] = build_ensemble(base, train, {EnsembleKind::kLoo, config.ensembles.loo_count, config.ensembles.loo_seed},
                                config.train, threads);
  }
  if (config.ensembles.rs_count > 0) {
    out["rs"] = build_ensemble(base, train, {EnsembleKind::kRs, config.ensembles.rs_count, config.init_seed},
                               config.train, threads);
  }
  return out;
}

Network train_homogeneous(const Dataset& data, int hidden, std::uint64_t seed, int epochs) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = epochs;
  tc.train_bias = false;
  return cfstab::train(init_network(NetworkSpec{{static_cast<int>(data.dim()), hidden, 1}}, seed), data, tc);
}

namespace {

Network random_network(const NetworkSpec& spec, std::uint64_t seed) {
  Network net = init_network(spec, seed);
  Xoshiro256 rng(mix_seed(seed, 0xb1a5));
  for (auto& layer : net.layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.5 * rng.normal();
  }
  return net;
}

Vec random_point(int d, Xoshiro256& rng) {
  Vec x(d);
  for (int i = 0; i < d; ++i) x[i] = rng.normal();
  return x;
}

VerifierReport merged(const std::string& name, const std::vector<VerifierReport>& parts) {
  VerifierReport out;
  out.name = name;
  for (const auto& p : parts) out.merge(p);
  return out;
}

}  // namespace

std::vector<VerifierReport> run_verify_suite(const VerifyConfig& config, int threads) {
  if (config.prop1_trials < 1 || config.theorem2_trials < 1) {
    throw ConfigError("verify trials must be >= 1");
  }
  if (config.prop1_nets < 1 || config.theorem1_nets < 1 || config.theorem2_nets < 1 ||
      config.theorem1_points < 1) {
    throw ConfigError("verify net and point counts must be >= 1");
  }
  std::vector<VerifierReport> reports;

  if (config.inject_fault) {
    const Network net = fault::fixture_network();
    Vec x(2);
    x << 1.0, 1.0;
    reports.push_back(verify_prop1(net, x, config.prop1_trials, config.seed, fault::inverted_mask_gradient));
    reports.back().details["fault"] = "inverted_relu_mask";
    return reports;
  }

  static const std::vector<std::vector<int>> prop1_specs{{2, 8, 1}, {5, 16, 1}, {10, 64, 32, 1}, {4, 16, 16, 3}};
  std::vector<VerifierReport> parts(static_cast<std::size_t>(config.prop1_nets));
  parallel_for(parts.size(), threads, [&](std::size_t i) {
    const std::uint64_t seed = mix_seed(config.seed, 100 + i);
    const NetworkSpec spec{prop1_specs[i % prop1_specs.size()]};
    const Network net = random_network(spec, seed);
    Xoshiro256 rng(mix_seed(seed, 1));
    parts[i] = verify_prop1(net, random_point(spec.input_dim(), rng), config.prop1_trials, mix_seed(seed, 2));
  });
  reports.push_back(merged("proposition1", parts));

  parts.assign(static_cast<std::size_t>(config.theorem1_nets), {});
  parallel_for(parts.size(), threads, [&](std::size_t i) {
    const std::uint64_t seed = mix_seed(config.seed, 200 + i);
    const Dataset data = synth_2d(SynthKind::kBlobs, 200, 0.35, seed);
    const Network net = train_homogeneous(data, 16, seed, config.theorem1_epochs);
    std::vector<Vec> points;
    for (int k = 0; k < config.theorem1_points && k < data.rows(); ++k) points.push_back(data.row(k));
    Theorem1SweepOptions options;
    options.directions = config.theorem1_directions;
    options.seed = mix_seed(seed, 3);
    parts[i] = verify_theorem1(net, points, options);
  });
  reports.push_back(merged("theorem1", parts));

  parts.assign(static_cast<std::size_t>(config.theorem2_nets), {});
  parallel_for(parts.size(), threads, [&](std::size_t i) {
    const std::uint64_t seed = mix_seed(config.seed, 300 + i);
    const Network net = random_network(NetworkSpec{{5, 16, 1}}, seed);
    Xoshiro256 rng(mix_seed(seed, 1));
    const Vec x = random_point(5, rng);
    const double delta = config.theorem2_delta_ratio * net.layers.back().weight.norm();
    parts[i] = verify_theorem2_bound(net, x, delta, config.theorem2_trials, config.theorem2_doi_samples,
                                     mix_seed(seed, 2), config.theorem2_path_points);
  });
  reports.push_back(merged("theorem2", parts));
  return reports;
}

ExperimentResult run_experiment(const ExperimentConfig& config, int threads) {
  const ExperimentData data = run_stage("data", [&] { return prepare_data(config); });
  ExperimentResult result;
  result.base = run_stage("train", [&] { return train_base(config, data.train); });
  const auto origins =
      run_stage("origins", [&] { return select_origins(result.base, data.validation, config.dataset); });
  if (origins.empty()) {
    throw StageError("origins", "no validation point is predicted outside the desired class",
                     exit_codes::kData);
  }
  result.records = run_stage("generate", [&] {
    return generate_counterfactuals(config, result.base, data.train, data.validation, origins, threads);
  });
  result.ensembles = run_stage("ensemble", [&] { return build_ensembles(config, result.base, data.train, threads); });
  result.report = run_stage("aggregate", [&] {
    return aggregate(result.records, origins.size(), result.base, result.ensembles, config.report.success_floor,
                     threads);
  });
  result.report.meta["dataset_fingerprint"] = data.train.fingerprint;
  result.report.meta["model_spec"] = config.layer_dims;
  result.report.meta["config"] = config.effective;
  return result;
}

}  // namespace cfstab
