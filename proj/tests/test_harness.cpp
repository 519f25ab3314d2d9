#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfstab/data.hpp"
#include "cfstab/errors.hpp"
#include "cfstab/harness.hpp"
#include "cfstab/model_io.hpp"
#include "cfstab/train.hpp"
#include "test_util.hpp"

namespace cfstab {
namespace {

using testing::linear_net;
using testing::vec;

CounterfactualRecord make_record(std::size_t origin, const Vec& x, const Vec& cf, Method method,
                                 bool success = true) {
  CounterfactualRecord r;
  r.origin_index = origin;
  r.origin = x;
  r.counterfactual = cf;
  r.method = method;
  r.target_class = 1;
  r.success = success;
  const Vec d = cf - x;
  r.cost_l1 = d.lpNorm<1>();
  r.cost_l2 = d.norm();
  return r;
}

Network negated(Network net) {
  net.layers.back().weight *= -1.0;
  net.layers.back().bias *= -1.0;
  return net;
}

struct Small {
  Dataset train;
  Dataset validation;
  Network base;
  TrainConfig tc;
};

const Small& small() {
  static const Small s = [] {
    Small out;
    auto [tr, va] = split(synth_2d(SynthKind::kBlobs, 200, 0.35, 0), 0.8, 1);
    out.train = tr;
    out.validation = va;
    out.tc.epochs = 30;
    out.base = train(init_network(NetworkSpec{{2, 8, 1}}, 5), out.train, out.tc);
    return out;
  }();
  return s;
}

TEST(Ensemble, RsMembersUseConsecutiveSeeds) {
  const auto& s = small();
  const Ensemble e = build_ensemble(s.base, s.train, {EnsembleKind::kRs, 2, 5}, s.tc);
  ASSERT_EQ(e.members.size(), 2u);
  EXPECT_EQ(e.members[0].meta.seed, 6u);
  EXPECT_EQ(e.members[1].meta.seed, 7u);
  const Network again = train(init_network(NetworkSpec{{2, 8, 1}}, 6), s.train, s.tc);
  EXPECT_EQ(model_fingerprint(again), model_fingerprint(e.members[0]));
}

TEST(Ensemble, LooDropsOneRowAndKeepsBaseSeed) {
  const auto& s = small();
  const Ensemble e = build_ensemble(s.base, s.train, {EnsembleKind::kLoo, 1, 9}, s.tc);
  ASSERT_EQ(e.members.size(), 1u);
  ASSERT_EQ(e.removed_rows.size(), 1u);
  EXPECT_EQ(e.members[0].meta.seed, s.base.meta.seed);
  EXPECT_LT(e.removed_rows[0], static_cast<std::size_t>(s.train.rows()));
  const Dataset reduced = without_row(s.train, e.removed_rows[0]);
  EXPECT_EQ(reduced.rows(), s.train.rows() - 1);
  const Network oracle = train(init_network(NetworkSpec{{2, 8, 1}}, 5), reduced, s.tc);
  EXPECT_EQ(model_fingerprint(oracle), model_fingerprint(e.members[0]));
}

TEST(Ensemble, MembersStayCloseToBaseAccuracy) {
  const auto& s = small();
  const double base_acc = accuracy(s.base, s.validation);
  for (auto kind : {EnsembleKind::kRs, EnsembleKind::kLoo}) {
    const Ensemble e = build_ensemble(s.base, s.train, {kind, 4, 3}, s.tc);
    for (const auto& m : e.members) EXPECT_LE(std::abs(accuracy(m, s.validation) - base_acc), 0.05);
  }
}

TEST(Ensemble, Errors) {
  const auto& s = small();
  EXPECT_THROW(build_ensemble(s.base, s.train, {EnsembleKind::kLoo, 10000, 0}, s.tc), ConfigError);
  EXPECT_THROW(build_ensemble(s.base, s.train, {EnsembleKind::kRs, 0, 0}, s.tc), ConfigError);
  EXPECT_THROW(parse_ensemble_kind("bagging"), ConfigError);
}

TEST(Ensemble, ThreadCountDoesNotChangeMembers) {
  const auto& s = small();
  const Ensemble a = build_ensemble(s.base, s.train, {EnsembleKind::kLoo, 3, 2}, s.tc, 1);
  const Ensemble b = build_ensemble(s.base, s.train, {EnsembleKind::kLoo, 3, 2}, s.tc, 4);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(model_fingerprint(a.members[i]), model_fingerprint(b.members[i]));
}

TEST(Invalidation, BaseAloneIsZero) {
  const Network base = linear_net(vec({1.0, 0.0}), 0.0);
  const auto r = make_record(0, vec({-1.0, 0.0}), vec({0.5, 0.0}), Method::kMinL2);
  EXPECT_EQ(invalidation_rate(r, base, {base}), 0.0);
}

TEST(Invalidation, NegatedCopyIsOne) {
  const Network base = linear_net(vec({1.0, 0.0}), 0.0);
  const auto r = make_record(0, vec({-1.0, 0.0}), vec({0.5, 0.0}), Method::kMinL2);
  EXPECT_EQ(invalidation_rate(r, base, {negated(base)}), 1.0);
}

TEST(Invalidation, OneOfThreeHyperplanesFlips) {
  const Network base = linear_net(vec({1.0, 0.0}), 0.0);
  const auto r = make_record(0, vec({-1.0, 0.0}), vec({0.5, 0.0}), Method::kMinL2);
  // At (0.5, 0): x0 - 0.2 > 0, x0 + x1 > 0, x0 - 1 < 0.
  const std::vector<Network> trio{linear_net(vec({1.0, 0.0}), -0.2), linear_net(vec({1.0, 1.0}), 0.0),
                                  linear_net(vec({1.0, 0.0}), -1.0)};
  EXPECT_DOUBLE_EQ(invalidation_rate(r, base, trio), 1.0 / 3.0);
  std::vector<Network> shuffled{trio[2], trio[0], trio[1]};
  EXPECT_DOUBLE_EQ(invalidation_rate(r, base, shuffled), 1.0 / 3.0);
}

TEST(Invalidation, FailedRecordRejected) {
  const Network base = linear_net(vec({1.0}), 0.0);
  const auto r = make_record(0, vec({-1.0}), vec({-1.0}), Method::kMinL2, false);
  EXPECT_THROW(invalidation_rate(r, base, {base}), ConfigError);
}

TEST(Regression, FourPointFixture) {
  const auto r = regress_cost_iv({{1, 0.1}, {2, 0.2}, {3, 0.2}, {4, 0.4}});
  EXPECT_NEAR(r.slope, 0.09, 1e-10);
  EXPECT_NEAR(r.r_squared, 81.0 / 95.0, 1e-10);
  EXPECT_NEAR(r.intercept, 0.0, 1e-10);
  EXPECT_EQ(r.points, 4u);
}

TEST(Regression, ExactLine) {
  EXPECT_NEAR(regress_cost_iv({{0, 1}, {1, 3}, {2, 5}, {7, 15}}).r_squared, 1.0, 1e-12);
}

TEST(Regression, ConstantIvGivesZero) {
  const auto r = regress_cost_iv({{0, 0.3}, {1, 0.3}, {2, 0.3}});
  EXPECT_EQ(r.r_squared, 0.0);
  EXPECT_EQ(r.slope, 0.0);
}

TEST(Regression, DegenerateInputs) {
  EXPECT_THROW(regress_cost_iv({{1, 0.1}, {1, 0.4}}), NumericError);
  EXPECT_THROW(regress_cost_iv({{1, 0.1}}), NumericError);
}

TEST(MethodLabel, SnsCarriesBaseMethod) {
  auto r = make_record(0, vec({0.0}), vec({1.0}), Method::kSns);
  r.base_method = Method::kMinEpsPgd;
  EXPECT_EQ(method_label(r), "min_eps_pgd+sns");
  EXPECT_EQ(method_label(make_record(0, vec({0.0}), vec({1.0}), Method::kMinL1)), "min_l1");
}

// Three origins on a line; f = x0 as base, ensembles of shifted thresholds.
struct Fixture {
  Network base = linear_net(vec({1.0, 0.0}), 0.0);
  std::vector<CounterfactualRecord> records;
  std::map<std::string, Ensemble> ensembles;

  Fixture() {
    records.push_back(make_record(0, vec({-1.0, 0.0}), vec({0.1, 0.0}), Method::kMinL2));
    records.push_back(make_record(1, vec({-2.0, 0.0}), vec({0.3, 0.0}), Method::kMinL2));
    records.push_back(make_record(2, vec({-3.0, 0.0}), vec({-3.0, 0.0}), Method::kMinL2, false));
    auto sns = make_record(0, vec({-1.0, 0.0}), vec({0.9, 0.0}), Method::kSns);
    sns.base_method = Method::kMinL2;
    records.push_back(sns);
    Ensemble rs;
    rs.spec = {EnsembleKind::kRs, 3, 0};
    rs.members = {linear_net(vec({1.0, 0.0}), -0.2), linear_net(vec({1.0, 0.0}), -0.5),
                  linear_net(vec({1.0, 0.0}), 0.0)};
    Ensemble loo;
    loo.spec = {EnsembleKind::kLoo, 2, 0};
    loo.members = {linear_net(vec({1.0, 0.0}), 0.0), linear_net(vec({1.0, 0.0}), -0.2)};
    ensembles = {{"rs", rs}, {"loo", loo}};
  }
};

TEST(Aggregate, HandComputedFixture) {
  Fixture f;
  const auto report = aggregate(f.records, 3, f.base, f.ensembles, 0.25);
  const MethodStats* l2 = report.find("min_l2");
  ASSERT_NE(l2, nullptr);
  EXPECT_EQ(l2->attempted, 3u);
  EXPECT_EQ(l2->succeeded, 2u);
  EXPECT_DOUBLE_EQ(l2->success_rate, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(l2->cost_l2_mean, 0.5 * (1.1 + 2.3));
  // rs: record 0 flips for thresholds 0.2, 0.5 -> 2/3; record 1 flips for 0.5 -> 1/3.
  EXPECT_NEAR(l2->iv.at("rs").mean, 0.5, 1e-15);
  // Per-member fractions {1/2, 1, 0} over the two records.
  EXPECT_NEAR(l2->iv.at("rs").std, std::sqrt(((0.0) + 0.25 + 0.25) / 3.0), 1e-15);
  EXPECT_NEAR(l2->iv.at("loo").mean, 0.25, 1e-15);
  const MethodStats* sns = report.find("min_l2+sns");
  ASSERT_NE(sns, nullptr);
  EXPECT_EQ(sns->iv.at("rs").mean, 0.0);
  EXPECT_DOUBLE_EQ(sns->success_rate, 1.0 / 3.0);
  EXPECT_TRUE(report.regression_ok);
  EXPECT_EQ(report.regression.points, 6u);
}

TEST(Aggregate, SuccessRateTimesOriginsIsCount) {
  Fixture f;
  const auto report = aggregate(f.records, 3, f.base, f.ensembles, 0.25);
  for (const auto& m : report.methods) {
    const double count = m.success_rate * 3.0;
    EXPECT_NEAR(count, std::round(count), 1e-12);
    EXPECT_GE(m.success_rate, 0.0);
    EXPECT_LE(m.success_rate, 1.0);
  }
}

TEST(Aggregate, ScheduleAndOrderInvariant) {
  Fixture f;
  const auto a = aggregate(f.records, 3, f.base, f.ensembles, 0.25, 1);
  auto records = f.records;
  std::reverse(records.begin(), records.end());
  auto ensembles = f.ensembles;
  std::reverse(ensembles["rs"].members.begin(), ensembles["rs"].members.end());
  const auto b = aggregate(records, 3, f.base, ensembles, 0.25, 4);
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
}

TEST(Aggregate, GeneratingModelAloneGivesZero) {
  Fixture f;
  Ensemble self;
  self.spec = {EnsembleKind::kRs, 1, 0};
  self.members = {f.base};
  const auto report = aggregate(f.records, 3, f.base, {{"rs", self}}, 0.25);
  for (const auto& m : report.methods) EXPECT_EQ(m.iv.at("rs").mean, 0.0);
}

TEST(Aggregate, ZeroCostVarianceIsRecordedNotThrown) {
  const Network base = linear_net(vec({1.0}), 0.0);
  std::vector<CounterfactualRecord> records{make_record(0, vec({-1.0}), vec({0.5}), Method::kMinL2),
                                            make_record(1, vec({-2.0}), vec({-0.5}), Method::kMinL2)};
  Ensemble e;
  e.spec = {EnsembleKind::kRs, 1, 0};
  e.members = {base};
  const auto report = aggregate(records, 2, base, {{"rs", e}}, 0.25);
  EXPECT_FALSE(report.regression_ok);
  EXPECT_FALSE(report.regression_error.empty());
}

TEST(Aggregate, RecomputedFromPersistedRecords) {
  Fixture f;
  const auto dir = testing::temp_dir("persist");
  write_records_jsonl(f.records, dir / "records.jsonl");
  const auto reread = read_records_jsonl(dir / "records.jsonl");
  const auto a = aggregate(f.records, 3, f.base, f.ensembles, 0.25);
  const auto b = aggregate(reread, 3, f.base, f.ensembles, 0.25);
  ASSERT_EQ(a.methods.size(), b.methods.size());
  for (std::size_t i = 0; i < a.methods.size(); ++i) {
    EXPECT_LE(std::abs(a.methods[i].cost_l2_mean - b.methods[i].cost_l2_mean), 1e-12);
    for (const auto& [k, v] : a.methods[i].iv) EXPECT_LE(std::abs(v.mean - b.methods[i].iv.at(k).mean), 1e-12);
  }
}

TEST(Report, JsonRoundTrip) {
  Fixture f;
  const auto report = aggregate(f.records, 3, f.base, f.ensembles, 0.25);
  const auto back = report_from_json(report_to_json(report));
  EXPECT_TRUE(back == report);
  EXPECT_EQ(report_to_json(back).dump(), report_to_json(report).dump());
  EXPECT_EQ(report_to_json(report)["schema_version"], kReportSchemaVersion);
}

TEST(Report, EmptyMethodListEmitsValidArtifacts) {
  InvalidationReport empty;
  const auto dir = testing::temp_dir("empty_report");
  report_emit(empty, {"json", "csv", "text"}, dir);
  EXPECT_TRUE(report_from_json(nlohmann::json::parse(testing::read_file(dir / "report.json"))) == empty);
  const std::string csv = testing::read_file(dir / "report.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_FALSE(testing::read_file(dir / "report.txt").empty());
}

TEST(Report, LowSuccessMethodIsDashed) {
  Fixture f;
  const auto report = aggregate(f.records, 3, f.base, f.ensembles, 0.5);
  const std::string table = report_text_table(report);
  std::string sns_line;
  std::string l2_line;
  std::istringstream in(table);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("min_l2+sns", 0) == 0) sns_line = line;
    else if (line.rfind("min_l2", 0) == 0) l2_line = line;
  }
  EXPECT_NE(sns_line.find(" - "), std::string::npos) << table;
  EXPECT_EQ(l2_line.find(" - "), std::string::npos) << table;
}

TEST(Report, CsvHasOneRowPerMethodAndEnsemble) {
  Fixture f;
  const std::string csv = report_csv(aggregate(f.records, 3, f.base, f.ensembles, 0.25));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2);
  EXPECT_EQ(csv.rfind("method,ensemble,", 0), 0u);
}

TEST(Report, UnwritablePath) {
  const auto dir = testing::temp_dir("unwritable");
  testing::write_file(dir / "file", "x");
  EXPECT_THROW(report_emit(InvalidationReport{}, {"json"}, dir / "file" / "sub"), Error);
}

TEST(Experiment, SameSeedRsEnsembleHasZeroIv) {
  ExperimentConfig config;
  config.dataset.n = 200;
  config.dataset.origin_count = 10;
  config.layer_dims = {2, 8, 1};
  config.init_seed = 4;
  config.train.epochs = 20;
  config.methods.min_l1 = config.methods.pgd = config.methods.sns = false;
  const auto data = prepare_data(config);
  const Network base = train_base(config, data.train);
  const auto origins = select_origins(base, data.validation, config.dataset);
  ASSERT_FALSE(origins.empty());
  const auto records = generate_counterfactuals(config, base, data.train, data.validation, origins);
  const Ensemble same = build_ensemble(base, data.train, {EnsembleKind::kRs, 1, config.init_seed - 1}, config.train);
  EXPECT_EQ(model_fingerprint(same.members[0]), model_fingerprint(base));
  const auto report = aggregate(records, origins.size(), base, {{"rs", same}}, 0.25);
  ASSERT_NE(report.find("min_l2"), nullptr);
  EXPECT_EQ(report.find("min_l2")->iv.at("rs").mean, 0.0);
}

TEST(Experiment, OriginsAreUndesiredValidationPoints) {
  ExperimentConfig config;
  config.dataset.n = 200;
  config.train.epochs = 10;
  config.layer_dims = {2, 8, 1};
  const auto data = prepare_data(config);
  const Network base = train_base(config, data.train);
  for (std::size_t i : select_origins(base, data.validation, config.dataset)) {
    EXPECT_NE(predict(base, data.validation.row(static_cast<Eigen::Index>(i))), config.dataset.desired_class);
  }
}

TEST(Experiment, StageTaggedFailure) {
  ExperimentConfig config;
  config.dataset.source = "csv";
  config.dataset.csv_path = "/nonexistent/data.csv";
  config.dataset.schema_path = "/nonexistent/schema.json";
  try {
    run_experiment(config);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "data");
    EXPECT_EQ(e.code(), exit_codes::kData);
    EXPECT_EQ(exit_code(e), exit_codes::kData);
  }
}

TEST(Experiment, SmallRunIsDeterministicAndWellFormed) {
  ExperimentConfig config;
  config.dataset.n = 200;
  config.dataset.origin_count = 8;
  config.layer_dims = {2, 8, 1};
  config.train.epochs = 20;
  config.ensembles.loo_count = 2;
  config.ensembles.rs_count = 2;
  const auto a = run_experiment(config, 1);
  const auto b = run_experiment(config, 3);
  EXPECT_EQ(report_to_json(a.report).dump(), report_to_json(b.report).dump());
  EXPECT_EQ(a.report.origin_count, 8u);
  for (const auto& m : a.report.methods) {
    for (const auto& [kind, iv] : m.iv) {
      EXPECT_GE(iv.mean, 0.0);
      EXPECT_LE(iv.mean, 1.0);
      EXPECT_GE(iv.std, 0.0);
    }
  }
  for (const auto& r : a.records) {
    if (r.success) EXPECT_NO_THROW(validate_record(r, a.base));
  }
  const std::vector<std::string> order{"min_l1", "min_l1+sns", "min_l2", "min_l2+sns", "min_eps_pgd",
                                       "min_eps_pgd+sns"};
  const auto key = [&](const CounterfactualRecord& r) {
    const auto rank = std::find(order.begin(), order.end(), method_label(r)) - order.begin();
    return std::make_pair(rank, r.origin_index);
  };
  EXPECT_TRUE(std::is_sorted(a.records.begin(), a.records.end(),
                             [&](const auto& x, const auto& y) { return key(x) < key(y); }));
}

}  // namespace
}  // namespace cfstab
