#include <gtest/gtest.h>

#include <cmath>

#include "cfstab/data.hpp"
#include "cfstab/errors.hpp"
#include "cfstab/generators.hpp"
#include "cfstab/train.hpp"
#include "test_util.hpp"

namespace cfstab {
namespace {

using testing::linear_net;
using testing::vec;

ElasticNetConfig l2_config() {
  ElasticNetConfig c;
  c.beta = 0.0;
  return c;
}

Network trained_blobs_net() {
  const Dataset ds = synth_2d(SynthKind::kBlobs, 300, 0.35, 2);
  TrainConfig tc;
  tc.epochs = 40;
  return train(init_network(NetworkSpec{{2, 16, 8, 1}}, 3), ds, tc);
}

TEST(Score, BinarySymmetry) {
  const Network net = linear_net(vec({1.0}), 0.0);
  EXPECT_DOUBLE_EQ(multiclass_score(net, vec({0.0}), 1), 0.5);
  EXPECT_DOUBLE_EQ(multiclass_score(net, vec({0.0}), 0), 0.5);
  EXPECT_NEAR(multiclass_score(net, vec({2.0}), 0) + multiclass_score(net, vec({2.0}), 1), 1.0, 1e-15);
}

TEST(Score, UniformSoftmax) {
  const Network net = linear_net(Mat::Zero(3, 2), Vec::Zero(3));
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(multiclass_score(net, vec({0.4, -1.0}), t), 1.0 / 3.0, 1e-15);
}

TEST(Score, SoftmaxOfTwoMatchesSigmoid) {
  const Vec w = vec({0.7, -1.3});
  const double b = 0.2;
  const Network binary = linear_net(w, b);
  Mat w2(2, 2);
  w2.row(0).setZero();
  w2.row(1) = w.transpose();
  const Network two = linear_net(w2, vec({0.0, b}));
  for (const Vec& x : {vec({0.1, 0.2}), vec({-3.0, 1.0}), vec({2.0, 2.0})}) {
    for (int t = 0; t < 2; ++t) {
      EXPECT_NEAR(multiclass_score(binary, x, t), multiclass_score(two, x, t), 1e-12);
      EXPECT_TRUE(multiclass_score_grad(binary, x, t).isApprox(multiclass_score_grad(two, x, t), 1e-10));
    }
  }
}

TEST(Score, GradientMatchesFiniteDifferences) {
  const Network net = testing::with_random_biases(init_network(NetworkSpec{{3, 8, 3}}, 4), 4);
  const Vec x = vec({0.3, -0.2, 0.9});
  const double h = 1e-6;
  for (int t = 0; t < 3; ++t) {
    const Vec g = multiclass_score_grad(net, x, t);
    for (int i = 0; i < 3; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      EXPECT_NEAR(g[i], (multiclass_score(net, xp, t) - multiclass_score(net, xm, t)) / (2 * h), 1e-7);
    }
  }
  EXPECT_THROW(multiclass_score(net, x, 3), ConfigError);
}

TEST(ElasticNet, LinearOneDimensionalMinimalCost) {
  const Network net = linear_net(vec({1.0}), 0.0);
  const auto r = gen_elastic_net(net, vec({-1.0}), 1, l2_config());
  ASSERT_TRUE(r.success);
  EXPECT_GT(r.counterfactual[0], 0.0);
  EXPECT_NEAR(r.cost_l2, 1.0, 0.02);
  EXPECT_GE(sigmoid(forward(net, r.counterfactual)[0]), 0.5);
}

TEST(ElasticNet, NearBoundaryNeedsFewSteps) {
  const Network net = linear_net(vec({1.0}), 0.0);
  const auto r = gen_elastic_net(net, vec({-1e-4}), 1, l2_config());
  ASSERT_TRUE(r.success);
  EXPECT_LE(r.iterations_used, 5);
}

TEST(ElasticNet, L1ChangesOnlyTheDominantCoordinate) {
  const Network net = linear_net(vec({2.0, 0.5}), 1.0);
  const Vec x = vec({-1.0, -1.0});  // f(x) = -1.5
  ElasticNetConfig l1;
  l1.beta = 1.0;
  const auto sparse = gen_elastic_net(net, x, 1, l1);
  const auto dense = gen_elastic_net(net, x, 1, l2_config());
  ASSERT_TRUE(sparse.success);
  ASSERT_TRUE(dense.success);
  EXPECT_EQ(sparse.counterfactual[1], x[1]);
  EXPECT_NE(sparse.counterfactual[0], x[0]);
  EXPECT_NE(dense.counterfactual[1], x[1]);

  // Grid oracle: minimal l1 + l2^2 cost among feasible grid points.
  const double pitch = 1e-3;
  double best = std::numeric_limits<double>::infinity();
  Vec arg = x;
  for (int i = 0; i <= 1500; ++i) {
    for (int j = 0; j <= 1500; ++j) {
      const Vec p = x + vec({i * pitch, j * pitch});
      if (forward(net, p)[0] <= 0.0) continue;
      const Vec d = p - x;
      const double cost = d.lpNorm<1>() + d.squaredNorm();
      if (cost < best) {
        best = cost;
        arg = p;
      }
    }
  }
  EXPECT_NEAR(arg[1], x[1], 2 * pitch);
  const Vec d = sparse.counterfactual - x;
  EXPECT_NEAR(d.lpNorm<1>() + d.squaredNorm(), best, 0.02);
}

TEST(ElasticNet, Errors) {
  const Network net = linear_net(vec({1.0}), 0.0);
  EXPECT_THROW(gen_elastic_net(net, vec({-1.0}), 2, l2_config()), ConfigError);
  EXPECT_THROW(gen_elastic_net(net, vec({1.0}), 1, l2_config()), ConfigError);
}

TEST(ElasticNet, DeadGradientStartIsJittered) {
  Network net = init_network(NetworkSpec{{1, 1, 1}}, 0);
  net.layers[0].weight(0, 0) = 1.0;
  net.layers[0].bias[0] = -10.0;
  net.layers[1].weight(0, 0) = 1.0;
  net.layers[1].bias[0] = -1.0;
  ElasticNetConfig c = l2_config();
  c.max_steps = 20;
  c.binary_search_steps = 1;
  const auto r = gen_elastic_net(net, vec({0.0}), 1, c);
  EXPECT_TRUE(r.jittered);
  EXPECT_FALSE(r.success);
}

TEST(Pgd, LinearDistanceSelectsGridRadius) {
  const Network net = linear_net(vec({1.0, 0.0}), 0.0);
  PgdConfig c;
  c.max_eps = 1.0;
  auto r = gen_pgd_min_eps(net, vec({-0.29, 0.5}), 1, c);
  ASSERT_TRUE(r.success);
  EXPECT_NEAR(*r.ball_radius, 0.3, 1e-12);
  r = gen_pgd_min_eps(net, vec({-0.31, 0.5}), 1, c);
  ASSERT_TRUE(r.success);
  EXPECT_NEAR(*r.ball_radius, 0.4, 1e-12);
  EXPECT_LE(r.cost_l2, *r.ball_radius + 1e-9);
}

TEST(Pgd, FailsWhenBoundaryIsOutOfReach) {
  const Network net = linear_net(vec({1.0, 0.0}), 0.0);
  PgdConfig c;
  c.max_eps = 0.5;
  const auto r = gen_pgd_min_eps(net, vec({-0.8, 0.0}), 1, c);
  EXPECT_FALSE(r.success);
  EXPECT_FALSE(r.ball_radius.has_value());
}

TEST(Pgd, BallInvariantOnTrainedNet) {
  const Network net = trained_blobs_net();
  PgdConfig c;
  c.max_eps = 2.5;
  int successes = 0;
  for (int i = 0; i < 10; ++i) {
    const Vec x = vec({-1.0 + 0.1 * i, -1.2 + 0.05 * i});
    if (predict(net, x) == 1) continue;
    const auto r = gen_pgd_min_eps(net, x, 1, c);
    if (!r.success) continue;
    ++successes;
    EXPECT_LE((r.counterfactual - x).norm(), *r.ball_radius + 1e-9);
    EXPECT_EQ(predict(net, r.counterfactual), 1);
  }
  EXPECT_GT(successes, 0);
}

TEST(Sns, LinearModelMovesToBallBoundaryAlongW) {
  const Vec w = vec({3.0, 4.0});
  const Network net = linear_net(w, 0.0);
  CounterfactualRecord start;
  start.origin = vec({-1.0, -1.0});
  start.counterfactual = vec({0.5, 0.5});
  start.success = true;
  start.target_class = 1;
  const SnsConfig c = SnsConfig::from_pgd_max_eps(1.0);
  const auto r = gen_sns(net, start, c);
  ASSERT_TRUE(r.success);
  const Vec expected = start.counterfactual + c.delta * w.normalized();
  EXPECT_LE((r.counterfactual - expected).norm(), c.step_size);
  EXPECT_EQ(r.base_method, std::optional<Method>(Method::kMinL2));
  EXPECT_GE(multiclass_score(net, r.counterfactual, 1), multiclass_score(net, start.counterfactual, 1) - 1e-12);
}

TEST(Sns, ZeroRadiusReturnsCenter) {
  const Network net = linear_net(vec({1.0, 1.0}), 0.0);
  CounterfactualRecord start;
  start.origin = vec({-1.0, -1.0});
  start.counterfactual = vec({0.2, 0.1});
  start.success = true;
  SnsConfig c;
  c.delta = 0.0;
  const auto r = gen_sns(net, start, c);
  ASSERT_TRUE(r.success);
  EXPECT_TRUE(r.counterfactual.isApprox(start.counterfactual, 0.0));
}

TEST(Sns, FailedStartRejected) {
  const Network net = linear_net(vec({1.0}), 0.0);
  CounterfactualRecord start;
  start.origin = start.counterfactual = vec({-1.0});
  EXPECT_THROW(gen_sns(net, start, SnsConfig{}), ConfigError);
}

TEST(Sns, InvariantsOnTrainedNet) {
  const Network net = trained_blobs_net();
  const SnsConfig c = SnsConfig::from_pgd_max_eps(1.5);
  for (int i = 0; i < 8; ++i) {
    const Vec x = vec({-1.0 + 0.15 * i, -0.8});
    if (predict(net, x) == 1) continue;
    const auto seed = gen_elastic_net(net, x, 1, l2_config());
    if (!seed.success) continue;
    const auto r = gen_sns(net, seed, c);
    ASSERT_TRUE(r.success);
    EXPECT_LE((r.counterfactual - seed.counterfactual).norm(), c.delta + 1e-9);
    EXPECT_EQ(predict(net, r.counterfactual), predict(net, seed.counterfactual));
    EXPECT_GE(sns_objective(net, r.counterfactual, 1, c.grid_points),
              sns_objective(net, seed.counterfactual, 1, c.grid_points));
    EXPECT_NO_THROW(validate_record(r, net));
  }
}

TEST(Sns, ObjectiveGradientMatchesFiniteDifferences) {
  const Network net = testing::with_random_biases(init_network(NetworkSpec{{2, 8, 1}}, 6), 6);
  const Vec x = vec({0.4, -0.7});
  const Vec g = sns_objective_grad(net, x, 1, 10);
  const double h = 1e-6;
  for (int i = 0; i < 2; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR(g[i], (sns_objective(net, xp, 1, 10) - sns_objective(net, xm, 1, 10)) / (2 * h), 1e-7);
  }
}

TEST(Records, JsonRoundTripAndDeterminism) {
  const Network net = trained_blobs_net();
  const Vec x = vec({-1.0, -1.0});
  const auto a = gen_elastic_net(net, x, 1, l2_config());
  const auto b = gen_elastic_net(net, x, 1, l2_config());
  EXPECT_EQ(record_to_json(a).dump(), record_to_json(b).dump());
  const auto s = gen_sns(net, a, SnsConfig::from_pgd_max_eps(1.0));
  const auto dir = testing::temp_dir("records");
  write_records_jsonl({a, s}, dir / "r.jsonl");
  const auto back = read_records_jsonl(dir / "r.jsonl", &net);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(record_to_json(back[0]).dump(), record_to_json(a).dump());
  EXPECT_EQ(record_to_json(back[1]).dump(), record_to_json(s).dump());
  EXPECT_EQ(back[0].generating_model.size(), 64u);
}

TEST(Records, ValidationCatchesBadRecords) {
  const Network net = linear_net(vec({1.0}), 0.0);
  CounterfactualRecord r;
  r.origin = vec({-1.0});
  r.counterfactual = vec({-0.5});
  r.cost_l1 = r.cost_l2 = 0.5;
  r.success = true;
  r.target_class = 1;
  EXPECT_THROW(validate_record(r, net), VerificationError);
  r.counterfactual = vec({0.5});
  EXPECT_THROW(validate_record(r, net), VerificationError);  // stale costs
  r.cost_l1 = r.cost_l2 = 1.5;
  EXPECT_NO_THROW(validate_record(r, net));
  const auto dir = testing::temp_dir("records_bad");
  r.counterfactual = vec({-0.25});
  r.cost_l1 = r.cost_l2 = 0.75;
  write_records_jsonl({r}, dir / "bad.jsonl");
  EXPECT_THROW(read_records_jsonl(dir / "bad.jsonl", &net), VerificationError);
}

}  // namespace
}  // namespace cfstab
