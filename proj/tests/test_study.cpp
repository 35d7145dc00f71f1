// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "condiff/study.hpp"

using namespace condiff;

namespace {

WorldSpec noiseless_spec() {
  WorldSpec w;
  w.sigma_data = 0.0;
  return w;
}

RunConfig tiny_run(int steps) {
  RunConfig c;
  c.train.steps = steps;
  c.train.batch_size = 4;
  c.train.num_timesteps = 20;
  c.sampler.inference_steps = 5;
  c.eval.eval_size = 8;
  c.eval.curve_every = 2;
  c.eval.curve_eval_size = 4;
  return c;
}

}  // namespace

TEST(Metrics, IdRetrievalExtremes) {
  const World world(noiseless_spec());
  Rng rng(1);
  std::vector<Array> gen;
  std::vector<int> right, wrong;
  for (int i = 0; i < 40; ++i) {
    const FactorSample s = world.sample(rng);
    gen.push_back(s.x0);
    right.push_back(s.id_class);
    wrong.push_back((s.id_class + 1) % 8);
  }
  EXPECT_EQ(metric_id_retrieval(gen, right, world.encoders()), 1.0);
  EXPECT_EQ(metric_id_retrieval(gen, wrong, world.encoders()), 0.0);
  for (Array& g : gen) g *= 3.7;
  EXPECT_EQ(metric_id_retrieval(gen, right, world.encoders()), 1.0);
  EXPECT_THROW(metric_id_retrieval(gen, std::vector<int>{1}, world.encoders()),
               std::invalid_argument);
}

TEST(Metrics, IdRetrievalOfNoiseIsChance) {
  const World world(WorldSpec{});
  Rng rng(2);
  const int n = 10000;
  std::vector<Array> gen;
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    gen.push_back(gauss(rng, {32}));
    ids.push_back(world.draw_class(rng));
  }
  const double p = 1.0 / 8.0;
  EXPECT_NEAR(metric_id_retrieval(gen, ids, world.encoders()), p,
              3.0 * std::sqrt(p * (1 - p) / n));
}

TEST(Metrics, ExpressionError) {
  const World world(noiseless_spec());
  Rng rng(3);
  std::vector<Array> a, b;
  double brute = 0.0;
  for (int i = 0; i < 10; ++i) {
    const FactorSample s = world.sample(rng);
    const FactorSample u = world.sample(rng);
    a.push_back(s.x0);
    b.push_back(u.x0);
    brute += std::sqrt(squared_norm((s.exp_factor - u.exp_factor).data()));
  }
  EXPECT_EQ(metric_exp_error(a, a, world.encoders()), 0.0);
  EXPECT_NEAR(metric_exp_error(a, b, world.encoders()), brute / 10.0, 1e-9);

  // Moving the expression factor by a unit vector moves the read-out by 1.
  const FactorSample s = world.sample(rng);
  const FactorSample t = world.compose(s.id_class, s.exp_factor + Array::vector({0.6, 0.8}),
                                       s.pose_factor, s.bkg_factor, rng);
  const std::vector<Array> g = {t.x0}, e = {s.x0};
  EXPECT_NEAR(metric_exp_error(g, e, world.encoders()), 1.0, 1e-9);
}

TEST(Metrics, PoseError) {
  const World world(noiseless_spec());
  Rng rng(4);
  const FactorSample s = world.sample(rng);
  const std::vector<Array> gen = {s.x0};
  const std::vector<Array> truth = {s.pose_factor};
  EXPECT_NEAR(metric_pose_error(gen, truth, world.encoders()), 0.0, 1e-9);
  const std::vector<Array> offset = {s.pose_factor + Array::vector({1.0, 0.0})};
  EXPECT_NEAR(metric_pose_error(gen, offset, world.encoders()), 1.0, 1e-9);
  EXPECT_EQ(metric_pose_error(gen, truth, world.encoders()),
            metric_pose_error(gen, truth, world.encoders()));
}

TEST(Metrics, PermutationInvariant) {
  const World world(WorldSpec{});
  Rng rng(5);
  std::vector<Array> gen, src;
  std::vector<int> ids;
  for (int i = 0; i < 6; ++i) {
    gen.push_back(gauss(rng, {32}));
    src.push_back(world.sample(rng).x0);
    ids.push_back(i % 8);
  }
  const double id = metric_id_retrieval(gen, ids, world.encoders());
  const double ex = metric_exp_error(gen, src, world.encoders());
  std::reverse(gen.begin(), gen.end());
  std::reverse(src.begin(), src.end());
  std::reverse(ids.begin(), ids.end());
  EXPECT_EQ(metric_id_retrieval(gen, ids, world.encoders()), id);
  EXPECT_NEAR(metric_exp_error(gen, src, world.encoders()), ex, 1e-12);
}

TEST(Curves, MovingAverageAndMonotonicity) {
  const std::vector<double> v = {4, 2, 3, 1, 1};
  const std::vector<double> ma = moving_average(v, 2);
  EXPECT_EQ(ma, (std::vector<double>{3, 2.5, 2, 1}));
  EXPECT_TRUE(is_non_increasing(ma));
  EXPECT_FALSE(is_non_increasing(v));
  EXPECT_TRUE(moving_average(v, 6).empty());
}

TEST(StudyCsv, RoundTrip) {
  StudyReport rep;
  rep.seed = 7;
  rep.steps = 2000;
  rep.config_hash = 0x0123456789abcdefULL;
  rep.rows.push_back({"a", {0.875, 0.123456789, 1.5e-3, 42.0}, false, "", {}});
  StudyRow failed;
  failed.variant = "b";
  failed.failed = true;
  failed.metrics = {std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  rep.rows.push_back(failed);
  const std::string csv = study_to_csv(rep);
  EXPECT_NE(csv.find("variant,id_retrieval,exp_error,pose_analog,mse,seed,steps\n"),
            std::string::npos);
  const StudyReport back = study_from_csv(csv);
  EXPECT_TRUE(back == rep);
  EXPECT_EQ(study_to_csv(back), csv);
  EXPECT_THROW(study_from_csv("bad,header\n"), ConfigError);
}

TEST(Study, ZeroStepsGivesIdenticalRows) {
  const StudyReport rep = run_sampling_study(tiny_run(0));
  ASSERT_EQ(rep.rows.size(), 4u);
  EXPECT_EQ(rep.rows[0].variant, "no_id_exp_losses");
  EXPECT_EQ(rep.rows[3].variant, "improved_midpoint");
  for (const StudyRow& r : rep.rows) {
    EXPECT_FALSE(r.failed) << r.error;
    EXPECT_EQ(r.metrics, rep.rows[0].metrics) << r.variant;
    EXPECT_GE(r.metrics.id_retrieval, 0.0);
    EXPECT_LE(r.metrics.id_retrieval, 1.0);
  }
}

TEST(Study, RerunIsIdentical) {
  const RunConfig cfg = tiny_run(4);
  const StudyReport a = run_ablation_study(cfg);
  const StudyReport b = run_ablation_study(cfg);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(study_to_csv(a), study_to_csv(b));
  EXPECT_EQ(curves_to_csv(a), curves_to_csv(b));
  ASSERT_EQ(a.rows.size(), 4u);
  EXPECT_EQ(a.rows[0].curve.size(), 3u);  // steps 0, 2 and 4
  EXPECT_EQ(a.config_hash, config_hash(cfg));
}

TEST(Study, DivergentVariantIsRecordedAsFailed) {
  RunConfig cfg = tiny_run(3);
  cfg.train.lr = 1e300;
  const StudyRow row = run_variant(cfg, {"huge_lr", cfg.train});
  EXPECT_TRUE(row.failed);
  EXPECT_FALSE(row.error.empty());
  EXPECT_TRUE(std::isnan(row.metrics.id_retrieval));
}
