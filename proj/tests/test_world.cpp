// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "condiff/samplers.hpp"
#include "condiff/schedule.hpp"
#include "condiff/training.hpp"
#include "condiff/world.hpp"

using namespace condiff;

namespace {

WorldSpec noiseless_spec() {
  WorldSpec w;
  w.sigma_data = 0.0;
  return w;
}

FactorSample noiseless(const World& world, int k, Rng& rng) {
  return world.compose(k, world.draw_expression(rng), world.draw_pose(rng), world.draw_bkg(rng),
                       rng);
}

}  // namespace

TEST(World, RejectsInvalidSpec) {
  WorldSpec w;
  w.num_classes = 0;
  EXPECT_THROW(World{w}, std::invalid_argument);
  w = {};
  w.sigma_data = -1.0;
  EXPECT_THROW(World{w}, std::invalid_argument);
}

TEST(World, NoiselessZeroFactorsGivePrototype) {
  const World world(noiseless_spec());
  Rng rng(1);
  const Array zero_e({2}), zero_g({2}), zero_b({4});
  for (int k = 0; k < world.spec().num_classes; ++k) {
    const FactorSample s = world.compose(k, zero_e, zero_g, zero_b, rng);
    EXPECT_EQ(s.x0, world.prototype(k));
  }
}

TEST(World, SameSeedSameSample) {
  const World world(WorldSpec{});
  Rng a(77), b(77);
  const FactorSample s1 = world.sample(a);
  const FactorSample s2 = world.sample(b);
  EXPECT_EQ(s1.x0, s2.x0);
  EXPECT_EQ(s1.id_class, s2.id_class);
  EXPECT_EQ(World(WorldSpec{}).face_generator(), world.face_generator());
}

TEST(World, ClassFrequenciesUniform) {
  const World world(WorldSpec{});
  Rng rng(3);
  const int n = 10000, K = world.spec().num_classes;
  std::vector<int> counts(static_cast<std::size_t>(K), 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(world.sample(rng).id_class)];
  const double p = 1.0 / K;
  const double sd = std::sqrt(n * p * (1.0 - p));
  for (int c : counts) EXPECT_NEAR(c, n * p, 3.0 * sd);
}

TEST(World, MaskBackground) {
  const Array ones({32}, 1.0);
  const World world(WorldSpec{});
  const Array m = mask_background(ones, world.mask());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m[i], 0.0);
  for (std::size_t i = 16; i < 32; ++i) EXPECT_EQ(m[i], 1.0);
  EXPECT_EQ(mask_background(ones, Array({32})), ones);
  EXPECT_EQ(mask_background(m, world.mask()), m);
}

TEST(World, MaskPartitionReconstructs) {
  const World world(WorldSpec{});
  Rng rng(4);
  const Array x = world.sample(rng).x0;
  Array face_only = x;
  for (std::size_t i = 0; i < x.size(); ++i) face_only[i] *= world.mask()[i];
  EXPECT_EQ(mask_background(x, world.mask()) + face_only, x);
}

TEST(Encoders, ExpressionExactOnNoiselessSamples) {
  const World world(noiseless_spec());
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const FactorSample s = noiseless(world, world.draw_class(rng), rng);
    const Array e = world.encoders().expression(s.x0);
    for (std::size_t j = 0; j < e.size(); ++j) EXPECT_NEAR(e[j], s.exp_factor[j], 1e-9);
    const Array g = world.encoders().pose(s.x0);
    for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g[j], s.pose_factor[j], 1e-9);
  }
}

TEST(Encoders, SameClassEmbeddingsAgree) {
  const World world(noiseless_spec());
  const OracleEncoders& enc = world.encoders();
  Rng rng(6);
  for (int k = 0; k < world.spec().num_classes; ++k) {
    const Array a = noiseless(world, k, rng).x0;
    const Array b = noiseless(world, k, rng).x0;
    for (int i = 0; i < enc.num_id_encoders(); ++i) {
      EXPECT_GE(cosine_similarity(enc.identity_embed(i, a), enc.identity_embed(i, b)), 0.999);
      EXPECT_NEAR(cosine_similarity(enc.identity_embed(i, a), enc.prototype_embed(i, k)), 1.0,
                  1e-12);
    }
    EXPECT_EQ(enc.recognize(a), k);
  }
}

TEST(Encoders, SingleSketchIsLossy) {
  // Three sketch coordinates cannot separate eight classes injectively in
  // cosine; some pair of prototypes must be closer than any orthogonal pair.
  const World world(WorldSpec{});
  const OracleEncoders& enc = world.encoders();
  double worst = -1.0;
  for (int a = 0; a < 8; ++a) {
    for (int b = a + 1; b < 8; ++b) {
      worst = std::max(worst, cosine_similarity(enc.prototype_embed(0, a), enc.prototype_embed(0, b)));
    }
  }
  EXPECT_GT(worst, 0.5);
}

TEST(World, PoseInferableFromBackground) {
  WorldSpec spec;
  spec.sigma_data = 0.01;
  const World world(spec);
  Rng rng(8);
  const int n = 2000;
  Eigen::MatrixXd X(n, spec.bkg_dim + 1), Y(n, spec.pose_dim);
  for (int i = 0; i < n; ++i) {
    const FactorSample s = world.sample(rng);
    for (int j = 0; j < spec.bkg_dim; ++j) {
      X(i, j) = s.x0[static_cast<std::size_t>(spec.face_dim + j)];
    }
    X(i, spec.bkg_dim) = 1.0;
    for (int j = 0; j < spec.pose_dim; ++j) Y(i, j) = s.pose_factor[static_cast<std::size_t>(j)];
  }
  const Eigen::MatrixXd B = X.colPivHouseholderQr().solve(Y);
  const Eigen::MatrixXd R = Y - X * B;
  for (int j = 0; j < spec.pose_dim; ++j) {
    const double var = (Y.col(j).array() - Y.col(j).mean()).square().sum();
    EXPECT_GT(1.0 - R.col(j).squaredNorm() / var, 0.99);
  }
}

TEST(Decode, IdentityAndBounded) {
  for (const Array& z : {Array::vector({1.5}), Array({2, 3}, 0.25), Array({4, 1, 2}, -3.0)}) {
    EXPECT_EQ(decode(z), z);
    EXPECT_EQ(decode(z, 0.0), z);
  }
  const Array z = Array::vector({-10.0, 0.0, 0.5, 10.0});
  const Array d = decode(z, 3.0);
  EXPECT_LT(std::abs(d[0]), 3.0);
  EXPECT_EQ(d[1], 0.0);
  EXPECT_NEAR(d[2], 3.0 * std::tanh(0.5 / 3.0), 1e-15);
  const Array g = decode_grad(z, 3.0);
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double fd = (3.0 * std::tanh((z[i] + h) / 3.0) - 3.0 * std::tanh((z[i] - h) / 3.0)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-8);
  }
}

TEST(ExpTravel, Endpoints) {
  const Array e0 = Array::vector({0, 2});
  const Array e1 = Array::vector({2, 0});
  EXPECT_EQ(exp_travel(e0, e1, 0.0), e0);
  EXPECT_EQ(exp_travel(e0, e1, 1.0), e1);
  EXPECT_EQ(exp_travel(e0, e1, 0.5), Array::vector({1, 1}));
  EXPECT_THROW(exp_travel(e0, e1, 1.5), std::invalid_argument);
  EXPECT_THROW(exp_travel(e0, Array::vector({1}), 0.5), std::invalid_argument);
}

TEST(OracleDenoiser, PointMassReturnsNoise) {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.1, 0.2});
  const Denoiser d = oracle_denoiser_pointmass(s, Array::vector({1.0}));
  EXPECT_NEAR(d(Array::vector({1.1131032685303162}), 2, {})[0], 0.5, 1e-12);
  Rng rng(9);
  const NoiseSchedule fine = make_linear_schedule(100, 1e-3, 0.2);
  const Array c = gauss(rng, {5});
  const Denoiser dc = oracle_denoiser_pointmass(fine, c);
  for (int t : {1, 10, 100}) {
    const Array eps = gauss(rng, {5});
    const Array zt = q_sample(fine, c, t, eps);
    const Array got = dc(zt, t, {});
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(got[i], eps[i], 1e-9);
    const Array back = one_step_x0(fine, zt, t, got);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(back[i], c[i], 1e-12);
  }
  EXPECT_THROW(dc(Array({5}), 101, {}), std::out_of_range);
}

TEST(OracleDenoiser, GaussianPosteriorExample) {
  // beta_1 = 0.5 gives alpha_bar_1 = 0.5.
  const NoiseSchedule s = NoiseSchedule::from_betas({0.5});
  const Array mean = gaussian_posterior_mean(s, Array::vector({0.0}), 1.0, Array::vector({1.0}), 1);
  EXPECT_NEAR(mean[0], 0.7071068, 1e-7);
  const Denoiser d = oracle_denoiser_gaussian(s, Array::vector({0.0}), 1.0);
  const Array eps = d(Array::vector({1.0}), 1, {});
  EXPECT_NEAR(eps[0], 0.7071068, 1e-7);
  EXPECT_NEAR(one_step_x0(s, Array::vector({1.0}), 1, eps)[0], mean[0], 1e-15);
  EXPECT_THROW(oracle_denoiser_gaussian(s, Array::vector({0.0}), 0.0), std::invalid_argument);
}

TEST(OracleDenoiser, GaussianTendsToPointMass) {
  const NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.2);
  const Array c = Array::vector({0.7, -1.3});
  const Array zt = Array::vector({0.2, 0.4});
  const Array pm = oracle_denoiser_pointmass(s, c)(zt, 30, {});
  const Array g = oracle_denoiser_gaussian(s, c, 1e-7)(zt, 30, {});
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g[i], pm[i], 1e-9);
}
