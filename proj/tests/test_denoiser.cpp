// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "condiff/denoiser.hpp"
#include "condiff/world.hpp"

using namespace condiff;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.data_dim = 6;
  c.num_tokens = 3;
  c.token_width = 4;
  c.num_blocks = 2;
  c.attn_dim = 3;
  c.cond_width = 5;
  c.adapter_hidden = 4;
  return c;
}

ConditionBundle random_condition(const DenoiserConfig& c, Rng& rng, int num_id = 3) {
  ConditionBundle cond;
  cond.masked_bkg = gauss(rng, {static_cast<std::size_t>(c.data_dim)});
  for (int i = 0; i < num_id; ++i) {
    Array e = gauss(rng, {static_cast<std::size_t>(c.id_embed_dim)});
    cond.id_embeds.push_back(e * (1.0 / std::sqrt(squared_norm(e.data()))));
  }
  cond.exp_embed = gauss(rng, {static_cast<std::size_t>(c.exp_embed_dim)});
  return cond;
}

/// Scalar probe L = <w, forward(z)> so that dL/dout = w.
double probe(const ConditionalDenoiser& m, const Array& z, int t, const ConditionBundle& cond,
             const Array& w) {
  return dot(m.forward(z, t, cond).data(), w.data());
}

}  // namespace

TEST(Denoiser, ZeroOutputInitGivesZero) {
  Rng rng(1);
  const DenoiserConfig c = small_config();
  const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng);
  for (int i = 0; i < 5; ++i) {
    const ConditionBundle cond = random_condition(c, rng);
    const Array out = m.forward(gauss(rng, {6}), 1 + i * 7, cond);
    EXPECT_EQ(out, Array({6}));
  }
}

TEST(Denoiser, DeterministicAndShapePreserving) {
  Rng rng(2);
  const DenoiserConfig c = small_config();
  const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng, false);
  const ConditionBundle cond = random_condition(c, rng);
  const Array z = gauss(rng, {6});
  const Array a = m.forward(z, 5, cond);
  EXPECT_EQ(a, m.forward(z, 5, cond));
  EXPECT_EQ(a.shape(), z.shape());
}

TEST(Denoiser, ShapeMismatchThrows) {
  Rng rng(3);
  const DenoiserConfig c = small_config();
  const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng);
  ConditionBundle cond = random_condition(c, rng);
  EXPECT_THROW((void)m.forward(Array({5}), 1, cond), std::invalid_argument);
  cond.exp_embed = Array({3});
  EXPECT_THROW((void)m.forward(Array({6}), 1, cond), std::invalid_argument);
  cond = random_condition(c, rng, 4);
  EXPECT_THROW((void)m.forward(Array({6}), 1, cond), std::invalid_argument);
}

TEST(Denoiser, AttentionRowsSumToOne) {
  Rng rng(4);
  const DenoiserConfig c = small_config();
  const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng, false);
  ConditionalDenoiser::Cache cache;
  (void)m.forward(gauss(rng, {6}), 3, random_condition(c, rng), cache);
  for (std::size_t b = 0; b < static_cast<std::size_t>(c.num_blocks); ++b) {
    const std::vector<double> w = ConditionalDenoiser::attention_weights(cache, b);
    const std::size_t nc = w.size() / static_cast<std::size_t>(c.num_tokens);
    ASSERT_EQ(nc, 4u);
    for (int i = 0; i < c.num_tokens; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < nc; ++j) s += w[static_cast<std::size_t>(i) * nc + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Denoiser, IdTokenPermutationTiedVsUntied) {
  for (bool tied : {true, false}) {
    Rng rng(5);
    DenoiserConfig c = small_config();
    c.tie_id_adapters = tied;
    const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng, false);
    const ConditionBundle cond = random_condition(c, rng);
    ConditionBundle perm = cond;
    std::swap(perm.id_embeds[0], perm.id_embeds[2]);
    const Array z = gauss(rng, {6});
    const Array a = m.forward(z, 4, cond);
    const Array b = m.forward(z, 4, perm);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    if (tied) {
      EXPECT_LT(diff, 1e-12);
    } else {
      EXPECT_GT(diff, 1e-6);
    }
  }
}

class DenoiserGradient : public ::testing::TestWithParam<int> {};

TEST_P(DenoiserGradient, MatchesFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(100 + GetParam()));
  const DenoiserConfig c = small_config();
  ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng, false);
  const ConditionBundle cond = random_condition(c, rng);
  const Array z = gauss(rng, {6});
  const Array w = gauss(rng, {6});
  const int t = 1 + static_cast<int>(rng.uniform_int(50));

  ConditionalDenoiser::Cache cache;
  (void)m.forward(z, t, cond, cache);
  ParamSet grads = m.params().zeros_like();
  const Array gz = m.backward(cache, w, grads);

  const GradCheckResult r = grad_check(
      [&](const ParamSet& p) { return probe(ConditionalDenoiser(c, p), z, t, cond, w); },
      m.params(), grads);
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst param " << r.worst_param;

  const double h = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Array zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    const double fd = (probe(m, zp, t, cond, w) - probe(m, zm, t, cond, w)) / (2 * h);
    EXPECT_NEAR(gz[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, DenoiserGradient, ::testing::Range(0, 5));

TEST(Denoiser, ZeroUpstreamGivesZeroGradients) {
  Rng rng(6);
  const DenoiserConfig c = small_config();
  const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng, false);
  ConditionalDenoiser::Cache cache;
  (void)m.forward(gauss(rng, {6}), 2, random_condition(c, rng), cache);
  ParamSet grads = m.params().zeros_like();
  const Array gz = m.backward(cache, Array({6}), grads);
  EXPECT_EQ(grads, m.params().zeros_like());
  EXPECT_EQ(gz, Array({6}));
}

TEST(Denoiser, DeadExpressionPathHasZeroGradient) {
  // With a zero expression embedding and zero adapter biases, the expression
  // adapter's first-layer weights see a zero input and get no gradient.
  Rng rng(7);
  const DenoiserConfig c = small_config();
  const ConditionalDenoiser m = ConditionalDenoiser::initialize(c, rng, false);
  ConditionBundle cond = random_condition(c, rng);
  cond.exp_embed = Array({2});
  ConditionalDenoiser::Cache cache;
  (void)m.forward(gauss(rng, {6}), 2, cond, cache);
  ParamSet grads = m.params().zeros_like();
  (void)m.backward(cache, gauss(rng, {6}), grads);
  for (double g : grads.at("adapter.exp.w1").data()) EXPECT_EQ(g, 0.0);
}

TEST(Denoiser, BuildConditionMatchedAndSwapped) {
  WorldSpec spec;
  spec.sigma_data = 0.0;
  const World world(spec);
  Rng rng(8);
  const FactorSample a = world.sample(rng);
  const ConditionBundle cond = build_condition(a, a, a, world.encoders());
  EXPECT_EQ(cond.masked_bkg, mask_background(a.x0, a.mask));
  ASSERT_EQ(cond.id_embeds.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const Array& e = cond.id_embeds[static_cast<std::size_t>(i)];
    EXPECT_NEAR(dot(e.data(), world.encoders().prototype_embed(i, a.id_class).data()), 1.0, 1e-12);
  }
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(cond.exp_embed[j], a.exp_factor[j], 1e-9);
  const ConditionBundle two = build_condition(a, a, a, world.encoders(), {2, true});
  EXPECT_EQ(two.id_embeds.size(), 2u);
  const ConditionBundle no_bkg = build_condition(a, a, a, world.encoders(), {3, false});
  EXPECT_EQ(no_bkg.masked_bkg, a.mask);
}
