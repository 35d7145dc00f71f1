// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// x0 estimators built on a noise-predicting denoiser, the ancestral
// generation loop, and a Monte-Carlo harness that compares estimators.
//
// All three estimators share t1 = floor(t / 2):
//   one_step           invert the forward closed form with eps_hat(z_t, t)
//   midpoint           jump z_t -> z_t1 with eps_hat(z_t, t), then invert at t1
//   improved_midpoint  form x0_hat at t, walk z_t -> z_t1 through t - t1
//                      posterior steps that all reuse x0_hat, then invert at t1
// The two midpoint variants call the denoiser exactly twice when t1 >= 1 and
// once when t == 1.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "condiff/condition.hpp"
#include "condiff/error.hpp"
#include "condiff/numerics.hpp"
#include "condiff/schedule.hpp"

namespace condiff {

/// Noise predictor eps_hat(z_t, t, C). Output shape equals z_t's shape.
using Denoiser = std::function<Array(const Array& zt, int t, const ConditionBundle& cond)>;

enum class Estimator { one_step, midpoint, improved_midpoint };

inline constexpr std::array<Estimator, 3> kAllEstimators = {
    Estimator::one_step, Estimator::midpoint, Estimator::improved_midpoint};

inline std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::one_step: return "one_step";
    case Estimator::midpoint: return "midpoint";
    case Estimator::improved_midpoint: return "improved_midpoint";
  }
  return "?";
}

inline std::optional<Estimator> parse_estimator(std::string_view name) {
  for (Estimator e : kAllEstimators) {
    if (to_string(e) == name) return e;
  }
  return std::nullopt;
}

struct SamplerConfig {
  Estimator method = Estimator::improved_midpoint;
  /// Adds sqrt(beta_tilde) noise on the repeated posterior steps of the
  /// improved midpoint estimator. Off means posterior means only.
  bool intermediate_noise = false;
  int inference_steps = 50;

  void validate(int T) const {
    if (inference_steps < 1 || inference_steps > T) {
      throw std::invalid_argument("SamplerConfig: inference_steps must lie in [1, T]");
    }
  }
};

constexpr int midpoint_timestep(int t) noexcept { return t / 2; }

/// (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)
inline Array one_step_x0(const NoiseSchedule& s, const Array& zt, int t, const Array& eps_hat) {
  const double ab = s.alpha_bar(t);
  if (!(ab > 0.0)) throw NumericError("one_step_x0: alpha_bar_t is zero");
  const double sa = std::sqrt(ab);
  return lincomb(1.0 / sa, zt, -std::sqrt(s.one_minus_alpha_bar(t)) / sa, eps_hat);
}

/// Direct jump z_t -> z_t1 treating eps_hat as the t1 -> t noise.
inline Array midpoint_jump(const NoiseSchedule& s, const Array& zt, int t, int t1,
                           const Array& eps_hat) {
  const double ratio = s.alpha_bar(t) / s.alpha_bar(t1);
  const double sr = std::sqrt(ratio);
  return lincomb(1.0 / sr, zt, -std::sqrt(1.0 - ratio) / sr, eps_hat);
}

/// z_t1 = coef_x0 * x0_hat + coef_zt * z_t after t - t1 posterior-mean steps
/// that all reuse the same x0_hat. Both coefficients are scalars because every
/// step is affine in (x0_hat, z).
struct DescentCoeffs {
  double x0 = 0.0;
  double zt = 1.0;
};

inline DescentCoeffs descent_coeffs(const NoiseSchedule& s, int t, int t1) {
  DescentCoeffs d;
  for (int k = t; k > t1; --k) {
    const PosteriorCoeffs c = posterior_coeffs(s, k);
    d.x0 = c.x0 + c.xt * d.x0;
    d.zt = c.xt * d.zt;
  }
  return d;
}

inline Array midpoint_estimate(const NoiseSchedule& s, const Denoiser& den, const Array& zt, int t,
                               const ConditionBundle& cond) {
  s.require_timestep(t);
  const Array eps_t = den(zt, t, cond);
  const int t1 = midpoint_timestep(t);
  if (t1 == 0) return one_step_x0(s, zt, t, eps_t);
  const Array z_mid = midpoint_jump(s, zt, t, t1, eps_t);
  return one_step_x0(s, z_mid, t1, den(z_mid, t1, cond));
}

/// Walks z from t down to t1 with posterior steps that reuse `x0_hat`.
inline Array descend_to(const NoiseSchedule& s, const Array& x0_hat, Array z, int t, int t1,
                        bool noisy, Rng& rng) {
  for (int k = t; k > t1; --k) {
    if (noisy) {
      z = posterior_step(s, x0_hat, z, k, gauss(rng, z.shape()));
    } else {
      z = posterior_step(s, x0_hat, z, k);
    }
  }
  return z;
}

inline Array improved_midpoint_estimate(const NoiseSchedule& s, const Denoiser& den,
                                        const Array& zt, int t, const ConditionBundle& cond,
                                        const SamplerConfig& cfg, Rng& rng) {
  s.require_timestep(t);
  const Array x0_hat = one_step_x0(s, zt, t, den(zt, t, cond));
  const int t1 = midpoint_timestep(t);
  if (t1 == 0) return x0_hat;
  const Array z_mid = descend_to(s, x0_hat, zt, t, t1, cfg.intermediate_noise, rng);
  return one_step_x0(s, z_mid, t1, den(z_mid, t1, cond));
}

inline Array estimate_x0(const NoiseSchedule& s, const Denoiser& den, const Array& zt, int t,
                         const ConditionBundle& cond, const SamplerConfig& cfg, Rng& rng) {
  switch (cfg.method) {
    case Estimator::one_step: return one_step_x0(s, zt, t, den(zt, t, cond));
    case Estimator::midpoint: return midpoint_estimate(s, den, zt, t, cond);
    case Estimator::improved_midpoint:
      return improved_midpoint_estimate(s, den, zt, t, cond, cfg, rng);
  }
  throw std::logic_error("estimate_x0: unknown estimator");
}

// ----------------------------------------------------------------------------
// Generation
// ----------------------------------------------------------------------------

/// Descending, uniformly strided timesteps from T to 1 (just {T} for one step).
inline std::vector<int> strided_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("strided_timesteps: steps outside [1, T]");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(steps));
  if (steps == 1) {
    out.push_back(T);
    return out;
  }
  for (int j = steps - 1; j >= 0; --j) {
    const auto num = static_cast<std::int64_t>(j) * (T - 1);
    out.push_back(1 + static_cast<int>(num / (steps - 1)));
  }
  return out;
}

/// Known region re-imposed at every generation step (mask 1 = known).
struct KnownRegion {
  Array values;
  Array mask;
};

/// Ancestral generation: z_T ~ N(0, I); at each retained step predict eps,
/// form x0_hat and draw from the posterior toward the next retained step.
/// Returns the last x0_hat. With `known`, the known entries of z are replaced
/// by a forward sample of the known values before every denoiser call, and
/// copied verbatim into the result.
inline Array generate(const NoiseSchedule& s, const Denoiser& den, const ConditionBundle& cond,
                      const SamplerConfig& cfg, Rng& rng, std::vector<std::size_t> shape,
                      const KnownRegion* known = nullptr) {
  cfg.validate(s.steps());
  const std::vector<int> ts = strided_timesteps(s.steps(), cfg.inference_steps);
  Array z = gauss(rng, std::move(shape));
  Array x0_hat;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    if (known != nullptr) {
      const double a = std::sqrt(s.alpha_bar(t));
      const double b = std::sqrt(s.one_minus_alpha_bar(t));
      for (std::size_t j = 0; j < z.size(); ++j) {
        const double n = rng.normal();
        if (known->mask[j] != 0.0) z[j] = a * known->values[j] + b * n;
      }
    }
    x0_hat = one_step_x0(s, z, t, den(z, t, cond));
    if (i + 1 == ts.size()) break;
    const PosteriorCoeffs c = posterior_coeffs_between(s, t, ts[i + 1]);
    const double sd = std::sqrt(c.variance);
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] = c.x0 * x0_hat[j] + c.xt * z[j] + sd * rng.normal();
    }
  }
  if (known != nullptr) {
    for (std::size_t j = 0; j < x0_hat.size(); ++j) {
      if (known->mask[j] != 0.0) x0_hat[j] = known->values[j];
    }
  }
  return x0_hat;
}

// ----------------------------------------------------------------------------
// Estimator comparison
// ----------------------------------------------------------------------------

struct LabeledSample {
  Array x0;
  ConditionBundle cond;
};

/// Draws one (x0, C) pair from the stream it is handed.
using SampleSource = std::function<LabeledSample(Rng&)>;

struct EstimatorComparison {
  struct Row {
    int t = 0;
    std::array<double, 3> mse{};        ///< indexed like kAllEstimators
    std::array<double, 3> std_error{};  ///< standard error of each mean
    double improved_minus_midpoint = 0.0;
    double diff_std_error = 0.0;  ///< paired standard error of the difference
  };
  std::size_t samples = 0;
  std::vector<Row> rows;
};

/// Monte-Carlo reconstruction error E||z0* - x0||^2 of all three estimators at
/// each t. Every estimator sees the same (x0, eps) draws, so the
/// improved-vs-midpoint difference is a paired estimate. Sample i at t_list[j]
/// draws from its own sub-seed, making results independent of loop order.
inline EstimatorComparison compare_estimators(const NoiseSchedule& s, const Denoiser& den,
                                              const SampleSource& source,
                                              const std::vector<int>& t_list, std::size_t n,
                                              Rng& rng, const SamplerConfig& cfg = {}) {
  if (n < 1) throw std::invalid_argument("compare_estimators: n must be >= 1");
  const std::uint64_t base = rng.next_u64();
  EstimatorComparison out;
  out.samples = n;
  for (std::size_t j = 0; j < t_list.size(); ++j) {
    const int t = t_list[j];
    s.require_timestep(t);
    std::array<double, 3> sum{}, sum_sq{};
    double dsum = 0.0, dsum_sq = 0.0;
    const std::uint64_t t_seed = derive_seed(base, j);
    for (std::size_t i = 0; i < n; ++i) {
      Rng r(derive_seed(t_seed, i));
      LabeledSample sample = source(r);
      const Array eps = gauss(r, sample.x0.shape());
      const Array zt = q_sample(s, sample.x0, t, eps);
      std::array<double, 3> err{};
      for (std::size_t m = 0; m < kAllEstimators.size(); ++m) {
        SamplerConfig c = cfg;
        c.method = kAllEstimators[m];
        Rng er(derive_seed(t_seed ^ 0xA5A5A5A5ULL, i));
        const Array est = estimate_x0(s, den, zt, t, sample.cond, c, er);
        err[m] = squared_norm((est - sample.x0).data());
        sum[m] += err[m];
        sum_sq[m] += err[m] * err[m];
      }
      const double d = err[2] - err[1];
      dsum += d;
      dsum_sq += d * d;
    }
    EstimatorComparison::Row row;
    row.t = t;
    const double nn = static_cast<double>(n);
    auto std_err = [nn](double s1, double s2) {
      if (nn < 2) return 0.0;
      const double mean = s1 / nn;
      const double var = std::max(0.0, (s2 - nn * mean * mean) / (nn - 1.0));
      return std::sqrt(var / nn);
    };
    for (std::size_t m = 0; m < 3; ++m) {
      row.mse[m] = sum[m] / nn;
      row.std_error[m] = std_err(sum[m], sum_sq[m]);
    }
    row.improved_minus_midpoint = dsum / nn;
    row.diff_std_error = std_err(dsum, dsum_sq);
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace condiff
