// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Noise schedules and the closed-form forward / posterior formulas.
//
// TIMESTEPS ARE 1-BASED. Valid t runs over [1, T]. alpha_bar(0) == 1 is stored
// so that t = 1 goes through the same code path as every other step.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "condiff/numerics.hpp"

namespace condiff {

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Builds a schedule from beta_1..beta_T (betas[0] is beta_1).
  static NoiseSchedule from_betas(const std::vector<double>& betas) {
    if (betas.empty()) throw std::invalid_argument("NoiseSchedule: need at least one timestep");
    NoiseSchedule s;
    const std::size_t T = betas.size();
    s.betas_.assign(T + 1, 0.0);
    s.alpha_bars_.assign(T + 1, 1.0);
    s.one_minus_alpha_bars_.assign(T + 1, 0.0);
    s.posterior_variances_.assign(T + 1, 0.0);
    for (std::size_t t = 1; t <= T; ++t) {
      const double b = betas[t - 1];
      if (!(b > 0.0 && b < 1.0)) {
        throw std::invalid_argument("NoiseSchedule: beta_t must lie in (0, 1)");
      }
      s.betas_[t] = b;
      s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - b);
      // 1 - ab_{t-1}(1 - b) = (1 - ab_{t-1}) + ab_{t-1} b; no cancellation, and
      // exactly beta_1 at t = 1.
      s.one_minus_alpha_bars_[t] = s.one_minus_alpha_bars_[t - 1] + s.alpha_bars_[t - 1] * b;
      s.posterior_variances_[t] = s.one_minus_alpha_bars_[t - 1] / s.one_minus_alpha_bars_[t] * b;
    }
    return s;
  }

  /// Number of diffusion steps T.
  [[nodiscard]] int steps() const noexcept { return static_cast<int>(betas_.size()) - 1; }

  [[nodiscard]] double beta(int t) const { return betas_.at(checked(t)); }
  [[nodiscard]] double alpha(int t) const { return 1.0 - beta(t); }
  /// Defined for t in [0, T]; alpha_bar(0) == 1.
  [[nodiscard]] double alpha_bar(int t) const { return alpha_bars_.at(checked0(t)); }
  [[nodiscard]] double one_minus_alpha_bar(int t) const {
    return one_minus_alpha_bars_.at(checked0(t));
  }
  /// beta_tilde_t; zero at t = 1.
  [[nodiscard]] double posterior_variance(int t) const {
    return posterior_variances_.at(checked(t));
  }

  /// beta_1..beta_T.
  [[nodiscard]] std::vector<double> betas() const {
    return std::vector<double>(betas_.begin() + 1, betas_.end());
  }

  void require_timestep(int t) const { (void)checked(t); }

 private:
  [[nodiscard]] std::size_t checked(int t) const {
    if (t < 1 || t > steps()) {
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t);
  }
  [[nodiscard]] std::size_t checked0(int t) const {
    if (t < 0 || t > steps()) {
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                              std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t);
  }

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> one_minus_alpha_bars_;
  std::vector<double> posterior_variances_;
};

/// Linear betas from beta_start to beta_end inclusive.
inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule::from_betas(betas);
}

/// Closed-form forward sample sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
inline Array q_sample(const NoiseSchedule& s, const Array& x0, int t, const Array& eps) {
  s.require_timestep(t);
  x0.check_same(eps);
  return lincomb(std::sqrt(s.alpha_bar(t)), x0, std::sqrt(s.one_minus_alpha_bar(t)), eps);
}

/// Mean coefficients and variance of q(x_{t-1} | x_t, x0).
struct PosteriorCoeffs {
  double x0 = 0.0;
  double xt = 0.0;
  double variance = 0.0;
  friend bool operator==(const PosteriorCoeffs&, const PosteriorCoeffs&) = default;
};

inline PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t) {
  const double b = s.beta(t);
  const double denom = s.one_minus_alpha_bar(t);
  return {std::sqrt(s.alpha_bar(t - 1)) * b / denom,
          std::sqrt(1.0 - b) * s.one_minus_alpha_bar(t - 1) / denom, s.posterior_variance(t)};
}

/// Posterior q(x_to | x_from, x0) for to < from, used by strided samplers.
/// Reduces to posterior_coeffs(from) when to == from - 1 (up to rounding).
inline PosteriorCoeffs posterior_coeffs_between(const NoiseSchedule& s, int from, int to) {
  s.require_timestep(from);
  if (to < 0 || to >= from) throw std::out_of_range("posterior_coeffs_between: need 0 <= to < from");
  if (to == from - 1) return posterior_coeffs(s, from);
  const double ab_from = s.alpha_bar(from);
  const double ab_to = s.alpha_bar(to);
  const double ratio = ab_from / ab_to;
  const double jump_var = 1.0 - ratio;
  const double denom = s.one_minus_alpha_bar(from);
  return {std::sqrt(ab_to) * jump_var / denom,
          std::sqrt(ratio) * s.one_minus_alpha_bar(to) / denom,
          s.one_minus_alpha_bar(to) / denom * jump_var};
}

/// Posterior mean mu_tilde_t(x_t, x0) (deterministic mode).
inline Array posterior_step(const NoiseSchedule& s, const Array& x0, const Array& xt, int t) {
  const PosteriorCoeffs c = posterior_coeffs(s, t);
  return lincomb(c.x0, x0, c.xt, xt);
}

/// mu_tilde_t(x_t, x0) + sqrt(beta_tilde_t) eps.
inline Array posterior_step(const NoiseSchedule& s, const Array& x0, const Array& xt, int t,
                            const Array& eps) {
  const PosteriorCoeffs c = posterior_coeffs(s, t);
  Array out = lincomb(c.x0, x0, c.xt, xt);
  eps.check_same(out);
  const double sd = std::sqrt(c.variance);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sd * eps[i];
  return out;
}

}  // namespace condiff
