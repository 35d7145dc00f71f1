// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense float64 arrays, a reproducible Gaussian RNG, AdamW and a
// central-difference gradient checker. Everything else in the library is
// built on these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "condiff/error.hpp"

namespace condiff {

// ----------------------------------------------------------------------------
// Array
// ----------------------------------------------------------------------------

/// Row-major float64 array. The product of `shape()` always equals `size()`.
class Array {
 public:
  Array() = default;

  explicit Array(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Array(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw std::invalid_argument("Array: shape does not match data length");
    }
  }

  /// 1-D array holding `values`.
  static Array vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Array({n}, std::move(values));
  }

  static Array zeros_like(const Array& other) { return Array(other.shape_); }

  [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t ndim() const noexcept { return shape_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] double* ptr() noexcept { return data_.data(); }
  [[nodiscard]] const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// 2-D element access; the array must be 2-D.
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  Array& operator+=(const Array& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Array& operator-=(const Array& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Array& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Array&, const Array&) = default;

  void check_same(const Array& o) const {
    if (shape_ != o.shape_) throw std::invalid_argument("Array: shape mismatch");
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline Array operator+(Array a, const Array& b) { return a += b; }
inline Array operator-(Array a, const Array& b) { return a -= b; }
inline Array operator*(Array a, double s) { return a *= s; }
inline Array operator*(double s, Array a) { return a *= s; }

/// Returns `a*x + b*y` elementwise.
inline Array lincomb(double a, const Array& x, double b, const Array& y) {
  x.check_same(y);
  Array out = Array::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

// ----------------------------------------------------------------------------
// Rng
// ----------------------------------------------------------------------------

/// SplitMix64 finalizer; used for seeding and sub-seed derivation.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Sub-seed for stream `index` under `master`. Independent of evaluation
/// order, so per-sample streams can be consumed in any order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(master ^ mix64(index ^ 0xD1B54A32D192ED03ULL));
}

/// xoshiro256** generator seeded through SplitMix64. Normal variates use the
/// polar-free Box-Muller transform and cache the second value of each pair.
///
/// Identical seed plus identical call sequence gives a bit-identical stream.
/// Instances are single-owner; copy one to fork a stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {
    std::uint64_t z = seed;
    for (auto& s : state_) {
      z += 0x9E3779B97F4A7C15ULL;
      s = mix64(z);
    }
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n). Uses rejection to stay unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t limit = -n % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= limit) return r % n;
    }
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Array of i.i.d. standard normal draws.
inline Array gauss(Rng& rng, std::vector<std::size_t> shape) {
  if (shape.empty()) throw std::invalid_argument("gauss: shape must be nonempty");
  Array out(std::move(shape));
  for (double& v : out.data()) v = rng.normal();
  return out;
}

// ----------------------------------------------------------------------------
// Named parameter collections
// ----------------------------------------------------------------------------

/// Ordered collection of named arrays. Order is insertion order and is part of
/// the identity of a parameter set: gradients and optimizer moments mirror it.
class ParamSet {
 public:
  std::size_t add(std::string name, Array value) {
    names_.push_back(std::move(name));
    arrays_.push_back(std::move(value));
    return arrays_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const noexcept { return arrays_.size(); }
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_[i]; }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }

  Array& operator[](std::size_t i) { return arrays_[i]; }
  const Array& operator[](std::size_t i) const { return arrays_[i]; }

  /// Index of `name`, or size() when absent.
  [[nodiscard]] std::size_t find(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    return static_cast<std::size_t>(it - names_.begin());
  }

  Array& at(const std::string& name) {
    const std::size_t i = find(name);
    if (i == size()) throw std::out_of_range("ParamSet: no parameter named " + name);
    return arrays_[i];
  }
  const Array& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  /// Same names and shapes, all zeros.
  [[nodiscard]] ParamSet zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Array::zeros_like(arrays_[i]));
    return out;
  }

  void set_zero() noexcept {
    for (auto& a : arrays_) a.fill(0.0);
  }

  [[nodiscard]] std::size_t total_size() const noexcept {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.size();
    return n;
  }

  [[nodiscard]] bool same_layout(const ParamSet& o) const {
    if (names_ != o.names_) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (arrays_[i].shape() != o.arrays_[i].shape()) return false;
    }
    return true;
  }

  /// this += scale * other
  void add_scaled(const ParamSet& other, double scale) {
    for (std::size_t i = 0; i < size(); ++i) {
      auto dst = arrays_[i].data();
      auto src = other.arrays_[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
    }
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Array> arrays_;
};

// ----------------------------------------------------------------------------
// AdamW
// ----------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  AdamWConfig config;
  ParamSet first_moment;
  ParamSet second_moment;
  std::int64_t step = 0;

  static OptimState for_params(const ParamSet& params, AdamWConfig config = {}) {
    return OptimState{config, params.zeros_like(), params.zeros_like(), 0};
  }
};

/// One AdamW update with bias-corrected moments and decoupled weight decay:
///   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
inline void adamw_step(ParamSet& params, const ParamSet& grads, OptimState& state) {
  if (!params.same_layout(grads) || !params.same_layout(state.first_moment) ||
      !params.same_layout(state.second_moment)) {
    throw std::invalid_argument("adamw_step: gradient or moment layout does not match params");
  }
  const AdamWConfig& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= c.lr * c.weight_decay * p[j];
      p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

// ----------------------------------------------------------------------------
// Gradient checking
// ----------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares `analytic` against central differences of `f` around `params`.
///
/// The per-coordinate error is |a - n| / max(|a|, |n|, floor); `floor` keeps
/// coordinates whose true gradient is ~0 from dividing rounding noise by zero.
/// `stride` > 1 checks every stride-th coordinate of each array.
inline GradCheckResult grad_check(const std::function<double(const ParamSet&)>& f,
                                  ParamSet params, const ParamSet& analytic, double h = 1e-5,
                                  double floor = 1e-6, std::size_t stride = 1) {
  if (!params.same_layout(analytic)) {
    throw std::invalid_argument("grad_check: analytic gradient layout does not match params");
  }
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    for (std::size_t j = 0; j < p.size(); j += stride) {
      const double saved = p[j];
      p[j] = saved + h;
      const double up = f(params);
      p[j] = saved - h;
      const double down = f(params);
      p[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: objective is not finite at " + params.name(i));
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result = GradCheckResult{err, i, j, a, numeric, result.checked};
      }
    }
  }
  return result;
}

}  // namespace condiff
