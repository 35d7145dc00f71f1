// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic factor world standing in for face images.
//
// A data vector is [face | background]:
//   face       = A_id[:, k] + A_exp e + A_pose_face g + sigma_data * noise
//   background = A_bkg b    + A_pose_bkg g           + sigma_data * noise
// The pose factor g is shared by both regions, so pose is recoverable from the
// background alone. Generators are frozen from the world seed. The oracle
// encoders are exact least-squares read-outs of the face generator; each of the
// identity encoders additionally projects the identity coefficients through its
// own low-dimensional random sketch, so any single one is a lossy view.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "condiff/error.hpp"
#include "condiff/numerics.hpp"
#include "condiff/samplers.hpp"
#include "condiff/schedule.hpp"

namespace condiff {

struct WorldSpec {
  int face_dim = 16;
  int bkg_dim = 16;
  int num_classes = 8;
  int exp_dim = 2;
  int pose_dim = 2;
  int bkg_free_dim = 4;
  int id_sketch_dim = 3;
  int num_id_encoders = 3;
  double sigma_data = 0.05;
  double id_scale = 2.0;
  double exp_scale = 1.0;
  double pose_scale = 1.0;
  double bkg_scale = 1.0;
  std::uint64_t seed = 1;

  [[nodiscard]] int data_dim() const noexcept { return face_dim + bkg_dim; }

  void validate() const {
    if (face_dim < 1 || bkg_dim < 1 || num_classes < 2 || exp_dim < 1 || pose_dim < 1 ||
        bkg_free_dim < 0 || id_sketch_dim < 1 || num_id_encoders < 1) {
      throw std::invalid_argument("WorldSpec: dimensions out of range");
    }
    if (num_classes + exp_dim + pose_dim > face_dim) {
      throw std::invalid_argument("WorldSpec: face generator cannot have full column rank");
    }
    if (bkg_free_dim + pose_dim > bkg_dim) {
      throw std::invalid_argument("WorldSpec: background generator cannot have full column rank");
    }
    if (!(sigma_data >= 0.0)) throw std::invalid_argument("WorldSpec: sigma_data must be >= 0");
  }
};

struct FactorSample {
  Array x0;
  int id_class = 0;
  Array exp_factor;
  Array pose_factor;
  Array bkg_factor;
  Array mask;  ///< 1 on the face region
};

/// Zeroes the entries where `mask` is 1 and copies the rest.
inline Array mask_background(const Array& x, const Array& mask) {
  x.check_same(mask);
  Array out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] != 0.0) out[i] = 0.0;
  }
  return out;
}

/// Latent-to-data decoder. The identity at this scale.
inline Array decode(const Array& z) { return z; }

/// Decoder with a bounded output range: range * tanh(z / range), applied
/// elementwise. range <= 0 means the identity.
inline Array decode(const Array& z, double range) {
  if (!(range > 0.0)) return z;
  Array out = z;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = range * std::tanh(z[i] / range);
  return out;
}

/// Elementwise derivative of decode(z, range).
inline Array decode_grad(const Array& z, double range) {
  Array out = Array::zeros_like(z);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(range > 0.0)) {
      out[i] = 1.0;
    } else {
      const double th = std::tanh(z[i] / range);
      out[i] = 1.0 - th * th;
    }
  }
  return out;
}

/// (1 - alpha) e0 + alpha e1
inline Array exp_travel(const Array& e0, const Array& e1, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("exp_travel: alpha outside [0, 1]");
  return lincomb(1.0 - alpha, e0, alpha, e1);
}

namespace detail {

inline Eigen::Map<const Eigen::VectorXd> as_vec(const Array& a) {
  return {a.ptr(), static_cast<Eigen::Index>(a.size())};
}

inline Array to_array(const Eigen::VectorXd& v) {
  return Array::vector(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale) {
  Eigen::MatrixXd m(rows, cols);
  const double sd = scale / std::sqrt(static_cast<double>(rows));
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = sd * rng.normal();
  }
  return m;
}

inline bool full_column_rank(const Eigen::MatrixXd& m) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.rank() == m.cols();
}

}  // namespace detail

/// Exact read-outs standing in for pretrained recognition networks.
class OracleEncoders {
 public:
  OracleEncoders() = default;

  OracleEncoders(const WorldSpec& spec, const Eigen::MatrixXd& face_generator, Rng& rng)
      : spec_(spec) {
    const int D = spec.data_dim();
    const Eigen::MatrixXd pinv =
        face_generator.completeOrthogonalDecomposition().pseudoInverse();  // cols x face_dim
    auto rows_to_full = [&](int first, int count) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(count, D);
      m.leftCols(spec.face_dim) = pinv.middleRows(first, count);
      return m;
    };
    identity_ = rows_to_full(0, spec.num_classes);
    expression_ = rows_to_full(spec.num_classes, spec.exp_dim);
    pose_ = rows_to_full(spec.num_classes + spec.exp_dim, spec.pose_dim);
    for (int i = 0; i < spec.num_id_encoders; ++i) {
      sketches_.push_back(detail::random_matrix(rng, spec.id_sketch_dim, spec.num_classes,
                                                std::sqrt(static_cast<double>(spec.id_sketch_dim))));
      id_maps_.push_back(sketches_.back() * identity_);
    }
  }

  [[nodiscard]] int num_id_encoders() const noexcept { return static_cast<int>(id_maps_.size()); }

  /// Least-squares identity coefficients (one-hot on noiseless samples).
  [[nodiscard]] Array identity_coeffs(const Array& x) const {
    return detail::to_array(identity_ * detail::as_vec(x));
  }

  /// Unnormalized sketch of the identity coefficients for encoder i.
  [[nodiscard]] Array identity_sketch(int i, const Array& x) const {
    return detail::to_array(id_maps_.at(static_cast<std::size_t>(i)) * detail::as_vec(x));
  }

  /// Unit-norm identity embedding from encoder i.
  [[nodiscard]] Array identity_embed(int i, const Array& x) const {
    Array v = identity_sketch(i, x);
    const double n = std::sqrt(squared_norm(v.data()));
    if (!(n > 0.0)) throw NumericError("identity_embed: zero-norm identity sketch");
    return v * (1.0 / n);
  }

  [[nodiscard]] std::vector<Array> identity_embeds(const Array& x, int count) const {
    std::vector<Array> out;
    for (int i = 0; i < count; ++i) out.push_back(identity_embed(i, x));
    return out;
  }

  /// Embedding encoder i assigns to a noiseless sample of class k.
  [[nodiscard]] Array prototype_embed(int i, int k) const {
    Eigen::VectorXd v = sketches_.at(static_cast<std::size_t>(i)).col(k);
    return detail::to_array(v.normalized());
  }

  [[nodiscard]] Array expression(const Array& x) const {
    return detail::to_array(expression_ * detail::as_vec(x));
  }

  /// Pose factor recovered from the face region.
  [[nodiscard]] Array pose(const Array& x) const {
    return detail::to_array(pose_ * detail::as_vec(x));
  }

  /// Class whose prototype has the highest cosine with x's identity
  /// coefficients. Prototypes are one-hot in coefficient space, so this is
  /// the argmax coefficient.
  [[nodiscard]] int recognize(const Array& x) const {
    const Array c = identity_coeffs(x);
    int best = 0;
    for (int k = 1; k < static_cast<int>(c.size()); ++k) {
      if (c[static_cast<std::size_t>(k)] > c[static_cast<std::size_t>(best)]) best = k;
    }
    return best;
  }

  /// Linear maps acting on a full data vector (zero on background columns).
  [[nodiscard]] const Eigen::MatrixXd& id_sketch_map(int i) const {
    return id_maps_.at(static_cast<std::size_t>(i));
  }
  [[nodiscard]] const Eigen::MatrixXd& expression_map() const noexcept { return expression_; }

 private:
  WorldSpec spec_;
  Eigen::MatrixXd identity_;
  Eigen::MatrixXd expression_;
  Eigen::MatrixXd pose_;
  std::vector<Eigen::MatrixXd> sketches_;
  std::vector<Eigen::MatrixXd> id_maps_;
};

class World {
 public:
  explicit World(WorldSpec spec) : spec_(spec) {
    spec_.validate();
    Rng rng(derive_seed(spec_.seed, 0x57A7E));
    a_id_ = detail::random_matrix(rng, spec_.face_dim, spec_.num_classes, spec_.id_scale);
    a_exp_ = detail::random_matrix(rng, spec_.face_dim, spec_.exp_dim, spec_.exp_scale);
    a_pose_face_ = detail::random_matrix(rng, spec_.face_dim, spec_.pose_dim, spec_.pose_scale);
    a_pose_bkg_ = detail::random_matrix(rng, spec_.bkg_dim, spec_.pose_dim, spec_.pose_scale);
    a_bkg_ = detail::random_matrix(rng, spec_.bkg_dim, spec_.bkg_free_dim, spec_.bkg_scale);

    face_generator_.resize(spec_.face_dim, spec_.num_classes + spec_.exp_dim + spec_.pose_dim);
    face_generator_ << a_id_, a_exp_, a_pose_face_;
    Eigen::MatrixXd bkg_generator(spec_.bkg_dim, spec_.bkg_free_dim + spec_.pose_dim);
    bkg_generator << a_bkg_, a_pose_bkg_;
    if (!detail::full_column_rank(face_generator_) || !detail::full_column_rank(bkg_generator)) {
      throw NumericError("World: generator matrices are rank deficient for this seed");
    }

    mask_ = Array({static_cast<std::size_t>(spec_.data_dim())});
    for (int i = 0; i < spec_.face_dim; ++i) mask_[static_cast<std::size_t>(i)] = 1.0;
    encoders_ = OracleEncoders(spec_, face_generator_, rng);
  }

  [[nodiscard]] const WorldSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] const OracleEncoders& encoders() const noexcept { return encoders_; }
  [[nodiscard]] const Array& mask() const noexcept { return mask_; }
  [[nodiscard]] int data_dim() const noexcept { return spec_.data_dim(); }

  /// Builds a sample from explicit factors. Noise is drawn from `rng` (always
  /// data_dim draws, scaled by sigma_data).
  [[nodiscard]] FactorSample compose(int k, const Array& e, const Array& g, const Array& b,
                                     Rng& rng) const {
    if (k < 0 || k >= spec_.num_classes) throw std::out_of_range("World::compose: class index");
    const Eigen::VectorXd face = a_id_.col(k) + a_exp_ * detail::as_vec(e) +
                                 a_pose_face_ * detail::as_vec(g);
    const Eigen::VectorXd bkg = a_bkg_ * detail::as_vec(b) + a_pose_bkg_ * detail::as_vec(g);
    FactorSample s;
    s.x0 = Array({static_cast<std::size_t>(spec_.data_dim())});
    for (int i = 0; i < spec_.face_dim; ++i) s.x0[static_cast<std::size_t>(i)] = face(i);
    for (int i = 0; i < spec_.bkg_dim; ++i) {
      s.x0[static_cast<std::size_t>(spec_.face_dim + i)] = bkg(i);
    }
    for (std::size_t i = 0; i < s.x0.size(); ++i) s.x0[i] += spec_.sigma_data * rng.normal();
    s.id_class = k;
    s.exp_factor = e;
    s.pose_factor = g;
    s.bkg_factor = b;
    s.mask = mask_;
    return s;
  }

  [[nodiscard]] int draw_class(Rng& rng) const {
    return static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec_.num_classes)));
  }
  [[nodiscard]] Array draw_expression(Rng& rng) const {
    return gauss(rng, {static_cast<std::size_t>(spec_.exp_dim)});
  }
  [[nodiscard]] Array draw_pose(Rng& rng) const {
    return gauss(rng, {static_cast<std::size_t>(spec_.pose_dim)});
  }
  [[nodiscard]] Array draw_bkg(Rng& rng) const {
    if (spec_.bkg_free_dim == 0) return Array({0});
    return gauss(rng, {static_cast<std::size_t>(spec_.bkg_free_dim)});
  }

  /// Fresh sample with all factors drawn from their priors.
  [[nodiscard]] FactorSample sample(Rng& rng) const {
    const int k = draw_class(rng);
    const Array e = draw_expression(rng);
    const Array g = draw_pose(rng);
    const Array b = draw_bkg(rng);
    return compose(k, e, g, b, rng);
  }

  /// Noiseless face of class k with zero expression and pose, zero background.
  [[nodiscard]] Array prototype(int k) const {
    Array out({static_cast<std::size_t>(spec_.data_dim())});
    for (int i = 0; i < spec_.face_dim; ++i) out[static_cast<std::size_t>(i)] = a_id_(i, k);
    return out;
  }

  [[nodiscard]] const Eigen::MatrixXd& face_generator() const noexcept { return face_generator_; }
  [[nodiscard]] const Eigen::MatrixXd& pose_background_generator() const noexcept {
    return a_pose_bkg_;
  }

 private:
  WorldSpec spec_;
  Eigen::MatrixXd a_id_, a_exp_, a_pose_face_, a_pose_bkg_, a_bkg_;
  Eigen::MatrixXd face_generator_;
  Array mask_;
  OracleEncoders encoders_;
};

inline FactorSample sample_world(const World& world, Rng& rng) { return world.sample(rng); }

// ----------------------------------------------------------------------------
// Oracle denoisers
// ----------------------------------------------------------------------------

/// Exact noise for data concentrated at `c`:
///   eps_hat = (z_t - sqrt(ab_t) c) / sqrt(1 - ab_t)
inline Denoiser oracle_denoiser_pointmass(const NoiseSchedule& s, Array c) {
  return [s, c = std::move(c)](const Array& zt, int t, const ConditionBundle&) {
    const double a = std::sqrt(s.alpha_bar(t));
    return lincomb(1.0 / std::sqrt(s.one_minus_alpha_bar(t)), zt,
                   -a / std::sqrt(s.one_minus_alpha_bar(t)), c);
  };
}

/// Posterior mean E[x0 | z_t] for x0 ~ N(mu, sigma^2 I).
inline Array gaussian_posterior_mean(const NoiseSchedule& s, const Array& mu, double sigma,
                                     const Array& zt, int t) {
  const double ab = s.alpha_bar(t);
  const double v = sigma * sigma;
  const double denom = ab * v + s.one_minus_alpha_bar(t);
  return lincomb(std::sqrt(ab) * v / denom, zt, s.one_minus_alpha_bar(t) / denom, mu);
}

/// Exact noise prediction for x0 ~ N(mu, sigma^2 I).
inline Denoiser oracle_denoiser_gaussian(const NoiseSchedule& s, Array mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("oracle_denoiser_gaussian: sigma must be > 0");
  return [s, mu = std::move(mu), sigma](const Array& zt, int t, const ConditionBundle&) {
    const Array mean = gaussian_posterior_mean(s, mu, sigma, zt, t);
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(s.one_minus_alpha_bar(t));
    return lincomb(1.0 / b, zt, -a / b, mean);
  };
}

}  // namespace condiff
