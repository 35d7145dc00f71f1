// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Evaluation metrics, training curves and the two comparison studies.
//
// Swapping metrics are measured on generated samples whose background comes
// from one sample, identity from a second and expression from a third:
//   id_retrieval  fraction recognized as the identity source's class
//   exp_error     mean L2 distance between expression read-outs of the
//                 generated sample and the expression source
//   pose_error    mean L2 distance between the pose recovered from the
//                 generated face and the background source's pose factor
//   recon_mse     per-element MSE of generations under the matched condition

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "condiff/config.hpp"
#include "condiff/denoiser.hpp"
#include "condiff/error.hpp"
#include "condiff/samplers.hpp"
#include "condiff/training.hpp"
#include "condiff/world.hpp"

namespace condiff {

// ----------------------------------------------------------------------------
// Metrics
// ----------------------------------------------------------------------------

inline double metric_id_retrieval(std::span<const Array> gen, std::span<const int> id_class,
                                  const OracleEncoders& enc) {
  if (gen.size() != id_class.size() || gen.empty()) {
    throw std::invalid_argument("metric_id_retrieval: size mismatch or empty input");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gen.size(); ++i) hits += enc.recognize(gen[i]) == id_class[i];
  return static_cast<double>(hits) / static_cast<double>(gen.size());
}

inline double metric_exp_error(std::span<const Array> gen, std::span<const Array> exp_src,
                               const OracleEncoders& enc) {
  if (gen.size() != exp_src.size() || gen.empty()) {
    throw std::invalid_argument("metric_exp_error: size mismatch or empty input");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    s += std::sqrt(squared_norm((enc.expression(gen[i]) - enc.expression(exp_src[i])).data()));
  }
  return s / static_cast<double>(gen.size());
}

inline double metric_pose_error(std::span<const Array> gen, std::span<const Array> pose_true,
                                const OracleEncoders& enc) {
  if (gen.size() != pose_true.size() || gen.empty()) {
    throw std::invalid_argument("metric_pose_error: size mismatch or empty input");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    s += std::sqrt(squared_norm((enc.pose(gen[i]) - pose_true[i]).data()));
  }
  return s / static_cast<double>(gen.size());
}

struct MetricsReport {
  double id_retrieval = 0.0;
  double exp_error = 0.0;
  double pose_error = 0.0;
  double recon_mse = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct SwapTriplet {
  FactorSample bkg;
  FactorSample id_src;
  FactorSample exp_src;
};

/// Independent (bkg, id, exp) triples from the eval stream of `seed`.
inline std::vector<SwapTriplet> draw_eval_set(const World& world, std::uint64_t seed, int n) {
  const std::uint64_t base = stream_seed(seed, Stream::eval);
  std::vector<SwapTriplet> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng r(derive_seed(base, static_cast<std::uint64_t>(i)));
    SwapTriplet tr;
    tr.bkg = world.sample(r);
    tr.id_src = world.sample(r);
    tr.exp_src = world.sample(r);
    out.push_back(std::move(tr));
  }
  return out;
}

/// Generates with the background pinned to the background source. The
/// background is also handed to the sampler as a known region, so a model
/// trained without the background channel still receives it at inference.
inline Array generate_swap(const ConditionalDenoiser& model, const NoiseSchedule& s,
                           const World& world, const SwapTriplet& tr, const TrainConfig& tcfg,
                           const SamplerConfig& scfg, Rng& rng) {
  const ConditionBundle cond =
      build_condition(tr.bkg, tr.id_src, tr.exp_src, world.encoders(), tcfg.condition_options());
  KnownRegion known{tr.bkg.x0, Array::zeros_like(tr.bkg.mask)};
  for (std::size_t j = 0; j < known.mask.size(); ++j) known.mask[j] = 1.0 - tr.bkg.mask[j];
  return decode(generate(s, model.as_denoiser(), cond, scfg, rng, tr.bkg.x0.shape(), &known));
}

inline MetricsReport evaluate_model(const ConditionalDenoiser& model, const NoiseSchedule& s,
                                    const World& world, const TrainConfig& tcfg,
                                    const SamplerConfig& scfg,
                                    const std::vector<SwapTriplet>& eval_set, std::uint64_t seed) {
  if (eval_set.empty()) throw std::invalid_argument("evaluate_model: empty evaluation set");
  const std::uint64_t base = derive_seed(stream_seed(seed, Stream::eval), 0xE7A1ULL);
  std::vector<Array> swapped, exp_src, pose_true;
  std::vector<int> id_class;
  double mse = 0.0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const SwapTriplet& tr = eval_set[i];
    Rng r(derive_seed(base, i));
    swapped.push_back(generate_swap(model, s, world, tr, tcfg, scfg, r));
    exp_src.push_back(tr.exp_src.x0);
    pose_true.push_back(tr.bkg.pose_factor);
    id_class.push_back(tr.id_src.id_class);

    const SwapTriplet matched{tr.bkg, tr.bkg, tr.bkg};
    const Array rec = generate_swap(model, s, world, matched, tcfg, scfg, r);
    mse += squared_norm((rec - tr.bkg.x0).data()) / static_cast<double>(rec.size());
  }
  const OracleEncoders& enc = world.encoders();
  MetricsReport m;
  m.id_retrieval = metric_id_retrieval(swapped, id_class, enc);
  m.exp_error = metric_exp_error(swapped, exp_src, enc);
  m.pose_error = metric_pose_error(swapped, pose_true, enc);
  m.recon_mse = mse / static_cast<double>(eval_set.size());
  return m;
}

// ----------------------------------------------------------------------------
// Training curves
// ----------------------------------------------------------------------------

/// Fixed probe set for the reconstruction-MSE curve: matched-condition samples
/// with a frozen timestep and noise draw each.
struct CurveProbe {
  std::vector<Array> x0;
  std::vector<ConditionBundle> cond;
  std::vector<int> t;
  std::vector<Array> eps;
};

inline CurveProbe draw_curve_probe(const World& world, const NoiseSchedule& s,
                                   const TrainConfig& tcfg, std::uint64_t seed, int n) {
  const std::uint64_t base = stream_seed(seed, Stream::curve);
  CurveProbe p;
  for (int i = 0; i < n; ++i) {
    Rng r(derive_seed(base, static_cast<std::uint64_t>(i)));
    const FactorSample a = world.sample(r);
    p.x0.push_back(a.x0);
    p.cond.push_back(build_condition(a, a, a, world.encoders(), tcfg.condition_options()));
    p.t.push_back(1 + static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(s.steps()))));
    p.eps.push_back(gauss(r, a.x0.shape()));
  }
  return p;
}

/// Per-element MSE of decode(z0*, decode_range) against x0 over the probe set,
/// where z0* is the output of `method`. This is the decoded estimate the
/// constraint losses see during training.
inline double curve_mse(const ConditionalDenoiser& model, const NoiseSchedule& s,
                        const CurveProbe& p, Estimator method, std::uint64_t seed,
                        double decode_range = 0.0) {
  SamplerConfig cfg;
  cfg.method = method;
  const Denoiser den = model.as_denoiser();
  double total = 0.0;
  for (std::size_t i = 0; i < p.x0.size(); ++i) {
    Rng r(derive_seed(seed, i));
    const Array zt = q_sample(s, p.x0[i], p.t[i], p.eps[i]);
    const Array est = decode(estimate_x0(s, den, zt, p.t[i], p.cond[i], cfg, r), decode_range);
    total += squared_norm((est - p.x0[i]).data()) / static_cast<double>(est.size());
  }
  return total / static_cast<double>(p.x0.size());
}

/// Trailing moving average with the given window; output has
/// values.size() - window + 1 entries (empty if too short).
inline std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  std::vector<double> out;
  if (window == 0 || values.size() < window) return out;
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    s += values[i];
    if (i >= window) s -= values[i - window];
    if (i + 1 >= window) out.push_back(s / static_cast<double>(window));
  }
  return out;
}

inline bool is_non_increasing(std::span<const double> v, double tolerance = 0.0) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1] + tolerance) return false;
  }
  return true;
}

// ----------------------------------------------------------------------------
// Studies
// ----------------------------------------------------------------------------

struct CurvePoint {
  std::int64_t step = 0;
  double recon_mse = 0.0;
};

struct StudyRow {
  std::string variant;
  MetricsReport metrics;
  bool failed = false;
  std::string error;  ///< not serialized
  std::vector<CurvePoint> curve;  ///< not part of the study CSV
};

struct StudyReport {
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  std::uint64_t config_hash = 0;
  std::vector<StudyRow> rows;

  [[nodiscard]] const StudyRow& row(const std::string& variant) const {
    for (const auto& r : rows) {
      if (r.variant == variant) return r;
    }
    throw std::out_of_range("StudyReport: no variant " + variant);
  }
};

/// Report values are kept at the precision they are printed with, so the CSV
/// text reproduces the report exactly.
inline double round_sig9(double v) {
  if (!std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline bool rows_equal(const StudyRow& a, const StudyRow& b) {
  if (a.variant != b.variant || a.failed != b.failed) return false;
  return a.failed || a.metrics == b.metrics;
}

inline bool operator==(const StudyReport& a, const StudyReport& b) {
  if (a.seed != b.seed || a.steps != b.steps || a.config_hash != b.config_hash ||
      a.rows.size() != b.rows.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    if (!rows_equal(a.rows[i], b.rows[i])) return false;
  }
  return true;
}

struct Variant {
  std::string name;
  TrainConfig train;
};

using ProgressFn = std::function<void(const std::string& variant, const StepRecord&)>;

/// Trains one variant from scratch, recording the curve every
/// `eval.curve_every` steps (and at steps 0 and `steps`), then evaluates.
/// A NumericError during training or evaluation marks the row failed.
inline StudyRow run_variant(const RunConfig& base, const Variant& v,
                            const ProgressFn& progress = {}) {
  StudyRow row;
  row.variant = v.name;
  try {
    Trainer trainer(base.world, v.train);
    const TrainConfig& tcfg = trainer.config();
    const CurveProbe probe = draw_curve_probe(trainer.world(), trainer.schedule(), tcfg,
                                              tcfg.seed, base.eval.curve_eval_size);
    const Estimator curve_method = tcfg.estimator.value_or(Estimator::one_step);
    const std::uint64_t curve_seed = derive_seed(stream_seed(tcfg.seed, Stream::curve), 0xC0FFEEULL);
    auto record = [&] {
      const double mse = curve_mse(trainer.model(), trainer.schedule(), probe, curve_method,
                                   curve_seed, tcfg.decode_range);
      row.curve.push_back({trainer.state().step, round_sig9(mse)});
    };
    record();
    while (trainer.state().step < tcfg.steps) {
      const StepRecord rec = trainer.step();
      if (progress) progress(v.name, rec);
      if (trainer.state().step % base.eval.curve_every == 0 || trainer.state().step == tcfg.steps) {
        record();
      }
    }
    const auto eval_set = draw_eval_set(trainer.world(), tcfg.seed, base.eval.eval_size);
    MetricsReport m = evaluate_model(trainer.model(), trainer.schedule(), trainer.world(), tcfg,
                                     base.sampler, eval_set, tcfg.seed);
    m.id_retrieval = round_sig9(m.id_retrieval);
    m.exp_error = round_sig9(m.exp_error);
    m.pose_error = round_sig9(m.pose_error);
    m.recon_mse = round_sig9(m.recon_mse);
    row.metrics = m;
  } catch (const NumericError& e) {
    row.failed = true;
    row.error = e.what();
    const double nan = std::nan("");
    row.metrics = {nan, nan, nan, nan};
  }
  return row;
}

inline StudyReport run_study(const RunConfig& base, const std::vector<Variant>& variants,
                             const ProgressFn& progress = {}) {
  StudyReport rep;
  rep.seed = base.seed();
  rep.steps = base.train.steps;
  rep.config_hash = config_hash(base);
  for (const Variant& v : variants) rep.rows.push_back(run_variant(base, v, progress));
  return rep;
}

/// No constraint losses, then the constraint losses driven by each estimator.
inline std::vector<Variant> sampling_variants(const TrainConfig& base) {
  std::vector<Variant> out;
  TrainConfig plain = base;
  plain.use_id_exp_losses = false;
  out.push_back({"no_id_exp_losses", plain});
  for (Estimator e : kAllEstimators) {
    TrainConfig c = base;
    c.use_id_exp_losses = true;
    c.estimator = e;
    out.push_back({std::string(to_string(e)), c});
  }
  return out;
}

/// Full model, no background channel, and fewer identity embeddings.
inline std::vector<Variant> ablation_variants(const TrainConfig& base) {
  TrainConfig full = base;
  full.use_id_exp_losses = true;
  full.use_bkg_condition = true;
  full.num_id_embeds = 3;
  std::vector<Variant> out;
  out.push_back({"full", full});
  TrainConfig no_bkg = full;
  no_bkg.use_bkg_condition = false;
  out.push_back({"no_bkg_condition", no_bkg});
  TrainConfig two = full;
  two.num_id_embeds = 2;
  out.push_back({"id_embeds_2", two});
  TrainConfig one = full;
  one.num_id_embeds = 1;
  out.push_back({"id_embeds_1", one});
  return out;
}

inline StudyReport run_sampling_study(const RunConfig& base, const ProgressFn& progress = {}) {
  return run_study(base, sampling_variants(base.train), progress);
}

inline StudyReport run_ablation_study(const RunConfig& base, const ProgressFn& progress = {}) {
  return run_study(base, ablation_variants(base.train), progress);
}

// ----------------------------------------------------------------------------
// CSV
// ----------------------------------------------------------------------------

inline constexpr std::string_view kStudyCsvHeader =
    "variant,id_retrieval,exp_error,pose_analog,mse,seed,steps";

namespace detail {

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::string study_to_csv(const StudyReport& rep) {
  std::ostringstream out;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(rep.config_hash));
  out << "# config_hash=" << hash << "\n" << kStudyCsvHeader << "\n";
  for (const StudyRow& r : rep.rows) {
    out << r.variant << ',' << detail::csv_number(r.metrics.id_retrieval) << ','
        << detail::csv_number(r.metrics.exp_error) << ','
        << detail::csv_number(r.metrics.pose_error) << ','
        << detail::csv_number(r.metrics.recon_mse) << ',' << rep.seed << ',' << rep.steps << "\n";
  }
  return out.str();
}

inline StudyReport study_from_csv(std::string_view text) {
  StudyReport rep;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header_seen = false;
  auto num = [](const std::string& s) {
    if (s == "nan") return std::nan("");
    return detail::parse_number<double>("csv", s);
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      rep.config_hash = std::stoull(line.substr(14), nullptr, 16);
      continue;
    }
    if (line[0] == '#') continue;
    if (!header_seen) {
      if (line != kStudyCsvHeader) throw ConfigError("study csv: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto f = detail::split_csv(line);
    if (f.size() != 7) throw ConfigError("study csv: expected 7 fields in '" + line + "'");
    StudyRow r;
    r.variant = f[0];
    r.metrics = {num(f[1]), num(f[2]), num(f[3]), num(f[4])};
    r.failed = std::isnan(r.metrics.id_retrieval);
    rep.seed = detail::parse_number<std::uint64_t>("seed", f[5]);
    rep.steps = detail::parse_number<std::int64_t>("steps", f[6]);
    rep.rows.push_back(std::move(r));
  }
  if (!header_seen) throw ConfigError("study csv: missing header");
  return rep;
}

inline std::string curves_to_csv(const StudyReport& rep) {
  std::ostringstream out;
  out << "variant,step,recon_mse\n";
  for (const StudyRow& r : rep.rows) {
    for (const CurvePoint& p : r.curve) {
      out << r.variant << ',' << p.step << ',' << detail::csv_number(p.recon_mse) << "\n";
    }
  }
  return out.str();
}

inline std::string comparison_to_csv(const EstimatorComparison& cmp) {
  std::ostringstream out;
  out << "t,method,mse,std_error,n\n";
  for (const auto& row : cmp.rows) {
    for (std::size_t m = 0; m < kAllEstimators.size(); ++m) {
      out << row.t << ',' << to_string(kAllEstimators[m]) << ','
          << detail::csv_number(row.mse[m]) << ',' << detail::csv_number(row.std_error[m]) << ','
          << cmp.samples << "\n";
    }
  }
  return out.str();
}

inline std::string training_log_header() { return "step,L_DM,L_id,L_exp,total"; }

inline std::string training_log_line(const StepRecord& r) {
  return std::to_string(r.step) + ',' + detail::csv_number(r.dm) + ',' + detail::csv_number(r.id) +
         ',' + detail::csv_number(r.exp) + ',' + detail::csv_number(r.total);
}

}  // namespace condiff
