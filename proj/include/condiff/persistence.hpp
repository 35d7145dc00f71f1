// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint layouts for training runs and exported datasets.
//
// Training checkpoint records:
//   config            run configuration text (one code unit per element)
//   model.<name>      denoiser parameters
//   opt.m.<name>      AdamW first moments
//   opt.v.<name>      AdamW second moments
//   opt.step          [1] optimizer step count
//   step              [1] training step
//   schedule.betas    [T] noise schedule, informational
//
// Dataset records: x0 [n, D], id_class [n], exp_factor [n, m],
// pose_factor [n, g], bkg_factor [n, b], mask [D], config.

#include <cstdint>
#include <string>
#include <vector>

#include "condiff/checkpoint.hpp"
#include "condiff/config.hpp"
#include "condiff/training.hpp"
#include "condiff/world.hpp"

namespace condiff {

namespace detail {

inline Array scalar_array(double v) { return Array::vector({v}); }

inline const Array& require_record(const Checkpoint& c, const std::string& name) {
  const auto it = c.find(name);
  if (it == c.end()) throw ConfigError("checkpoint: missing record '" + name + "'");
  return it->second;
}

inline double require_scalar(const Checkpoint& c, const std::string& name) {
  const Array& a = require_record(c, name);
  if (a.size() != 1) throw ConfigError("checkpoint: record '" + name + "' is not a scalar");
  return a[0];
}

inline ParamSet read_params(const Checkpoint& c, const std::string& prefix,
                            const ParamSet& layout) {
  ParamSet out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::string& name = layout.name(i);
    const Array& a = require_record(c, prefix + name);
    if (a.shape() != layout[i].shape()) {
      throw ConfigError("checkpoint: record '" + prefix + name + "' has the wrong shape");
    }
    out.add(name, a);
  }
  return out;
}

inline void write_params(Checkpoint& c, const std::string& prefix, const ParamSet& p) {
  for (std::size_t i = 0; i < p.size(); ++i) c[prefix + p.name(i)] = p[i];
}

inline Array stack_rows(const std::vector<Array>& rows, std::size_t width) {
  std::vector<double> data;
  data.reserve(rows.size() * width);
  for (const Array& r : rows) data.insert(data.end(), r.data().begin(), r.data().end());
  return Array({rows.size(), width}, std::move(data));
}

}  // namespace detail

inline Checkpoint make_training_checkpoint(const RunConfig& cfg, const TrainState& state) {
  Checkpoint c;
  c["config"] = text_to_array(format_config(cfg));
  detail::write_params(c, "model.", state.model.params());
  detail::write_params(c, "opt.m.", state.opt.first_moment);
  detail::write_params(c, "opt.v.", state.opt.second_moment);
  c["opt.step"] = detail::scalar_array(static_cast<double>(state.opt.step));
  c["step"] = detail::scalar_array(static_cast<double>(state.step));
  c["schedule.betas"] = Array::vector(cfg.train.schedule().betas());
  return c;
}

struct RestoredRun {
  RunConfig config;
  TrainState state;
};

/// Inverse of make_training_checkpoint. Throws ConfigError on missing or
/// mis-shaped records.
inline RestoredRun restore_training_checkpoint(const Checkpoint& c) {
  RestoredRun out;
  out.config = parse_config(array_to_text(detail::require_record(c, "config")));
  const TrainConfig tc = Trainer::fit_model(out.config.train, out.config.world);
  const ParamSet layout = ConditionalDenoiser::make_layout(tc.model);
  out.state.model = ConditionalDenoiser(tc.model, detail::read_params(c, "model.", layout));
  out.state.opt.config = tc.optimizer();
  out.state.opt.first_moment = detail::read_params(c, "opt.m.", layout);
  out.state.opt.second_moment = detail::read_params(c, "opt.v.", layout);
  out.state.opt.step = static_cast<std::int64_t>(detail::require_scalar(c, "opt.step"));
  out.state.step = static_cast<std::int64_t>(detail::require_scalar(c, "step"));
  if (out.state.step > 0) out.state.opt.config.lr = scheduled_lr(tc, out.state.step - 1);
  return out;
}

inline Trainer restore_trainer(const Checkpoint& c) {
  RestoredRun r = restore_training_checkpoint(c);
  return Trainer(r.config.world, r.config.train, std::move(r.state));
}

inline Checkpoint make_dataset(const RunConfig& cfg, const std::vector<FactorSample>& samples) {
  const WorldSpec& w = cfg.world;
  std::vector<Array> x0, exp, pose, bkg;
  std::vector<double> ids;
  for (const FactorSample& s : samples) {
    x0.push_back(s.x0);
    exp.push_back(s.exp_factor);
    pose.push_back(s.pose_factor);
    bkg.push_back(s.bkg_factor);
    ids.push_back(static_cast<double>(s.id_class));
  }
  Checkpoint c;
  c["config"] = text_to_array(format_config(cfg));
  c["x0"] = detail::stack_rows(x0, static_cast<std::size_t>(w.data_dim()));
  c["exp_factor"] = detail::stack_rows(exp, static_cast<std::size_t>(w.exp_dim));
  c["pose_factor"] = detail::stack_rows(pose, static_cast<std::size_t>(w.pose_dim));
  c["bkg_factor"] = detail::stack_rows(bkg, static_cast<std::size_t>(w.bkg_free_dim));
  c["id_class"] = Array::vector(std::move(ids));
  c["mask"] = samples.empty() ? Array::vector({}) : samples.front().mask;
  return c;
}

}  // namespace condiff
