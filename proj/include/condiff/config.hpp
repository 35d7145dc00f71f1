// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run configuration and its text form.
//
// One `key = value` per line, `#` starts a comment, blank lines are ignored.
// Keys are the field names of WorldSpec, TrainConfig, DenoiserConfig,
// SamplerConfig and EvalConfig; `seed` sets the master seed shared by the world
// and the training run. Unknown or repeated keys are errors.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "condiff/error.hpp"
#include "condiff/samplers.hpp"
#include "condiff/training.hpp"
#include "condiff/world.hpp"

namespace condiff {

/// Evaluation budget for metrics and training curves.
struct EvalConfig {
  int eval_size = 512;
  int curve_every = 20;
  int curve_eval_size = 256;
};

struct RunConfig {
  WorldSpec world;
  TrainConfig train;
  SamplerConfig sampler;
  EvalConfig eval;

  void set_seed(std::uint64_t seed) noexcept {
    world.seed = seed;
    train.seed = seed;
  }
  [[nodiscard]] std::uint64_t seed() const noexcept { return train.seed; }

  void validate() const {
    try {
      world.validate();
      train.validate();
      sampler.validate(train.num_timesteps);
      if (eval.eval_size < 1 || eval.curve_every < 1 || eval.curve_eval_size < 1) {
        throw std::invalid_argument("EvalConfig: sizes must be positive");
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: invalid value '" + text + "' for key '" + key + "'");
  }
  return v;
}

template <>
inline double parse_number<double>(const std::string& key, const std::string& text) {
  // std::from_chars for floating point is not available on every toolchain.
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw ConfigError("config: invalid value '" + text + "' for key '" + key + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: invalid boolean '" + text + "' for key '" + key + "'");
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Get>
ConfigKey numeric_key(std::string name, Get member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) {
            member(c) = parse_number<T>(name, v);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(member(const_cast<RunConfig&>(c)));
            } else {
              return std::to_string(member(const_cast<RunConfig&>(c)));
            }
          }};
}

template <typename Get>
ConfigKey bool_key(std::string name, Get member) {
  return {name,
          [name, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(name, v); },
          [member](const RunConfig& c) -> std::string {
            return member(const_cast<RunConfig&>(c)) ? "true" : "false";
          }};
}

#define CONDIFF_FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"seed",
                 [](RunConfig& c, const std::string& v) {
                   c.set_seed(parse_number<std::uint64_t>("seed", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed()); }});
    // WorldSpec
    k.push_back(numeric_key<int>("face_dim", CONDIFF_FIELD(world.face_dim)));
    k.push_back(numeric_key<int>("bkg_dim", CONDIFF_FIELD(world.bkg_dim)));
    k.push_back(numeric_key<int>("num_classes", CONDIFF_FIELD(world.num_classes)));
    k.push_back(numeric_key<int>("exp_dim", CONDIFF_FIELD(world.exp_dim)));
    k.push_back(numeric_key<int>("pose_dim", CONDIFF_FIELD(world.pose_dim)));
    k.push_back(numeric_key<int>("bkg_free_dim", CONDIFF_FIELD(world.bkg_free_dim)));
    k.push_back(numeric_key<int>("id_sketch_dim", CONDIFF_FIELD(world.id_sketch_dim)));
    k.push_back(numeric_key<int>("num_id_encoders", CONDIFF_FIELD(world.num_id_encoders)));
    k.push_back(numeric_key<double>("sigma_data", CONDIFF_FIELD(world.sigma_data)));
    k.push_back(numeric_key<double>("id_scale", CONDIFF_FIELD(world.id_scale)));
    k.push_back(numeric_key<double>("exp_scale", CONDIFF_FIELD(world.exp_scale)));
    k.push_back(numeric_key<double>("pose_scale", CONDIFF_FIELD(world.pose_scale)));
    k.push_back(numeric_key<double>("bkg_scale", CONDIFF_FIELD(world.bkg_scale)));
    // TrainConfig
    k.push_back(numeric_key<double>("lambda1", CONDIFF_FIELD(train.lambda1)));
    k.push_back(numeric_key<double>("lambda2", CONDIFF_FIELD(train.lambda2)));
    k.push_back(numeric_key<int>("steps", CONDIFF_FIELD(train.steps)));
    k.push_back(numeric_key<int>("batch_size", CONDIFF_FIELD(train.batch_size)));
    k.push_back({"estimator",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "none") {
                     c.train.estimator.reset();
                     return;
                   }
                   const auto e = parse_estimator(v);
                   if (!e) throw ConfigError("config: unknown estimator '" + v + "'");
                   c.train.estimator = *e;
                 },
                 [](const RunConfig& c) {
                   return c.train.estimator ? std::string(to_string(*c.train.estimator))
                                            : std::string("none");
                 }});
    k.push_back({"intermediate_noise",
                 [](RunConfig& c, const std::string& v) {
                   c.train.intermediate_noise = parse_bool("intermediate_noise", v);
                   c.sampler.intermediate_noise = c.train.intermediate_noise;
                 },
                 [](const RunConfig& c) -> std::string {
                   return c.train.intermediate_noise ? "true" : "false";
                 }});
    k.push_back(numeric_key<int>("num_timesteps", CONDIFF_FIELD(train.num_timesteps)));
    k.push_back(numeric_key<double>("beta_start", CONDIFF_FIELD(train.beta_start)));
    k.push_back(numeric_key<double>("beta_end", CONDIFF_FIELD(train.beta_end)));
    k.push_back(numeric_key<double>("lr", CONDIFF_FIELD(train.lr)));
    k.push_back(numeric_key<double>("weight_decay", CONDIFF_FIELD(train.weight_decay)));
    k.push_back(numeric_key<double>("adam_beta1", CONDIFF_FIELD(train.adam_beta1)));
    k.push_back(numeric_key<double>("adam_beta2", CONDIFF_FIELD(train.adam_beta2)));
    k.push_back(numeric_key<double>("adam_eps", CONDIFF_FIELD(train.adam_eps)));
    k.push_back(bool_key("lr_decay", CONDIFF_FIELD(train.lr_decay)));
    k.push_back(bool_key("use_bkg_condition", CONDIFF_FIELD(train.use_bkg_condition)));
    k.push_back(numeric_key<int>("num_id_embeds", CONDIFF_FIELD(train.num_id_embeds)));
    k.push_back(bool_key("use_id_exp_losses", CONDIFF_FIELD(train.use_id_exp_losses)));
    k.push_back(numeric_key<int>("constraint_warmup", CONDIFF_FIELD(train.constraint_warmup)));
    k.push_back(numeric_key<double>("decode_range", CONDIFF_FIELD(train.decode_range)));
    // DenoiserConfig (data_dim and embedding sizes follow the world)
    k.push_back(numeric_key<int>("num_tokens", CONDIFF_FIELD(train.model.num_tokens)));
    k.push_back(numeric_key<int>("token_width", CONDIFF_FIELD(train.model.token_width)));
    k.push_back(numeric_key<int>("num_blocks", CONDIFF_FIELD(train.model.num_blocks)));
    k.push_back(numeric_key<int>("attn_dim", CONDIFF_FIELD(train.model.attn_dim)));
    k.push_back(numeric_key<int>("cond_width", CONDIFF_FIELD(train.model.cond_width)));
    k.push_back(numeric_key<int>("adapter_hidden", CONDIFF_FIELD(train.model.adapter_hidden)));
    k.push_back(bool_key("tie_id_adapters", CONDIFF_FIELD(train.model.tie_id_adapters)));
    // SamplerConfig
    k.push_back({"method",
                 [](RunConfig& c, const std::string& v) {
                   const auto e = parse_estimator(v);
                   if (!e) throw ConfigError("config: unknown sampler method '" + v + "'");
                   c.sampler.method = *e;
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.sampler.method)); }});
    k.push_back(numeric_key<int>("inference_steps", CONDIFF_FIELD(sampler.inference_steps)));
    // EvalConfig
    k.push_back(numeric_key<int>("eval_size", CONDIFF_FIELD(eval.eval_size)));
    k.push_back(numeric_key<int>("curve_every", CONDIFF_FIELD(eval.curve_every)));
    k.push_back(numeric_key<int>("curve_eval_size", CONDIFF_FIELD(eval.curve_eval_size)));
    return k;
  }();
  return keys;
}

#undef CONDIFF_FIELD

}  // namespace detail

/// Applies `key = value` lines on top of `base`.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  const auto& keys = detail::config_keys();
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    const auto it = std::find_if(keys.begin(), keys.end(),
                                 [&](const detail::ConfigKey& k) { return k.name == key; });
    if (it == keys.end()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    }
    it->set(base, value);
  }
  base.validate();
  return base;
}

/// Canonical text: every key, in table order. parse_config(format_config(c))
/// reproduces c exactly.
inline std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

/// FNV-1a over the canonical text.
inline std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : format_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace condiff
