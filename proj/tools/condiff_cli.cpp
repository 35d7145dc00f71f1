// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 2 configuration or input
// error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "condiff/condiff.hpp"

namespace fs = std::filesystem;
using namespace condiff;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : parse_config(read_file(g.config_path));
  if (g.seed) cfg.set_seed(*g.seed);
  cfg.validate();
  return cfg;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

int cmd_gen_world(const Globals& g, int n) {
  const RunConfig cfg = load_config(g);
  const World world(cfg.world);
  Rng rng(stream_seed(cfg.seed(), Stream::data));
  std::vector<FactorSample> samples;
  for (int i = 0; i < n; ++i) samples.push_back(world.sample(rng));
  const fs::path p = out_path(g, "dataset.ckpt");
  save_checkpoint(make_dataset(cfg, samples), p.string());
  std::cout << "wrote " << n << " samples to " << p.string() << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& resume) {
  RunConfig cfg = load_config(g);
  std::optional<Trainer> trainer;
  if (resume.empty()) {
    trainer.emplace(cfg.world, cfg.train);
  } else {
    RestoredRun r = restore_training_checkpoint(load_checkpoint(resume));
    cfg = r.config;
    trainer.emplace(cfg.world, cfg.train, std::move(r.state));
  }
  std::ofstream log(out_path(g, "train_log.csv"), std::ios::trunc);
  log << training_log_header() << "\n";
  trainer->run([&](const StepRecord& rec) {
    log << training_log_line(rec) << "\n";
    if ((rec.step + 1) % 100 == 0) {
      std::cout << "step " << rec.step + 1 << " total " << rec.total << "\n";
    }
  });
  const fs::path p = out_path(g, "checkpoint.ckpt");
  save_checkpoint(make_training_checkpoint(cfg, trainer->state()), p.string());
  std::cout << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_sample(const Globals& g, const std::string& ckpt, int n) {
  const RestoredRun r = restore_training_checkpoint(load_checkpoint(ckpt));
  RunConfig cfg = r.config;
  if (g.seed) cfg.set_seed(*g.seed);
  const Trainer trainer(cfg.world, cfg.train, r.state);
  const auto triplets = draw_eval_set(trainer.world(), cfg.seed(), n);
  const std::uint64_t base = derive_seed(stream_seed(cfg.seed(), Stream::eval), 0x5A4Dull);
  Checkpoint c;
  std::vector<double> rows, ids, bkg_ids;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    Rng rng(derive_seed(base, i));
    const Array x = generate_swap(trainer.model(), trainer.schedule(), trainer.world(),
                                  triplets[i], trainer.config(), cfg.sampler, rng);
    rows.insert(rows.end(), x.data().begin(), x.data().end());
    ids.push_back(triplets[i].id_src.id_class);
    bkg_ids.push_back(triplets[i].bkg.id_class);
  }
  const auto D = static_cast<std::size_t>(cfg.world.data_dim());
  c["samples"] = Array({triplets.size(), D}, std::move(rows));
  c["id_class"] = Array::vector(std::move(ids));
  c["bkg_id_class"] = Array::vector(std::move(bkg_ids));
  c["config"] = text_to_array(format_config(cfg));
  const fs::path p = out_path(g, "samples.ckpt");
  save_checkpoint(c, p.string());
  std::cout << "wrote " << n << " swapped samples to " << p.string() << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt) {
  const RestoredRun r = restore_training_checkpoint(load_checkpoint(ckpt));
  RunConfig cfg = r.config;
  if (g.seed) cfg.set_seed(*g.seed);
  const Trainer trainer(cfg.world, cfg.train, r.state);
  const auto eval_set = draw_eval_set(trainer.world(), cfg.seed(), cfg.eval.eval_size);
  const MetricsReport m = evaluate_model(trainer.model(), trainer.schedule(), trainer.world(),
                                         trainer.config(), cfg.sampler, eval_set, cfg.seed());
  StudyReport rep;
  rep.seed = cfg.seed();
  rep.steps = r.state.step;
  rep.config_hash = config_hash(cfg);
  rep.rows.push_back({"checkpoint", m, false, {}, {}});
  const std::string csv = study_to_csv(rep);
  write_file(out_path(g, "metrics.csv"), csv);
  std::cout << csv;
  return 0;
}

int cmd_study(const Globals& g, bool ablation) {
  const RunConfig cfg = load_config(g);
  const std::string tag = ablation ? "ablation" : "sampling";
  const ProgressFn progress = [](const std::string& v, const StepRecord& rec) {
    if ((rec.step + 1) % 500 == 0) {
      std::cerr << v << ": step " << rec.step + 1 << " total " << rec.total << "\n";
    }
  };
  const StudyReport rep = ablation ? run_ablation_study(cfg, progress)
                                   : run_sampling_study(cfg, progress);
  const std::string csv = study_to_csv(rep);
  write_file(out_path(g, "study_" + tag + ".csv"), csv);
  write_file(out_path(g, "curves_" + tag + ".csv"), curves_to_csv(rep));
  std::cout << csv;
  for (const StudyRow& row : rep.rows) {
    if (row.failed) std::cerr << row.variant << " failed: " << row.error << "\n";
  }
  return 0;
}

int cmd_compare(const Globals& g, double sigma, int n, const std::string& ckpt) {
  RunConfig cfg = load_config(g);
  std::optional<Trainer> trainer;
  NoiseSchedule s = cfg.train.schedule();
  Denoiser den;
  SampleSource source;
  if (ckpt.empty()) {
    // Gaussian data world N(mu, sigma^2 I) with its exact posterior-mean denoiser.
    const std::size_t D = static_cast<std::size_t>(cfg.world.data_dim());
    Rng mr(derive_seed(cfg.seed(), 0x6A55ull));
    Array mu = gauss(mr, {D});
    den = oracle_denoiser_gaussian(s, mu, sigma);
    source = [mu, sigma](Rng& r) {
      Array x = gauss(r, mu.shape());
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = mu[j] + sigma * x[j];
      return LabeledSample{x, {}};
    };
  } else {
    RestoredRun r = restore_training_checkpoint(load_checkpoint(ckpt));
    if (g.seed) r.config.set_seed(*g.seed);
    cfg = r.config;
    trainer.emplace(cfg.world, cfg.train, std::move(r.state));
    s = trainer->schedule();
    den = trainer->model().as_denoiser();
    const Trainer* tp = &*trainer;
    source = [tp](Rng& r) {
      const FactorSample a = tp->world().sample(r);
      return LabeledSample{
          a.x0, build_condition(a, a, a, tp->world().encoders(), tp->config().condition_options())};
    };
  }
  const int T = s.steps();
  const std::vector<int> ts = {std::max(1, T / 4), std::max(1, T / 2), std::max(1, 3 * T / 4)};
  Rng rng(stream_seed(cfg.seed(), Stream::eval));
  SamplerConfig sc = cfg.sampler;
  const EstimatorComparison cmp =
      compare_estimators(s, den, source, ts, static_cast<std::size_t>(n), rng, sc);
  const std::string csv = comparison_to_csv(cmp);
  write_file(out_path(g, "compare_estimators.csv"), csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"condiff: conditional diffusion on a synthetic factor world"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "key = value configuration file")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", g.out_dir, "output directory");

  int n_world = 1024;
  auto* gen_world = app.add_subcommand("gen-world", "sample a dataset from the factor world");
  gen_world->add_option("-n,--num", n_world, "number of samples")->check(CLI::PositiveNumber);

  std::string resume;
  auto* train = app.add_subcommand("train", "train a denoiser");
  train->add_option("--resume", resume, "checkpoint to continue from");

  std::string ckpt;
  int n_sample = 16;
  auto* sample = app.add_subcommand("sample", "generate swapped samples from a checkpoint");
  sample->add_option("--checkpoint", ckpt, "training checkpoint")->required();
  sample->add_option("-n,--num", n_sample, "number of samples")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "training checkpoint")->required();

  auto* study_sampling = app.add_subcommand("study-sampling", "compare x0 estimators in training");
  auto* study_ablation = app.add_subcommand("study-ablation", "conditioning ablations");

  double sigma = 1.0;
  int n_compare = 10000;
  auto* compare = app.add_subcommand(
      "compare-estimators", "Monte-Carlo reconstruction error of the three x0 estimators");
  compare->add_option("--sigma", sigma, "Gaussian world scale")->check(CLI::PositiveNumber);
  compare->add_option("-n,--num", n_compare, "samples per timestep")->check(CLI::PositiveNumber);
  compare->add_option("--checkpoint", ckpt, "use a trained model instead of the oracle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*gen_world) return cmd_gen_world(g, n_world);
    if (*train) return cmd_train(g, resume);
    if (*sample) return cmd_sample(g, ckpt, n_sample);
    if (*eval) return cmd_eval(g, ckpt);
    if (*study_sampling) return cmd_study(g, false);
    if (*study_ablation) return cmd_study(g, true);
    if (*compare) return cmd_compare(g, sigma, n_compare, ckpt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
