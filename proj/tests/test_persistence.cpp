// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "condiff/checkpoint.hpp"
#include "condiff/config.hpp"
#include "condiff/persistence.hpp"

using namespace condiff;

namespace {

using Code = CheckpointError::Code;

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c["b"] = Array({2, 3}, std::vector<double>{1, -2, 3.5, 0, 1e-300, -0.0});
  c["a"] = Array::vector({std::numeric_limits<double>::infinity()});
  c["empty"] = Array::vector({});
  return c;
}

Code parse_error(std::vector<std::uint8_t> bytes) {
  try {
    (void)parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a CheckpointError";
  return Code::io;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("condiff_test_" + name)).string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint c = sample_checkpoint();
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes);
  ASSERT_EQ(back.size(), c.size());
  for (const auto& [name, a] : c) {
    const Array& b = back.at(name);
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)), 0);
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, FileSaveLoadSave) {
  const std::string p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_checkpoint(sample_checkpoint(), p1);
  save_checkpoint(load_checkpoint(p1), p2);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
  try {
    (void)load_checkpoint(temp_path("missing.ckpt"));
    ADD_FAILURE();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), Code::io);
  }
}

TEST(Checkpoint, EmptyMapRoundTrips) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint({});
  EXPECT_EQ(bytes.size(), 4u + 1u + 4u);
  EXPECT_TRUE(parse_checkpoint(bytes).empty());
}

TEST(Checkpoint, LayoutIsSortedLittleEndian) {
  Checkpoint c;
  c["z"] = Array::vector({1.0});
  c["a"] = Array::vector({2.0});
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(c);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DSR1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 2);  // record count, low byte first
  EXPECT_EQ(bytes[9], 1);  // first name length
  EXPECT_EQ(bytes[13], 'a');
}

TEST(Checkpoint, DistinctErrorCodes) {
  const std::vector<std::uint8_t> good = serialize_checkpoint(sample_checkpoint());
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(parse_error(bad_magic), Code::bad_magic);
  EXPECT_EQ(parse_error({'D', 'S'}), Code::bad_magic);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_EQ(parse_error(bad_version), Code::bad_version);
  for (std::size_t cut : {std::size_t{5}, std::size_t{12}, good.size() - 1}) {
    EXPECT_EQ(parse_error({good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)}),
              Code::truncated)
        << cut;
  }
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(parse_error(trailing), Code::trailing_bytes);
  // First record is "a": 4+1+4 header, 4 name length, 1 name byte, then dtype.
  auto bad_dtype = good;
  bad_dtype[14] = 7;
  EXPECT_EQ(parse_error(bad_dtype), Code::bad_dtype);
}

TEST(Checkpoint, TextRecords) {
  const std::string s = "line one\nkey = 1.5\n";
  EXPECT_EQ(array_to_text(text_to_array(s)), s);
  EXPECT_EQ(array_to_text(text_to_array("")), "");
}

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const std::string text = format_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, ParsesOverridesAndComments) {
  const RunConfig c = parse_config(
      "# study settings\n"
      "seed = 42\n"
      "lambda1 = 0.25   # weight\n"
      "estimator = midpoint\n"
      "use_bkg_condition = false\n"
      "\n"
      "method = one_step\n");
  EXPECT_EQ(c.seed(), 42u);
  EXPECT_EQ(c.world.seed, 42u);
  EXPECT_EQ(c.train.lambda1, 0.25);
  EXPECT_EQ(c.train.estimator, Estimator::midpoint);
  EXPECT_FALSE(c.train.use_bkg_condition);
  EXPECT_EQ(c.sampler.method, Estimator::one_step);
  EXPECT_EQ(parse_config("estimator = none\n").train.estimator, std::nullopt);
  EXPECT_NE(config_hash(c), config_hash(RunConfig{}));
}

TEST(Config, ExactDoublesSurviveFormatting) {
  RunConfig c;
  c.train.lr = 0.1 + 0.2;
  c.world.sigma_data = 1.0 / 3.0;
  const RunConfig back = parse_config(format_config(c));
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.world.sigma_data, c.world.sigma_data);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("lr = 1\nlr = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("lr 1\n"), ConfigError);
  EXPECT_THROW(parse_config("steps = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("use_id_exp_losses = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("estimator = euler\n"), ConfigError);
  EXPECT_THROW(parse_config("num_id_embeds = 4\n"), ConfigError);
  try {
    (void)parse_config("seed = 1\n\nbogus = 2\n");
    ADD_FAILURE();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Persistence, TrainingCheckpointRestoresState) {
  RunConfig cfg;
  cfg.train.steps = 6;
  cfg.train.batch_size = 4;
  Trainer tr(cfg.world, cfg.train);
  for (int i = 0; i < 3; ++i) (void)tr.step();
  const Checkpoint ckpt = make_training_checkpoint(cfg, tr.state());
  const RestoredRun r = restore_training_checkpoint(parse_checkpoint(serialize_checkpoint(ckpt)));
  EXPECT_EQ(r.state.model.params(), tr.model().params());
  EXPECT_EQ(r.state.opt.second_moment, tr.state().opt.second_moment);
  EXPECT_EQ(r.state.step, 3);
  EXPECT_EQ(format_config(r.config), format_config(cfg));
  EXPECT_EQ(serialize_checkpoint(make_training_checkpoint(r.config, r.state)),
            serialize_checkpoint(ckpt));

  Trainer resumed = restore_trainer(ckpt);
  resumed.run();
  tr.run();
  EXPECT_EQ(resumed.model().params(), tr.model().params());
}

TEST(Persistence, MissingRecordIsConfigError) {
  RunConfig cfg;
  cfg.train.steps = 1;
  Trainer tr(cfg.world, cfg.train);
  Checkpoint ckpt = make_training_checkpoint(cfg, tr.state());
  ckpt.erase("opt.step");
  EXPECT_THROW(restore_training_checkpoint(ckpt), ConfigError);
  Checkpoint shaped = make_training_checkpoint(cfg, tr.state());
  shaped["model.out.b"] = Array::vector({1.0});
  EXPECT_THROW(restore_training_checkpoint(shaped), ConfigError);
}

TEST(Persistence, DatasetRecords) {
  RunConfig cfg;
  const World world(cfg.world);
  Rng rng(1);
  std::vector<FactorSample> s = {world.sample(rng), world.sample(rng), world.sample(rng)};
  const Checkpoint c = make_dataset(cfg, s);
  EXPECT_EQ(c.at("x0").shape(), (std::vector<std::size_t>{3, 32}));
  EXPECT_EQ(c.at("id_class")[1], static_cast<double>(s[1].id_class));
  EXPECT_EQ(c.at("x0").at(2, 5), s[2].x0[5]);
}
