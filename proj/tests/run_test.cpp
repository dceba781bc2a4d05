// Copyright 2026 The Vton Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "vton/run.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "vton/experiment.hpp"
#include "vton/ops.hpp"

namespace vton {
namespace {

namespace fs = std::filesystem;

bool bit_identical(const ParameterSet& a, const ParameterSet& b) {
  if (a.names() != b.names()) return false;
  for (const std::string& n : a.names()) {
    const Tensor &x = a.get(n), &y = b.get(n);
    if (x.shape() != y.shape()) return false;
    for (std::size_t i = 0; i < x.data().size(); ++i) {
      if (std::bit_cast<std::uint64_t>(x.data()[i]) != std::bit_cast<std::uint64_t>(y.data()[i])) return false;
    }
  }
  return true;
}

RunConfig tiny_run() {
  RunConfig c;
  c.unet.base_channels = 8;
  c.unet.heads = 2;
  c.unet.groups = 4;
  c.unet.time_embed_dim = 16;
  c.train.batch_size = 2;
  c.train.seed = 5;
  return c;
}

TEST(RunConfigTest, DefaultsRoundtripAndListEveryKey) {
  const RunConfig c;
  const std::string text = format_run_config(c);
  for (const std::string& k : run_config_keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
  EXPECT_EQ(format_run_config(parse_run_config(text)), text);
  EXPECT_EQ(format_run_config(parse_run_config("")), text);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfigTest, ValuesRoundtripExactly) {
  RunConfig c = tiny_run();
  c.train.lr = 0.1 + 0.2;
  c.train.dream.lambda = std::numeric_limits<double>::infinity();
  c.unet.attention_levels = {};
  c.train.trainable = TrainableSet::kSelfAttention;
  c.train.seed = ~0ull;
  c.codec.mode = CodecMode::kLearned;
  c.schedule.kind = ScheduleKind::kLinear;
  const RunConfig back = parse_run_config(format_run_config(c));
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_FALSE(back.train.dream.enabled());
  EXPECT_TRUE(back.unet.attention_levels.empty());
  EXPECT_EQ(back.train.trainable, TrainableSet::kSelfAttention);
  EXPECT_EQ(back.train.seed, ~0ull);
  EXPECT_EQ(back.codec.mode, CodecMode::kLearned);
  EXPECT_EQ(format_run_config(back), format_run_config(c));
}

TEST(RunConfigTest, CommentsAndWhitespace) {
  const RunConfig c = parse_run_config("# header\n\n  train.steps = 12  # short\ntrain.dream_lambda=0\r\n");
  EXPECT_EQ(c.train.steps, 12);
  EXPECT_EQ(c.train.dream.lambda, 0.0);
  EXPECT_TRUE(c.train.dream.enabled());
}

TEST(RunConfigTest, RejectsUnknownRepeatedAndMalformed) {
  auto offset_of = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ParseError& e) {
      return static_cast<long long>(e.offset());
    }
    return -1LL;
  };
  EXPECT_EQ(offset_of("train.steps = 3\ntrain.pose = 1\n"), 16);
  EXPECT_EQ(offset_of("train.steps = 3\ntrain.steps = 4\n"), 16);
  EXPECT_EQ(offset_of("train.steps = three\n"), 0);
  EXPECT_EQ(offset_of("train.steps\n"), 0);
  EXPECT_EQ(offset_of("train.trainable = all\n"), 0);
  EXPECT_EQ(offset_of("unet.mid_attention = yes\n"), 0);
  EXPECT_EQ(offset_of("unet.channel_mults = 1,,2\n"), 0);
  RunConfig c;
  EXPECT_THROW(set_run_config_value(c, "text.prompt", "x"), std::invalid_argument);
}

TEST(RunConfigTest, ValidateCatchesInconsistency) {
  RunConfig c;
  c.sampler.steps = 2000;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.codec.train.widths = {8, 8};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.unet.groups = 7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class CheckpointTest : public ::testing::Test {
 protected:
  CheckpointTest() {
    dir_ = fs::temp_directory_path() / ("vton_run_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::create_directories(dir_);
    std::vector<SamplePair> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(gen_sample(random_spec(100 + i, 32, 32)));
    const Split split = make_split(samples);
    data_ = encode_examples(split.persons, split.garments, split.masks, Codec::analytic());
  }
  ~CheckpointTest() override { fs::remove_all(dir_); }

  fs::path dir_;
  std::vector<EncodedExample> data_;
  RunConfig config_ = tiny_run();
  NoiseSchedule schedule_ = make_schedule();
};

TEST_F(CheckpointTest, RoundtripIsBitExact) {
  TrainState state = init_train_state(config_.unet, config_.train);
  config_.train.steps = 2;
  train_loop(state, data_, config_.unet, schedule_, config_.train);
  const Checkpoint c = make_checkpoint(config_, state, Codec::analytic());
  const std::string bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 8), "VTONCKPT");
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.step, 2);
  EXPECT_EQ(back.losses, state.losses);
  EXPECT_EQ(back.optimizer_steps, 2);
  const TrainState restored = restore_train_state(back);
  EXPECT_TRUE(bit_identical(restored.params, state.params));
  EXPECT_TRUE(bit_identical(restored.optimizer.first_moment(), state.optimizer.first_moment()));
  EXPECT_TRUE(bit_identical(restored.optimizer.second_moment(), state.optimizer.second_moment()));
  EXPECT_TRUE(restored.rng == state.rng);
  EXPECT_EQ(format_run_config(back.config), format_run_config(config_));
}

TEST_F(CheckpointTest, SpecialValuesSurvive) {
  Checkpoint c;
  ParameterSet p;
  p.add("w", Tensor::of({4}, {-0.0, std::numeric_limits<double>::denorm_min(), 1e308, -1.0 / 3.0}));
  c.sections.emplace_back("extra", p);
  c.losses = {std::numeric_limits<double>::quiet_NaN()};
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  EXPECT_TRUE(bit_identical(*back.section("extra"), p));
  EXPECT_TRUE(std::isnan(back.losses[0]));
  EXPECT_EQ(back.section("missing"), nullptr);
}

TEST_F(CheckpointTest, ResumeFromFileMatchesUninterruptedRun) {
  config_.train.steps = 4;
  TrainState straight = init_train_state(config_.unet, config_.train);
  train_loop(straight, data_, config_.unet, schedule_, config_.train);

  RunConfig first = config_;
  first.train.steps = 2;
  TrainState part = init_train_state(config_.unet, config_.train);
  train_loop(part, data_, config_.unet, schedule_, first.train);
  save_checkpoint(dir_ / "mid.vtck", make_checkpoint(config_, part, Codec::analytic()));
  TrainState resumed = restore_train_state(load_checkpoint(dir_ / "mid.vtck"));
  train_loop(resumed, data_, config_.unet, schedule_, config_.train);

  EXPECT_EQ(resumed.losses, straight.losses);
  EXPECT_TRUE(bit_identical(resumed.params, straight.params));
  EXPECT_FALSE(fs::exists(dir_ / "mid.vtck.tmp"));
}

TEST_F(CheckpointTest, CorruptionIsParseError) {
  TrainState state = init_train_state(config_.unet, config_.train);
  const std::string bytes = encode_checkpoint(make_checkpoint(config_, state, Codec::analytic()));
  for (std::size_t n : {std::size_t{0}, std::size_t{7}, std::size_t{12}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), ParseError) << n;
  }
  EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
  std::string version = bytes;
  version[8] = 9;
  try {
    decode_checkpoint(version);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
  std::string huge = bytes;
  huge[12 + 7] = '\x7f';  // config length
  try {
    decode_checkpoint(huge);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 12u);
  }
  std::string config = bytes;
  config[20] = '!';  // first byte of the embedded config text
  EXPECT_THROW(decode_checkpoint(config), ParseError);
}

TEST_F(CheckpointTest, MismatchedConfigRejectedOnRestore) {
  TrainState state = init_train_state(config_.unet, config_.train);
  Checkpoint c = make_checkpoint(config_, state, Codec::analytic());
  c.config.unet.base_channels = 16;
  EXPECT_THROW(restore_train_state(c), std::invalid_argument);
  c.sections.clear();
  EXPECT_THROW(restore_model(c), std::invalid_argument);
}

TEST_F(CheckpointTest, LearnedCodecTravelsWithCheckpoint) {
  config_.codec.mode = CodecMode::kLearned;
  config_.codec.train.widths = {4, 4, 4};
  config_.codec.train.steps = 2;
  std::vector<SamplePair> samples{gen_sample(random_spec(1, 32, 32))};
  const Codec codec = prepare_codec(config_, make_split(samples));
  ASSERT_EQ(codec.mode(), CodecMode::kLearned);
  TrainState state = init_train_state(config_.unet, config_.train);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(make_checkpoint(config_, state, codec)));
  const TryOnModel model = restore_model(back);
  EXPECT_TRUE(bit_identical(model.codec.params(), codec.params()));
}

TEST(ExperimentTest, PairedEvalOfPerfectModelShape) {
  std::vector<SamplePair> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(gen_sample(random_spec(40 + i, 32, 32)));
  const Split split = make_split(samples);
  RunConfig c = tiny_run();
  const TryOnModel model{c.unet, build_unet(c.unet, 1), Codec::analytic(), make_schedule()};
  const PairedEval e = evaluate_paired(model, SamplerConfig{.steps = 2, .guidance = 2.5, .seed = 1}, split);
  ASSERT_EQ(e.outputs.size(), 3u);
  EXPECT_TRUE(e.outside_exact);
  EXPECT_GT(e.baseline_ssim, 0.0);
  EXPECT_LT(e.baseline_ssim, 1.0);
  // Chunking does not change the noise a request starts from.
  const auto reqs = requests_of(split);
  const SamplerConfig s{.steps = 2, .guidance = 1.0, .seed = 3};
  const auto one = run_tryon_chunked(reqs, model, s, 1);
  const auto all = run_tryon(reqs, model, s);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    EXPECT_LT((one[i].raw.values() - all[i].raw.values()).abs().maxCoeff(), 1e-9);
  }
}

TEST(ExperimentTest, GroundTruthAgainstItself) {
  std::vector<SamplePair> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(gen_sample(random_spec(60 + i, 32, 32)));
  const Split split = make_split(samples);
  std::vector<Tensor> persons;
  for (const TryOnRequest& r : requests_of(split)) persons.push_back(r.person);
  EXPECT_EQ(output_distance(persons, persons), 0.0);
  const FeatureSet f = toy_features(split.persons, Codec::analytic());
  EXPECT_NEAR(frechet_distance(f, f), 0.0, 1e-8);
  EXPECT_NEAR(ssim(persons[0], persons[0]), 1.0, 1e-12);
}

}  // namespace
}  // namespace vton
