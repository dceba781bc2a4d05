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

#include "vton/unet.hpp"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

namespace vton {
namespace {

// Closed-form count of the toy UNet: independent of the layout code.
Index toy_count_oracle() {
  auto conv = [](Index i, Index o, Index k) { return o * i * k * k + o; };
  auto lin = [](Index i, Index o, bool b) { return o * i + (b ? o : 0); };
  auto gn = [](Index c) { return 2 * c; };
  auto res = [&](Index i, Index o, Index t) {
    return gn(i) + conv(i, o, 3) + lin(t, o, true) + gn(o) + conv(o, o, 3) + (i != o ? conv(i, o, 1) : 0);
  };
  auto attn = [&](Index c) {
    return gn(c) + lin(c, c, true) + gn(c) + 3 * lin(c, c, false) + lin(c, c, true) + gn(c) + lin(c, 8 * c, true) +
           lin(4 * c, c, true) + lin(c, c, true);
  };
  const Index t = 128;
  Index n = conv(9, 32, 3) + lin(32, t, true) + lin(t, t, true);
  n += res(32, 32, t) + attn(32) + conv(32, 32, 3);     // level 0
  n += res(32, 64, t) + attn(64);                       // level 1
  n += res(64, 64, t) + attn(64) + res(64, 64, t);      // mid
  n += res(128, 64, t) + attn(64) + res(96, 64, t) + attn(64) + conv(64, 64, 3);  // up 0
  n += res(96, 32, t) + attn(32) + res(64, 32, t) + attn(32);                      // up 1
  n += gn(32) + conv(32, 4, 3);
  return n;
}

TEST(UNetBuildTest, ToyCountMatchesOracleAndRegression) {
  ParameterSet p = build_unet(UNetConfig::toy(), 1);
  EXPECT_EQ(p.count(), toy_count_oracle());
  EXPECT_EQ(p.count(), 993988);
  EXPECT_GT(p.count(), 500000);
  EXPECT_LT(p.count(), 5000000);
  EXPECT_EQ(count(unet_layout(UNetConfig::toy())), p.count());
}

TEST(UNetBuildTest, ConvInShape) {
  ParameterSet p = build_unet(UNetConfig::toy(), 1);
  EXPECT_EQ(p.get("conv_in.weight").shape(), (Shape{32, 9, 3, 3}));
}

TEST(UNetBuildTest, DeterministicPerSeed) {
  ParameterSet a = build_unet(UNetConfig::toy(), 5), b = build_unet(UNetConfig::toy(), 5), c = build_unet(UNetConfig::toy(), 6);
  ASSERT_EQ(a.names(), b.names());
  bool differs = false;
  for (const auto& n : a.names()) {
    EXPECT_TRUE((a.get(n).values() == b.get(n).values()).all()) << n;
    differs |= !(a.get(n).values() == c.get(n).values()).all();
  }
  EXPECT_TRUE(differs);
}

TEST(UNetBuildTest, NoCrossAttentionAnywhere) {
  ParameterSet p = build_unet(UNetConfig::toy(), 1);
  for (const auto& n : p.names()) EXPECT_FALSE(is_cross_attention_param(n)) << n;
  std::set<std::string> unique(p.names().begin(), p.names().end());
  EXPECT_EQ(unique.size(), p.names().size());
}

TEST(UNetBuildTest, InvalidConfigs) {
  UNetConfig c = UNetConfig::toy();
  c.in_channels = 8;
  EXPECT_THROW(build_unet(c, 1), std::invalid_argument);
  c = UNetConfig::toy();
  c.attention_levels = {2};
  EXPECT_THROW(build_unet(c, 1), std::invalid_argument);
  c = UNetConfig::toy();
  c.channel_mults = {1, 0};
  EXPECT_THROW(build_unet(c, 1), std::invalid_argument);
  EXPECT_THROW(build_unet(UNetConfig::sd15_inpainting(), 1), std::invalid_argument);
}

class UNetForwardTest : public ::testing::Test {
 protected:
  UNetForwardTest() : cfg_(UNetConfig::toy()), p_(build_unet(cfg_, 2)), rng_(3) {}
  UNetConfig cfg_;
  ParameterSet p_;
  Rng rng_;
};

TEST_F(UNetForwardTest, ShapeContract) {
  Tensor y = unet_forward(p_, cfg_, Tensor::randn({1, 9, 32, 12}, rng_), 500);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 32, 12}));
  EXPECT_TRUE(y.values().isFinite().all());
  EXPECT_THROW(unet_forward(p_, cfg_, Tensor::zeros({1, 8, 32, 12}), 1), ShapeError);
  EXPECT_THROW(unet_forward(p_, cfg_, Tensor::zeros({1, 9, 31, 12}), 1), ShapeError);
}

TEST_F(UNetForwardTest, DependsOnTimestep) {
  Tensor z = Tensor::randn({1, 9, 16, 12}, rng_);
  EXPECT_GT((unet_forward(p_, cfg_, z, 0).values() - unet_forward(p_, cfg_, z, 999).values()).abs().maxCoeff(), 1e-6);
}

TEST_F(UNetForwardTest, GarmentHalfInfluencesPersonHalf) {
  // Person occupies rows 0..15, garment rows 16..31. Pinned norm statistics
  // remove the global coupling through group norm, leaving attention as the
  // only path across halves beyond the convolutional reach.
  Tensor z = Tensor::randn({1, 9, 32, 12}, rng_);
  NormPin pin(NormPin::Mode::kRecord);
  Tensor ref = unet_forward(p_, cfg_, z, 500, &pin);
  pin.replay();
  Buffer d = z.values();
  for (Index c = 0; c < 9; ++c) d[(c * 32 + 31) * 12 + 11] += 1.0;
  Tensor out = unet_forward(p_, cfg_, Tensor(z.shape(), d), 500, &pin);
  EXPECT_GT((out.values() - ref.values()).abs().maxCoeff(), 0.0);
  double person = 0.0;
  for (Index c = 0; c < 4; ++c)
    for (Index i = 0; i < 16; ++i)
      for (Index j = 0; j < 12; ++j) person = std::max(person, std::abs(out.at({0, c, i, j}) - ref.at({0, c, i, j})));
  EXPECT_GT(person, 0.0);
}

TEST(ReceptiveFieldTest, ToyRadiusByHand) {
  // conv_in 1; level 0 resnet 2 and stride-2 conv 1; level 1 resnet 2x2;
  // mid 2 resnets 4x2; up level 1 two resnets 4x2, nearest 1, conv 1; up
  // level 0 two resnets 4; conv_out 1.
  EXPECT_EQ(unet_receptive_radius(UNetConfig::toy()), 1 + 2 + 1 + 4 + 8 + 8 + 2 + 4 + 1);
  UNetConfig one = UNetConfig::toy();
  one.channel_mults = {1};
  one.attention_levels = {0};
  // conv_in, resnet, mid 2 resnets, up 2 resnets, conv_out.
  EXPECT_EQ(unet_receptive_radius(one), 1 + 2 + 4 + 4 + 1);
}

class ProbeTest : public ::testing::Test {
 protected:
  // Person rows 0..31 above garment rows 32..63; the bump sits on the last
  // garment row, at least 32 rows from every person row.
  double person_change(const ParameterSet& p, int min_distance) {
    Rng rng(3);
    const Tensor z = Tensor::randn({1, 9, 64, 12}, rng);
    NormPin pin(NormPin::Mode::kRecord);
    const Tensor ref = unet_forward(p, cfg_, z, 500, &pin);
    pin.replay();
    Buffer d = z.values();
    for (Index c = 0; c < 9; ++c) d[(c * 64 + 63) * 12 + 5] += 1.0;
    const Tensor out = unet_forward(p, cfg_, Tensor(z.shape(), d), 500, &pin);
    double change = 0.0;
    for (Index c = 0; c < 4; ++c)
      for (Index i = 0; i <= 63 - min_distance; ++i)
        for (Index j = 0; j < 12; ++j) change = std::max(change, std::abs(out.at({0, c, i, j}) - ref.at({0, c, i, j})));
    return change;
  }
  UNetConfig cfg_ = UNetConfig::toy();
  ParameterSet p_ = build_unet(cfg_, 2);
};

TEST_F(ProbeTest, SilencedAttentionLeavesDistantRowsUntouched) {
  const int r = unet_receptive_radius(cfg_);
  ASSERT_LT(r, 32);
  const ParameterSet silent = silence_self_attention(p_);
  EXPECT_EQ(person_change(silent, r + 1), 0.0);
  EXPECT_GT(person_change(silent, r - 8), 0.0);
}

TEST_F(ProbeTest, SelfAttentionCarriesGarmentToPerson) {
  EXPECT_GT(person_change(p_, unet_receptive_radius(cfg_) + 1), 1e-6);
}

TEST(TrainableTest, PartitionsAndOrdering) {
  ParameterSet p = build_unet(UNetConfig::toy(), 1);
  Index prev = 0;
  for (TrainableSet s : {TrainableSet::kSelfAttention, TrainableSet::kTransformers, TrainableSet::kUnet}) {
    Partition part = select_trainable(p, s);
    EXPECT_EQ(part.trainable.size() + part.frozen.size(), p.size());
    std::set<std::string> all(part.trainable.begin(), part.trainable.end());
    for (const auto& n : part.frozen) EXPECT_TRUE(all.insert(n).second) << n;
    const Index n = p.count(trainable_predicate(s));
    EXPECT_GT(n, prev);
    prev = n;
  }
  Partition sa = select_trainable(p, TrainableSet::kSelfAttention);
  // Four projections per attention block, three weights and one bias.
  const std::size_t blocks = 7;
  EXPECT_EQ(sa.trainable.size(), blocks * 5);
  for (const auto& n : sa.trainable) EXPECT_NE(n.find(".attn1.to_"), std::string::npos) << n;
}

TEST(TrainableTest, ParseNames) {
  EXPECT_EQ(parse_trainable_set("self_attention"), TrainableSet::kSelfAttention);
  EXPECT_EQ(parse_trainable_set("transformers"), TrainableSet::kTransformers);
  EXPECT_EQ(parse_trainable_set("unet"), TrainableSet::kUnet);
  EXPECT_FALSE(parse_trainable_set("attn").has_value());
}

TEST(ConditionDropoutTest, Extremes) {
  Rng rng(1);
  Tensor x = Tensor::randn({5, 4, 2, 2}, rng);
  EXPECT_TRUE((condition_dropout(x, 0.0, rng).values() == x.values()).all());
  EXPECT_TRUE((condition_dropout(x, 1.0, rng).values() == 0.0).all());
  EXPECT_THROW(condition_dropout(x, 1.5, rng), std::invalid_argument);
}

TEST(ConditionDropoutTest, DropsWholeSamples) {
  Rng rng(2);
  Tensor x = Tensor::randn({64, 4, 2, 2}, rng);
  std::vector<bool> dropped;
  Tensor y = condition_dropout(x, 0.5, rng, &dropped);
  for (Index i = 0; i < 64; ++i) {
    const auto seg = y.values().segment(i * 16, 16);
    if (dropped[static_cast<std::size_t>(i)]) {
      EXPECT_TRUE((seg == 0.0).all());
    } else {
      EXPECT_TRUE((seg == x.values().segment(i * 16, 16)).all());
    }
  }
}

TEST(ConditionDropoutTest, MonteCarloRate) {
  Rng rng(3);
  std::vector<bool> dropped;
  condition_dropout(Tensor::ones({100000, 1}), 0.1, rng, &dropped);
  const double frac = static_cast<double>(std::count(dropped.begin(), dropped.end(), true)) / 1e5;
  EXPECT_NEAR(frac, 0.1, 0.005);
}

}  // namespace
}  // namespace vton
