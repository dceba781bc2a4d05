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

#include "vton/codec.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "vton/gradcheck.hpp"
#include "vton/ops.hpp"
#include "vton/synth.hpp"

namespace vton {
namespace {

bool same(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && (a.values() == b.values()).all(); }

double max_abs_diff(const Tensor& a, const Tensor& b) { return (a.values() - b.values()).abs().maxCoeff(); }

// Image that is constant on every 8x8 block.
Tensor block_constant(Index b, Index h, Index w, Rng& rng, bool dyadic) {
  Tensor blocks = Tensor::uniform({b, 3, h / 8, w / 8}, -1.0, 1.0, rng);
  if (dyadic) {
    Buffer v = blocks.values();
    for (Index i = 0; i < v.size(); ++i) v[i] = std::round(v[i] * 8.0) / 8.0;
    blocks = Tensor(blocks.shape(), v);
  }
  return upsample_nearest(blocks, 8);
}

TEST(AnalyticCodecTest, ShapeContract) {
  const Codec c = Codec::analytic();
  Rng rng(1);
  const Tensor z = c.encode(Tensor::uniform({2, 3, 128, 96}, -1, 1, rng));
  EXPECT_EQ(z.shape(), (Shape{2, 4, 16, 12}));
  EXPECT_EQ(c.decode(Tensor::zeros({1, 4, 16, 12})).shape(), (Shape{1, 3, 128, 96}));
}

TEST(AnalyticCodecTest, MixingHasOrthonormalColumns) {
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (int k = 0; k < 4; ++k) dot += Codec::kMix[k][a] * Codec::kMix[k][b];
      EXPECT_EQ(dot, a == b ? 1.0 : 0.0);
    }
  }
}

TEST(AnalyticCodecTest, ConstantImageGivesScaledRowSums) {
  const Tensor z = Codec::analytic().encode(Tensor::full({1, 3, 16, 16}, 0.5));
  for (Index k = 0; k < 4; ++k) {
    const double row_sum = Codec::kMix[k][0] + Codec::kMix[k][1] + Codec::kMix[k][2];
    for (Index y = 0; y < 2; ++y)
      for (Index x = 0; x < 2; ++x) EXPECT_EQ(z.at({0, k, y, x}), 0.5 * row_sum);
  }
}

TEST(AnalyticCodecTest, DyadicBlockConstantRoundtripIsExact) {
  const Codec c = Codec::analytic();
  Rng rng(2);
  const Tensor x = block_constant(2, 64, 48, rng, true);
  EXPECT_TRUE(same(c.decode(c.encode(x)), x));
}

TEST(AnalyticCodecTest, BlockConstantRoundtripToRounding) {
  const Codec c = Codec::analytic();
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = block_constant(1, 128, 96, rng, false);
    EXPECT_LE(max_abs_diff(c.decode(c.encode(x)), x), 1e-12);
  }
}

TEST(AnalyticCodecTest, EncodeIsLinear) {
  const Codec c = Codec::analytic();
  Rng rng(4);
  const Tensor x = Tensor::uniform({1, 3, 32, 24}, -1, 1, rng);
  const Tensor y = Tensor::uniform({1, 3, 32, 24}, -1, 1, rng);
  const double a = 0.37, b = -1.25;
  EXPECT_LE(max_abs_diff(c.encode(x * a + y * b), c.encode(x) * a + c.encode(y) * b), 1e-12);
}

TEST(AnalyticCodecTest, ZeroLatentDecodesToZero) {
  const Tensor img = Codec::analytic().decode(Tensor::zeros({1, 4, 4, 3}));
  EXPECT_EQ(img.values().abs().maxCoeff(), 0.0);
}

TEST(AnalyticCodecTest, DecodeClampsToUnitRange) {
  const Tensor img = Codec::analytic().decode(Tensor::full({1, 4, 2, 2}, 3.0));
  EXPECT_EQ(img.values().maxCoeff(), 1.0);
  EXPECT_GE(img.values().minCoeff(), -1.0);
}

TEST(AnalyticCodecTest, RejectsBadExtents) {
  const Codec c = Codec::analytic();
  EXPECT_THROW(c.encode(Tensor::zeros({1, 3, 20, 16})), ShapeError);
  EXPECT_THROW(c.encode(Tensor::zeros({1, 4, 16, 16})), ShapeError);
  EXPECT_THROW(c.decode(Tensor::zeros({1, 3, 2, 2})), ShapeError);
}

TEST(LearnedCodecTest, LayoutHasFourChannelBottleneck) {
  const Layout l = learned_codec_layout({8, 16, 32});
  auto find = [&l](const std::string& n) {
    for (const ParamSpec& s : l)
      if (s.name == n) return s.shape;
    return Shape{};
  };
  EXPECT_EQ(find("first_stage_model.encoder.conv_out.weight")[0], 4);
  EXPECT_EQ(find("first_stage_model.decoder.conv_in.weight")[1], 4);
}

TEST(LearnedCodecTest, ShapesMatchAnalytic) {
  ParameterSet p;
  Rng rng(5);
  materialize(learned_codec_layout({8, 8, 8}), rng, p);
  const Codec c = Codec::learned(p, {8, 8, 8});
  const Tensor z = c.encode(Tensor::zeros({1, 3, 32, 24}));
  EXPECT_EQ(z.shape(), (Shape{1, 4, 4, 3}));
  EXPECT_EQ(c.decode(z).shape(), (Shape{1, 3, 32, 24}));
}

TEST(LearnedCodecTest, RejectsMissingParameters) {
  EXPECT_THROW(Codec::learned(ParameterSet{}, {8, 8, 8}), std::invalid_argument);
  EXPECT_THROW(Codec::learned(ParameterSet{}, {8, 8}), std::invalid_argument);
}

TEST(LearnedCodecTest, GradientsMatchFiniteDifferences) {
  ParameterSet p;
  Rng rng(6);
  materialize(learned_codec_layout({2, 2, 2}), rng, p);
  const Codec c = Codec::learned(p, {2, 2, 2});
  const Tensor img = Tensor::uniform({1, 3, 8, 8}, -1, 1, rng);
  const std::string w = "first_stage_model.encoder.down.1.weight";
  const std::string v = "first_stage_model.decoder.up.0.weight";
  auto r = testing::grad_check(
      [&](const std::vector<Tensor>& in) {
        ParameterSet q = p;
        q.set(w, in[0]);
        q.set(v, in[1]);
        return mse_loss(c.decode_raw(c.encode_with(in[2], q), q), in[2]);
      },
      {p.get(w), p.get(v), img});
  EXPECT_TRUE(r.ok) << r.max_rel_error;
}

std::vector<Tensor> small_images(int n, std::uint64_t seed) {
  std::vector<Tensor> out;
  for (int i = 0; i < n; ++i) out.push_back(to_tensor(gen_sample(random_spec(mix_seed(seed, i), 32, 24)).person));
  return out;
}

TEST(TrainCodecTest, DeterministicAndDecreasing) {
  const std::vector<Tensor> images = small_images(8, 7);
  CodecTrainOptions o;
  o.steps = 60;
  o.batch_size = 4;
  o.widths = {8, 8, 8};
  o.seed = 11;
  const CodecTrainResult a = train_codec(images, o);
  const CodecTrainResult b = train_codec(images, o);
  ASSERT_EQ(a.losses.size(), 60u);
  EXPECT_EQ(a.losses, b.losses);
  for (const std::string& n : a.codec.params().names()) EXPECT_TRUE(same(a.codec.params().get(n), b.codec.params().get(n)));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += a.losses[static_cast<std::size_t>(i)];
    tail += a.losses[a.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, head);
  EXPECT_GE(a.best_step, 20);
}

TEST(TrainCodecTest, RejectsEmptyDataset) {
  EXPECT_THROW(train_codec({}, CodecTrainOptions{}), std::invalid_argument);
}

TEST(TrainCodecTest, ReportsDivergence) {
  CodecTrainOptions o;
  o.steps = 5;
  o.widths = {2, 2, 2};
  const std::vector<Tensor> bad{Tensor::full({3, 8, 8}, std::nan(""))};
  EXPECT_THROW(train_codec(bad, o), std::runtime_error);
}

}  // namespace
}  // namespace vton
