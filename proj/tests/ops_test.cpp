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

#include "vton/ops.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "vton/gradcheck.hpp"

namespace vton {
namespace {

using testing::grad_check;

Tensor rand_in(Shape s, Rng& rng) { return Tensor::uniform(std::move(s), -1.0, 1.0, rng); }

// Weighted sum so that gradients differ per output element.
Tensor probe(const Tensor& y) {
  Buffer w(y.numel());
  for (Index i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i) + 0.1);
  return sum(y * Tensor(y.shape(), w));
}

TEST(ElementwiseTest, MulAndAddIdentity) {
  Tensor r = mul(Tensor::of({2}, {1, 2}), Tensor::of({2}, {3, 4}));
  EXPECT_EQ(r.at({0}), 3.0);
  EXPECT_EQ(r.at({1}), 8.0);
  Tensor x = Tensor::of({3}, {1.5, -2, 0.25});
  EXPECT_TRUE((add(x, 0.0).values() == x.values()).all());
  EXPECT_TRUE((add(x, Tensor::scalar(0.0)).values() == x.values()).all());
}

TEST(ElementwiseTest, SiluAtZero) {
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(0.0));
  Tensor y = silu(x);
  EXPECT_EQ(y.item(), 0.0);
  EXPECT_DOUBLE_EQ(tape.backward(y).of(x).item(), 0.5);
}

TEST(ElementwiseTest, ShapeMismatchThrows) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(mul(Tensor::zeros({2}), Tensor::zeros({2, 2})), ShapeError);
}

TEST(ElementwiseTest, GradChecks) {
  Rng rng(1);
  const std::vector<Tensor> in{rand_in({2, 3, 4}, rng), rand_in({2, 3, 4}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(add(v[0], v[1])); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(sub(v[0], v[1])); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(mul(v[0], v[1])); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(silu(v[0])); }, {in[0]}).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(gelu(v[0])); }, {in[0]}).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(scale(v[0], -1.7)); }, {in[0]}).ok);
}

TEST(ElementwiseTest, BroadcastGradChecks) {
  Rng rng(2);
  const std::vector<Tensor> in{rand_in({2, 3, 4, 5}, rng), rand_in({2, 3, 1, 1}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(add(v[0], v[1])); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(mul(v[0], v[1])); }, in).ok);
  const std::vector<Tensor> in2{rand_in({3, 4}, rng), rand_in({}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(sub(v[0], v[1])); }, in2).ok);
}

TEST(MatmulTest, Identity) {
  Tensor eye = Tensor::of({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::of({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE((matmul(eye, a).values() == a.values()).all());
}

TEST(MatmulTest, HandArithmetic) {
  Tensor r = matmul(Tensor::of({2, 2}, {1, 2, 3, 4}), Tensor::of({2, 1}, {5, 6}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_EQ(r.at({0, 0}), 17.0);
  EXPECT_EQ(r.at({1, 0}), 39.0);
}

TEST(MatmulTest, InnerMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(MatmulTest, GradCheck) {
  Rng rng(3);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(matmul(v[0], v[1])); }, {rand_in({3, 4}, rng), rand_in({4, 2}, rng)}).ok);
}

TEST(MatmulTest, BroadcastBatchGradCheck) {
  Rng rng(4);
  const std::vector<Tensor> in{rand_in({2, 3, 3, 4}, rng), rand_in({3, 4, 2}, rng)};
  Tensor y = matmul(in[0], in[1]);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 3, 2}));
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(matmul(v[0], v[1])); }, in).ok);
}

TEST(LinearTest, GradCheck) {
  Rng rng(5);
  const std::vector<Tensor> in{rand_in({2, 5, 3}, rng), rand_in({4, 3}, rng), rand_in({4}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(linear(v[0], v[1], v[2])); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(linear(v[0], v[1])); }, {in[0], in[1]}).ok);
}

TEST(Conv2dTest, PointwiseIdentity) {
  Rng rng(6);
  Tensor x = rand_in({1, 2, 3, 3}, rng);
  Tensor w = Tensor::of({2, 2, 1, 1}, {1, 0, 0, 1});
  EXPECT_TRUE((conv2d(x, w).values() == x.values()).all());
}

TEST(Conv2dTest, AllOnesSum) {
  Tensor y = conv2d(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2dTest, OutputExtents) {
  Tensor y = conv2d(Tensor::zeros({2, 3, 8, 6}), Tensor::zeros({4, 3, 3, 3}), {}, {.stride = 2, .padding = 1});
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
}

TEST(Conv2dTest, GradCheck) {
  Rng rng(7);
  const std::vector<Tensor> in{rand_in({2, 2, 5, 4}, rng), rand_in({3, 2, 3, 3}, rng), rand_in({3}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(conv2d(v[0], v[1], v[2], {.stride = 1, .padding = 1})); }, in, 1e-4).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(conv2d(v[0], v[1], v[2], {.stride = 2, .padding = 1})); }, in, 1e-4).ok);
  const std::vector<Tensor> pw{in[0], rand_in({3, 2, 1, 1}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(conv2d(v[0], v[1])); }, pw, 1e-4).ok);
}

TEST(GroupNormTest, ConstantInputGivesZeros) {
  Tensor y = group_norm(Tensor::full({1, 4, 3, 3}, 2.5), 2, Tensor::ones({4}), Tensor::zeros({4}));
  EXPECT_TRUE((y.values().abs() < 1e-12).all());
}

TEST(GroupNormTest, NormalizesEachGroup) {
  Rng rng(8);
  Tensor x = rand_in({2, 6, 4, 4}, rng);
  Tensor y = group_norm(x, 3, Tensor::ones({6}), Tensor::zeros({6}));
  const Index block = 2 * 16;
  for (Index k = 0; k < 6; ++k) {
    const auto seg = y.values().segment(k * block, block);
    EXPECT_LT(std::abs(seg.mean()), 1e-10);
    EXPECT_LT(std::abs((seg - seg.mean()).square().mean() - 1.0), 1e-4);
  }
}

TEST(GroupNormTest, IndivisibleChannelsThrow) {
  EXPECT_THROW(group_norm(Tensor::zeros({1, 5, 2, 2}), 2, Tensor::ones({5}), Tensor::zeros({5})), ShapeError);
}

TEST(GroupNormTest, GradCheck) {
  Rng rng(9);
  const std::vector<Tensor> in{rand_in({2, 4, 3, 3}, rng), rand_in({4}, rng), rand_in({4}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(group_norm(v[0], 2, v[1], v[2])); }, in, 1e-4).ok);
}

TEST(GroupNormTest, PinnedStatsReplayForwardAndTreatStatsAsConstant) {
  Rng rng(10);
  Tensor x = rand_in({1, 4, 3, 3}, rng);
  const Tensor g = rand_in({4}, rng), b = rand_in({4}, rng);
  const NormStats stats = group_norm_stats(x, 2);
  EXPECT_TRUE((group_norm(x, 2, g, b, stats).values() == group_norm(x, 2, g, b).values()).all());
  auto f = [&](const std::vector<Tensor>& v) { return probe(group_norm(v[0], 2, v[1], v[2], stats)); };
  EXPECT_TRUE(grad_check(f, {x, g, b}, 1e-6).ok);
}

TEST(LayerNormTest, GradCheck) {
  Rng rng(11);
  const std::vector<Tensor> in{rand_in({3, 5}, rng), rand_in({5}, rng), rand_in({5}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(layer_norm(v[0], v[1], v[2])); }, in, 1e-4).ok);
}

TEST(SoftmaxTest, Symmetric) {
  Tensor y = softmax(Tensor::of({2}, {0, 0}), 0);
  EXPECT_EQ(y.at({0}), 0.5);
  EXPECT_EQ(y.at({1}), 0.5);
}

TEST(SoftmaxTest, StableForLargeInputs) {
  Tensor y = softmax(Tensor::of({2}, {1000, 1000}), -1);
  EXPECT_EQ(y.at({0}), 0.5);
  EXPECT_EQ(y.at({1}), 0.5);
}

TEST(SoftmaxTest, SlicesSumToOne) {
  Rng rng(12);
  Tensor x = Tensor::uniform({3, 7, 4}, -50, 50, rng);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor y = softmax(x, axis);
    EXPECT_TRUE((y.values() > 0).all());
    Tensor s = y;
    // Sum along the axis by contracting with ones.
    const Index n = x.dim(axis);
    Tensor moved = permute(y, axis == 0 ? std::initializer_list<int>{1, 2, 0}
                                        : axis == 1 ? std::initializer_list<int>{0, 2, 1} : std::initializer_list<int>{0, 1, 2});
    Tensor sums = matmul(moved, Tensor::ones({n, 1}));
    EXPECT_TRUE(((sums.values() - 1.0).abs() <= 1e-12).all());
  }
}

TEST(SoftmaxTest, GradCheck) {
  Rng rng(13);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(softmax(v[0], 1)); }, {rand_in({2, 5, 3}, rng)}, 1e-5).ok);
}

TEST(ConcatTest, RoundtripIsBitIdentical) {
  Rng rng(14);
  Tensor a = Tensor::randn({2, 4, 16, 12}, rng), b = Tensor::randn({2, 4, 16, 12}, rng);
  Tensor c = concat({a, b}, 2);
  EXPECT_EQ(c.shape(), (Shape{2, 4, 32, 12}));
  auto parts = split(c, {16, 16}, 2);
  EXPECT_TRUE((parts[0].values() == a.values()).all());
  EXPECT_TRUE((parts[1].values() == b.values()).all());
  Tensor d = concat({a, b}, 1);
  EXPECT_EQ(d.shape(), (Shape{2, 8, 16, 12}));
  auto q = split(d, {4, 4}, 1);
  EXPECT_TRUE((q[0].values() == a.values()).all());
  EXPECT_TRUE((q[1].values() == b.values()).all());
}

TEST(ConcatTest, ExtentMismatchThrows) {
  EXPECT_THROW(concat({Tensor::zeros({1, 2, 3}), Tensor::zeros({1, 3, 3})}, 2), ShapeError);
  EXPECT_THROW(split(Tensor::zeros({1, 4}), {1, 2}, 1), ShapeError);
}

TEST(ConcatTest, GradientsRouteToSources) {
  Rng rng(15);
  const std::vector<Tensor> in{rand_in({2, 3, 2}, rng), rand_in({2, 1, 2}, rng), rand_in({2, 2, 2}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(concat({v[0], v[1], v[2]}, 1)); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) {
                auto p = split(v[0], {1, 2}, 1);
                return probe(p[1]) + probe(p[0]) * 3.0;
              },
              {in[0]})
                  .ok);
}

TEST(ShapeOpsTest, ReshapeInfersAndShares) {
  Tensor x = Tensor::zeros({2, 3, 4});
  Tensor y = reshape(x, {6, -1});
  EXPECT_EQ(y.shape(), (Shape{6, 4}));
  EXPECT_TRUE(y.shares_storage_with(x));
  EXPECT_THROW(reshape(x, {5, -1}), ShapeError);
}

TEST(ShapeOpsTest, PermuteMatchesIndexing) {
  Rng rng(16);
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  Tensor y = permute(x, {2, 0, 1});
  EXPECT_EQ(y.shape(), (Shape{4, 2, 3}));
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 4; ++k) EXPECT_EQ(y.at({k, i, j}), x.at({i, j, k}));
}

TEST(ShapeOpsTest, GradChecks) {
  Rng rng(17);
  const std::vector<Tensor> in{rand_in({2, 3, 4}, rng)};
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(permute(v[0], {1, 2, 0})); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(reshape(v[0], {4, 6})); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(slice(v[0], 2, 1, 2)); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(upsample_nearest(v[0], 2)); }, in).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return probe(avg_pool(v[0], 2)); }, {rand_in({2, 4, 6}, rng)}).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return mse_loss(v[0], v[1]); }, {in[0], rand_in({2, 3, 4}, rng)}).ok);
  EXPECT_TRUE(grad_check([](const auto& v) { return mean(v[0] * v[0]); }, in).ok);
}

TEST(CompositeTest, ConvNormAttentionGradCheck) {
  Rng rng(18);
  const std::vector<Tensor> in{rand_in({1, 2, 4, 3}, rng), rand_in({4, 2, 3, 3}, rng), rand_in({4}, rng),
                               rand_in({4, 4}, rng),       rand_in({4, 4}, rng),       rand_in({4, 4}, rng)};
  auto f = [](const std::vector<Tensor>& v) {
    Tensor h = conv2d(v[0], v[1], v[2], {.stride = 1, .padding = 1});
    h = group_norm(h, 2, Tensor::ones({4}), Tensor::zeros({4}));
    Tensor tokens = permute(reshape(h, {1, 4, 12}), {0, 2, 1});
    Tensor q = linear(tokens, v[3]), k = linear(tokens, v[4]), val = linear(tokens, v[5]);
    Tensor attn = softmax(scale(matmul(q, permute(k, {0, 2, 1})), 0.5), -1);
    return probe(matmul(attn, val));
  };
  EXPECT_TRUE(grad_check(f, in, 1e-4).ok);
}

}  // namespace
}  // namespace vton
