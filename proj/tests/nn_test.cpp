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

#include "vton/nn.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "vton/gradcheck.hpp"

namespace vton {
namespace {

using testing::grad_check;

Tensor probe(const Tensor& y) {
  Buffer wts(y.numel());
  for (Index i = 0; i < wts.size(); ++i) wts[i] = std::cos(0.23 * static_cast<double>(i));
  return sum(y * Tensor(y.shape(), wts));
}

void zero(ParameterSet& p, const std::string& name) { p.set(name, Tensor::zeros(p.get(name).shape())); }

// Copy of x with one spatial position overwritten by `v` in every channel.
Tensor poke(const Tensor& x, Index row, Index col, double v) {
  Buffer d = x.values();
  const Index h = x.dim(2), wd = x.dim(3);
  for (Index plane = 0; plane < x.dim(0) * x.dim(1); ++plane) d[(plane * h + row) * wd + col] = v;
  return Tensor(x.shape(), d);
}

TEST(TimestepEmbeddingTest, ZeroIsSinZeroCosOne) {
  const int t = 0;
  Tensor e = timestep_embedding(std::span<const int>(&t, 1), 8);
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(e.at({0, i}), 0.0);
  for (Index i = 4; i < 8; ++i) EXPECT_EQ(e.at({0, i}), 1.0);
}

TEST(TimestepEmbeddingTest, DistinctAndBoundedForAllTimesteps) {
  std::vector<int> ts(1000);
  for (int i = 0; i < 1000; ++i) ts[static_cast<std::size_t>(i)] = i;
  Tensor e = timestep_embedding(ts, 64);
  EXPECT_TRUE((e.values().abs() <= 1.0).all());
  const auto& v = e.values();
  double closest = 1e9;
  for (Index a = 0; a < 1000; ++a) {
    for (Index b = a + 1; b < 1000; ++b) {
      closest = std::min(closest, (v.segment(a * 64, 64) - v.segment(b * 64, 64)).abs().maxCoeff());
    }
  }
  EXPECT_GT(closest, 0.0);
}

TEST(TimestepEmbeddingTest, RejectsOddDimAndRange) {
  const int t = 3, bad = 1000;
  EXPECT_THROW(timestep_embedding(std::span<const int>(&t, 1), 7), std::invalid_argument);
  EXPECT_THROW(timestep_embedding(std::span<const int>(&bad, 1), 8), std::out_of_range);
}

class ResBlockTest : public ::testing::Test {
 protected:
  ResBlockTest() : rng_(21) { init_res_block(p_, "rb", 32, 64, 16, rng_); }
  Rng rng_;
  ParameterSet p_;
};

TEST_F(ResBlockTest, ShapeContract) {
  Tensor x = Tensor::randn({2, 32, 16, 12}, rng_), t = Tensor::randn({2, 16}, rng_);
  EXPECT_EQ(res_block(x, t, p_, "rb", 8).shape(), (Shape{2, 64, 16, 12}));
  EXPECT_TRUE(p_.contains("rb.conv_shortcut.weight"));
  EXPECT_THROW(res_block(Tensor::zeros({2, 16, 4, 4}), t, p_, "rb", 8), ShapeError);
  EXPECT_THROW(res_block(x, Tensor::zeros({2, 8}), p_, "rb", 8), ShapeError);
}

TEST_F(ResBlockTest, NoShortcutWhenChannelsMatch) {
  ParameterSet q;
  init_res_block(q, "rb", 16, 16, 8, rng_);
  EXPECT_FALSE(q.contains("rb.conv_shortcut.weight"));
}

TEST_F(ResBlockTest, ZeroSecondConvGivesSkip) {
  zero(p_, "rb.conv2.weight");
  zero(p_, "rb.conv2.bias");
  Tensor x = Tensor::randn({2, 32, 6, 4}, rng_), t = Tensor::randn({2, 16}, rng_);
  Tensor skip = conv2d(x, p_.get("rb.conv_shortcut.weight"), p_.get("rb.conv_shortcut.bias"));
  EXPECT_TRUE((res_block(x, t, p_, "rb", 8).values() == skip.values()).all());
}

TEST_F(ResBlockTest, GradientReachesTimeProjection) {
  Tensor x = Tensor::randn({1, 32, 4, 4}, rng_);
  Tape tape;
  Tensor t = tape.watch(Tensor::randn({1, 16}, rng_));
  ParameterSet w = p_.watched(tape, [](const std::string& n) { return n.find("time_emb_proj") != std::string::npos; });
  Gradients g = tape.backward(probe(res_block(x, t, w, "rb", 8)));
  EXPECT_GT(g.of(w.get("rb.time_emb_proj.weight")).values().abs().maxCoeff(), 0.0);
  EXPECT_GT(g.of(t).values().abs().maxCoeff(), 0.0);
}

TEST_F(ResBlockTest, LocalReceptiveFieldWithPinnedNorms) {
  Tensor x = Tensor::randn({1, 32, 10, 10}, rng_), t = Tensor::randn({1, 16}, rng_);
  NormPin pin(NormPin::Mode::kRecord);
  Tensor ref = res_block(x, t, p_, "rb", 8, &pin);
  pin.replay();
  Tensor out = res_block(poke(x, 0, 0, 5.0), t, p_, "rb", 8, &pin);
  // Two 3x3 convs reach two pixels; (0,0) cannot influence rows/cols >= 3.
  for (Index c = 0; c < 64; ++c) {
    for (Index i = 0; i < 10; ++i) {
      for (Index j = 0; j < 10; ++j) {
        if (i >= 3 || j >= 3) EXPECT_EQ(out.at({0, c, i, j}), ref.at({0, c, i, j}));
      }
    }
  }
  EXPECT_NE(out.at({0, 0, 2, 2}), ref.at({0, 0, 2, 2}));
}

TEST_F(ResBlockTest, GradCheck) {
  ParameterSet q;
  init_res_block(q, "rb", 4, 6, 3, rng_);
  Tensor x = Tensor::uniform({1, 4, 3, 3}, -1, 1, rng_), t = Tensor::uniform({1, 3}, -1, 1, rng_);
  auto f = [&](const std::vector<Tensor>& v) {
    ParameterSet r = q;
    r.set("rb.conv1.weight", v[2]);
    return probe(res_block(v[0], v[1], r, "rb", 2));
  };
  EXPECT_TRUE(grad_check(f, {x, t, q.get("rb.conv1.weight")}, 1e-4).ok);
}

class AttentionBlockTest : public ::testing::Test {
 protected:
  AttentionBlockTest() : rng_(31) { init_attention_block(p_, "ab", 8, rng_); }
  Rng rng_;
  ParameterSet p_;
};

TEST_F(AttentionBlockTest, NoCrossAttentionParameters) {
  for (const auto& n : p_.names()) {
    EXPECT_EQ(n.find("attn2"), std::string::npos) << n;
    EXPECT_EQ(n.find("norm2"), std::string::npos) << n;
  }
  for (const char* proj : {"to_q", "to_k", "to_v", "to_out.0"}) {
    EXPECT_EQ(p_.get(std::string("ab.transformer_blocks.0.attn1.") + proj + ".weight").shape(), (Shape{8, 8}));
  }
  EXPECT_FALSE(p_.contains("ab.transformer_blocks.0.attn1.to_q.bias"));
  EXPECT_TRUE(p_.contains("ab.transformer_blocks.0.attn1.to_out.0.bias"));
}

TEST_F(AttentionBlockTest, ZeroOutputProjectionIsIdentity) {
  zero(p_, "ab.proj_out.weight");
  zero(p_, "ab.proj_out.bias");
  Tensor x = Tensor::randn({2, 8, 3, 5}, rng_);
  EXPECT_TRUE((attention_block(x, p_, "ab", 2, 2).values() == x.values()).all());
}

TEST_F(AttentionBlockTest, SingleTokenAttendsToItself) {
  Tensor tokens = Tensor::randn({1, 1, 8}, rng_);
  Tensor wts = attention_weights(tokens, tokens, 2);
  EXPECT_TRUE((wts.values() == 1.0).all());
  // With unit weights the attention output is exactly the value path.
  const std::string a = "ab.transformer_blocks.0.attn1";
  Tensor v = linear(tokens, p_.get(a + ".to_v.weight"));
  Tensor expected = linear(v, p_.get(a + ".to_out.0.weight"), p_.get(a + ".to_out.0.bias"));
  EXPECT_TRUE((self_attention(tokens, p_, a, 2).values() == expected.values()).all());
}

TEST_F(AttentionBlockTest, TwoTokenHandExample) {
  // q = k = tokens, one head, c = 2: weights = softmax(gram / sqrt 2).
  Tensor tok = Tensor::of({1, 2, 2}, {1, 0, 1, 1});
  Tensor wts = attention_weights(tok, tok, 1);
  const double s = 1.0 / std::sqrt(2.0);
  // gram = [[1, 1], [1, 2]]
  const double r0 = 0.5;
  const double r1 = std::exp(s) / (std::exp(s) + std::exp(2 * s));
  EXPECT_NEAR(wts.at({0, 0, 0, 0}), r0, 1e-15);
  EXPECT_NEAR(wts.at({0, 0, 0, 1}), r0, 1e-15);
  EXPECT_NEAR(wts.at({0, 0, 1, 0}), r1, 1e-15);
  EXPECT_NEAR(wts.at({0, 0, 1, 1}), 1.0 - r1, 1e-15);
}

TEST_F(AttentionBlockTest, IndivisibleHeadsThrow) {
  EXPECT_THROW(attention_block(Tensor::zeros({1, 8, 2, 2}), p_, "ab", 2, 3), ShapeError);
}

TEST_F(AttentionBlockTest, EquivariantToColumnSwap) {
  Tensor x = Tensor::randn({1, 8, 3, 4}, rng_);
  Tensor swapped = concat({slice(x, 3, 2, 2), slice(x, 3, 0, 2)}, 3);
  Tensor y = attention_block(x, p_, "ab", 2, 2);
  Tensor ys = attention_block(swapped, p_, "ab", 2, 2);
  Tensor back = concat({slice(ys, 3, 2, 2), slice(ys, 3, 0, 2)}, 3);
  EXPECT_LT((back.values() - y.values()).abs().maxCoeff(), 1e-12);
}

TEST_F(AttentionBlockTest, GlobalReceptiveField) {
  Tensor x = Tensor::randn({1, 8, 10, 10}, rng_);
  NormPin pin(NormPin::Mode::kRecord);
  Tensor ref = attention_block(x, p_, "ab", 2, 2, &pin);
  pin.replay();
  Tensor out = attention_block(poke(x, 0, 0, 5.0), p_, "ab", 2, 2, &pin);
  for (Index i = 0; i < 10; ++i) {
    for (Index j = 0; j < 10; ++j) EXPECT_NE(out.at({0, 0, i, j}), ref.at({0, 0, i, j}));
  }
}

TEST_F(AttentionBlockTest, GradCheck) {
  ParameterSet q;
  init_attention_block(q, "ab", 4, rng_);
  Tensor x = Tensor::uniform({1, 4, 2, 3}, -1, 1, rng_);
  const std::string qn = "ab.transformer_blocks.0.attn1.to_q.weight";
  const std::string fn = "ab.transformer_blocks.0.ff.net.0.proj.weight";
  auto f = [&](const std::vector<Tensor>& v) {
    ParameterSet r = q;
    r.set(qn, v[1]);
    r.set(fn, v[2]);
    return probe(attention_block(v[0], r, "ab", 2, 2));
  };
  EXPECT_TRUE(grad_check(f, {x, q.get(qn), q.get(fn)}, 1e-4).ok);
}

TEST(ResampleTest, Shapes) {
  Rng rng(41);
  ParameterSet p;
  init_downsample(p, "d", 4, rng);
  init_upsample(p, "u", 4, rng);
  Tensor x = Tensor::randn({1, 4, 32, 12}, rng);
  Tensor d = downsample(x, p, "d");
  EXPECT_EQ(d.shape(), (Shape{1, 4, 16, 6}));
  EXPECT_EQ(upsample(d, p, "u").shape(), x.shape());
  EXPECT_THROW(downsample(Tensor::zeros({1, 4, 5, 4}), p, "d"), ShapeError);
}

TEST(ResampleTest, NearestReplicatesBlocks) {
  Tensor y = upsample_nearest(Tensor::of({1, 1, 2, 2}, {1, 2, 3, 4}), 2);
  const double expected[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(y.at({0, 0, i, j}), expected[i][j]);
}

TEST(ResampleTest, GradCheck) {
  Rng rng(42);
  ParameterSet p;
  init_downsample(p, "d", 2, rng);
  init_upsample(p, "u", 2, rng);
  Tensor x = Tensor::uniform({1, 2, 4, 4}, -1, 1, rng);
  EXPECT_TRUE(grad_check([&](const auto& v) { return probe(upsample(downsample(v[0], p, "d"), p, "u")); }, {x}, 1e-4).ok);
}

}  // namespace
}  // namespace vton
