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

#include <algorithm>
#include <stdexcept>

namespace vton {

UNetConfig UNetConfig::toy() { return UNetConfig{}; }

UNetConfig UNetConfig::sd15_inpainting() {
  UNetConfig c;
  c.base_channels = 320;
  c.channel_mults = {1, 2, 4, 4};
  c.layers_per_block = 2;
  c.attention_levels = {0, 1, 2};
  c.heads = 8;
  c.groups = 32;
  c.time_embed_dim = 1280;
  c.cross_attention_dim = 768;
  return c;
}

bool UNetConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void UNetConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("UNetConfig: " + what); };
  if (in_channels != 9) fail("in_channels must be 9 (4 noisy + 1 mask + 4 condition)");
  if (out_channels <= 0) fail("out_channels must be positive");
  if (channel_mults.empty()) fail("channel_mults is empty");
  if (base_channels <= 0 || layers_per_block <= 0 || heads <= 0 || groups <= 0) fail("non-positive size");
  if (base_channels % 2 != 0) fail("base_channels must be even for the timestep embedding");
  for (Index m : channel_mults) {
    if (m <= 0) fail("channel multipliers must be positive");
    if ((base_channels * m) % groups != 0) fail("channel width not divisible by groups");
    if ((base_channels * m) % heads != 0) fail("channel width not divisible by heads");
  }
  for (int a : attention_levels) {
    if (a < 0 || a >= levels()) fail("attention level " + std::to_string(a) + " is not a declared level");
  }
  if (time_embed_dim <= 0 || cross_attention_dim < 0) fail("invalid embedding dimension");
}

namespace {

std::string down(int i) { return "down_blocks." + std::to_string(i); }
std::string up(int i) { return "up_blocks." + std::to_string(i); }
std::string sub(const std::string& block, const char* kind, int j) { return block + "." + kind + "." + std::to_string(j); }

// Channel bookkeeping shared by the layout and the forward pass.
struct UpResnet {
  Index in;
  Index out;
};

std::vector<std::vector<UpResnet>> up_plan(const UNetConfig& c) {
  const int n = c.levels();
  std::vector<std::vector<UpResnet>> plan(static_cast<std::size_t>(n));
  Index prev = c.channels(n - 1);
  for (int i = 0; i < n; ++i) {
    const int rev = n - 1 - i;
    const Index out = c.channels(rev);
    const Index input = c.channels(std::max(rev - 1, 0));
    for (int j = 0; j <= c.layers_per_block; ++j) {
      const Index skip = j == c.layers_per_block ? input : out;
      const Index res_in = j == 0 ? prev : out;
      plan[static_cast<std::size_t>(i)].push_back({res_in + skip, out});
    }
    prev = out;
  }
  return plan;
}

}  // namespace

Layout unet_layout(const UNetConfig& c) {
  c.validate();
  Layout l;
  const int n = c.levels();
  const Index ctx = c.cross_attention_dim;
  layout_conv(l, "conv_in", c.in_channels, c.channels(0), 3);
  layout_linear(l, "time_embedding.linear_1", c.base_channels, c.time_embed_dim, true);
  layout_linear(l, "time_embedding.linear_2", c.time_embed_dim, c.time_embed_dim, true);

  Index ch = c.channels(0);
  for (int i = 0; i < n; ++i) {
    const Index out = c.channels(i);
    for (int j = 0; j < c.layers_per_block; ++j) {
      layout_res_block(l, sub(down(i), "resnets", j), j == 0 ? ch : out, out, c.time_embed_dim);
      if (c.has_attention(i)) layout_attention_block(l, sub(down(i), "attentions", j), out, ctx);
    }
    if (i != n - 1) layout_resample(l, down(i) + ".downsamplers.0", out);
    ch = out;
  }

  const Index mid = c.channels(n - 1);
  layout_res_block(l, "mid_block.resnets.0", mid, mid, c.time_embed_dim);
  if (c.mid_attention) layout_attention_block(l, "mid_block.attentions.0", mid, ctx);
  layout_res_block(l, "mid_block.resnets.1", mid, mid, c.time_embed_dim);

  const auto plan = up_plan(c);
  for (int i = 0; i < n; ++i) {
    const int rev = n - 1 - i;
    for (int j = 0; j <= c.layers_per_block; ++j) {
      const UpResnet& r = plan[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      layout_res_block(l, sub(up(i), "resnets", j), r.in, r.out, c.time_embed_dim);
      if (c.has_attention(rev)) layout_attention_block(l, sub(up(i), "attentions", j), r.out, ctx);
    }
    if (i != n - 1) layout_resample(l, up(i) + ".upsamplers.0", c.channels(rev));
  }

  layout_norm(l, "conv_norm_out", c.channels(0));
  layout_conv(l, "conv_out", c.channels(0), c.out_channels, 3);
  return l;
}

ParameterSet build_unet(const UNetConfig& config, std::uint64_t seed) {
  if (config.cross_attention_dim != 0) throw std::invalid_argument("build_unet: text cross-attention is not supported");
  Rng rng(seed);
  ParameterSet p;
  materialize(unet_layout(config), rng, p);
  return p;
}

Tensor unet_forward(const ParameterSet& p, const UNetConfig& c, const Tensor& z, std::span<const int> t, NormPin* pin) {
  if (c.cross_attention_dim != 0) throw std::invalid_argument("unet_forward: text cross-attention is not supported");
  if (z.rank() != 4 || z.dim(1) != c.in_channels) {
    throw ShapeError("unet_forward: expected [b," + std::to_string(c.in_channels) + ",h,w], got " + to_string(z.shape()));
  }
  const int n = c.levels();
  const Index factor = Index{1} << (n - 1);
  if (z.dim(2) % factor != 0 || z.dim(3) % factor != 0) {
    throw ShapeError("unet_forward: spatial extents " + to_string(z.shape()) + " not divisible by " + std::to_string(factor));
  }
  const Index bsz = z.dim(0);
  if (t.size() != 1 && static_cast<Index>(t.size()) != bsz) throw ShapeError("unet_forward: one timestep per sample expected");
  std::vector<int> ts(t.begin(), t.end());
  if (ts.size() == 1) ts.assign(static_cast<std::size_t>(bsz), ts[0]);

  auto W = [&p](const std::string& name) -> const Tensor& { return p.get(name + ".weight"); };
  auto B = [&p](const std::string& name) -> const Tensor& { return p.get(name + ".bias"); };
  constexpr Conv2dOptions same{.stride = 1, .padding = 1};

  Tensor temb = timestep_embedding(ts, static_cast<int>(c.base_channels));
  temb = linear(temb, W("time_embedding.linear_1"), B("time_embedding.linear_1"));
  temb = linear(silu(temb), W("time_embedding.linear_2"), B("time_embedding.linear_2"));

  Tensor h = conv2d(z, W("conv_in"), B("conv_in"), same);
  std::vector<Tensor> skips{h};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c.layers_per_block; ++j) {
      h = res_block(h, temb, p, sub(down(i), "resnets", j), c.groups, pin);
      if (c.has_attention(i)) h = attention_block(h, p, sub(down(i), "attentions", j), c.groups, c.heads, pin);
      skips.push_back(h);
    }
    if (i != n - 1) {
      h = downsample(h, p, down(i) + ".downsamplers.0");
      skips.push_back(h);
    }
  }

  h = res_block(h, temb, p, "mid_block.resnets.0", c.groups, pin);
  if (c.mid_attention) h = attention_block(h, p, "mid_block.attentions.0", c.groups, c.heads, pin);
  h = res_block(h, temb, p, "mid_block.resnets.1", c.groups, pin);

  for (int i = 0; i < n; ++i) {
    const int rev = n - 1 - i;
    for (int j = 0; j <= c.layers_per_block; ++j) {
      h = concat({h, skips.back()}, 1);
      skips.pop_back();
      h = res_block(h, temb, p, sub(up(i), "resnets", j), c.groups, pin);
      if (c.has_attention(rev)) h = attention_block(h, p, sub(up(i), "attentions", j), c.groups, c.heads, pin);
    }
    if (i != n - 1) h = upsample(h, p, up(i) + ".upsamplers.0");
  }

  h = silu(norm(h, c.groups, W("conv_norm_out"), B("conv_norm_out"), pin));
  return conv2d(h, W("conv_out"), B("conv_out"), same);
}

int unet_receptive_radius(const UNetConfig& c) {
  // Each 3x3 convolution adds one pixel at its own scale.
  int r = 1, scale = 1;
  for (int i = 0; i < c.levels(); ++i) {
    r += 2 * scale * c.layers_per_block;
    if (i != c.levels() - 1) {
      r += scale;
      scale *= 2;
    }
  }
  r += 4 * scale;
  for (int i = 0; i < c.levels(); ++i) {
    r += 2 * scale * (c.layers_per_block + 1);
    if (i != c.levels() - 1) {
      scale /= 2;
      r += 2 * scale;  // nearest-neighbour offset, then the convolution
    }
  }
  return r + 1;
}

ParameterSet silence_self_attention(const ParameterSet& params) {
  ParameterSet out = params;
  for (const std::string& n : params.names()) {
    if (n.find(".attn1.to_out.0.") != std::string::npos) out.set(n, Tensor::zeros(params.get(n).shape()));
  }
  return out;
}

std::string_view to_string(TrainableSet set) {
  switch (set) {
    case TrainableSet::kUnet: return "unet";
    case TrainableSet::kTransformers: return "transformers";
    case TrainableSet::kSelfAttention: return "self_attention";
  }
  return "?";
}

std::optional<TrainableSet> parse_trainable_set(std::string_view text) {
  if (text == "unet") return TrainableSet::kUnet;
  if (text == "transformers") return TrainableSet::kTransformers;
  if (text == "self_attention") return TrainableSet::kSelfAttention;
  return std::nullopt;
}

bool is_self_attention_param(std::string_view name) {
  for (std::string_view proj : {".attn1.to_q.", ".attn1.to_k.", ".attn1.to_v.", ".attn1.to_out.0."}) {
    if (name.find(proj) != std::string_view::npos) return true;
  }
  return false;
}

bool is_transformer_param(std::string_view name) { return name.find(".attentions.") != std::string_view::npos; }

bool is_cross_attention_param(std::string_view name) {
  if (name.find(".attn2.") != std::string_view::npos) return true;
  return name.find(".transformer_blocks.") != std::string_view::npos && name.find(".norm2.") != std::string_view::npos;
}

std::function<bool(const std::string&)> trainable_predicate(TrainableSet set) {
  switch (set) {
    case TrainableSet::kUnet: return [](const std::string&) { return true; };
    case TrainableSet::kTransformers: return [](const std::string& n) { return is_transformer_param(n); };
    case TrainableSet::kSelfAttention: return [](const std::string& n) { return is_self_attention_param(n); };
  }
  throw std::invalid_argument("unknown trainable set");
}

Partition select_trainable(const ParameterSet& params, TrainableSet set) {
  const auto pred = trainable_predicate(set);
  Partition out;
  for (const std::string& name : params.names()) (pred(name) ? out.trainable : out.frozen).push_back(name);
  return out;
}

Tensor condition_dropout(const Tensor& x_cond, double p, Rng& rng, std::vector<bool>* dropped) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("condition_dropout: p must lie in [0, 1]");
  if (x_cond.rank() < 1) throw ShapeError("condition_dropout: missing batch axis");
  const Index bsz = x_cond.dim(0), per = x_cond.numel() / std::max<Index>(bsz, 1);
  Buffer keep(x_cond.numel());
  if (dropped) dropped->assign(static_cast<std::size_t>(bsz), false);
  for (Index i = 0; i < bsz; ++i) {
    const bool drop = rng.uniform() < p;
    keep.segment(i * per, per).setConstant(drop ? 0.0 : 1.0);
    if (dropped) (*dropped)[static_cast<std::size_t>(i)] = drop;
  }
  if ((keep == 1.0).all()) return x_cond;
  return mul(x_cond, Tensor(x_cond.shape(), std::move(keep)));
}

}  // namespace vton
