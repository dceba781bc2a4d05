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

#ifndef VTON_UNET_HPP_
#define VTON_UNET_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vton/nn.hpp"

namespace vton {

struct UNetConfig {
  Index in_channels = 9;  // noisy latent 4 + mask 1 + condition latent 4
  Index out_channels = 4;
  Index base_channels = 32;
  std::vector<Index> channel_mults{1, 2};
  int layers_per_block = 1;
  std::vector<int> attention_levels{0, 1};
  bool mid_attention = true;
  int heads = 4;
  int groups = 8;
  Index time_embed_dim = 128;
  // Nonzero only for accounting layouts of text-conditioned UNets.
  Index cross_attention_dim = 0;

  static UNetConfig toy();
  // The SD1.5 inpainting UNet geometry, with its text cross-attention.
  static UNetConfig sd15_inpainting();

  int levels() const { return static_cast<int>(channel_mults.size()); }
  Index channels(int level) const { return base_channels * channel_mults[static_cast<std::size_t>(level)]; }
  bool has_attention(int level) const;
  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Parameter names and shapes in construction order, diffusers-style:
// conv_in, time_embedding.linear_{1,2}, down_blocks.i.{resnets,attentions,
// downsamplers}, mid_block, up_blocks.i.{resnets,attentions,upsamplers},
// conv_norm_out, conv_out.
Layout unet_layout(const UNetConfig& config);

// Deterministic initialization from `seed`. Rejects text-conditioned configs.
ParameterSet build_unet(const UNetConfig& config, std::uint64_t seed);

// z [b, in_channels, h, w] with h, w divisible by 2^(levels-1); t holds one
// timestep index in [0, 1000) per sample, or a single shared one.
Tensor unet_forward(const ParameterSet& params, const UNetConfig& config, const Tensor& z, std::span<const int> t,
                    NormPin* pin = nullptr);
inline Tensor unet_forward(const ParameterSet& params, const UNetConfig& config, const Tensor& z, int t,
                           NormPin* pin = nullptr) {
  return unet_forward(params, config, z, std::span<const int>(&t, 1), pin);
}

// Reach, in input rows or columns, of the convolutional path: with every
// self-attention output zeroed and norm statistics pinned, an output pixel
// depends only on inputs within this distance.
int unet_receptive_radius(const UNetConfig& config);

// Copy whose self-attention output projections (weights and bias) are zero.
ParameterSet silence_self_attention(const ParameterSet& params);

enum class TrainableSet { kUnet, kTransformers, kSelfAttention };

std::string_view to_string(TrainableSet set);
std::optional<TrainableSet> parse_trainable_set(std::string_view text);

// attn1.to_{q,k,v,out.0} (weights and the output bias).
bool is_self_attention_param(std::string_view name);
// Any parameter of a transformer block (the attentions.* subtree).
bool is_transformer_param(std::string_view name);
bool is_cross_attention_param(std::string_view name);
std::function<bool(const std::string&)> trainable_predicate(TrainableSet set);

struct Partition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};
Partition select_trainable(const ParameterSet& params, TrainableSet set);

// Replaces the condition latent of each sample with zeros with probability p.
// `dropped`, if given, receives the per-sample decisions.
Tensor condition_dropout(const Tensor& x_cond, double p, Rng& rng, std::vector<bool>* dropped = nullptr);

}  // namespace vton

#endif  // VTON_UNET_HPP_
