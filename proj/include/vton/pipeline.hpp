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
#ifndef VTON_PIPELINE_HPP_
#define VTON_PIPELINE_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vton/codec.hpp"
#include "vton/diffusion.hpp"
#include "vton/optim.hpp"
#include "vton/unet.hpp"

namespace vton {

// Pixel tensors are [b, 3, H, W] in [-1, 1]; masks are [b, 1, H, W] with
// 1 marking the region to regenerate.

// I_p * (1 - M). Throws std::invalid_argument on a non-binary mask.
Tensor make_agnostic(const Tensor& person, const Tensor& mask);

// Latent-resolution mask: a cell is 1 if any pixel of its 8x8 block is 1.
Tensor latent_mask(const Tensor& mask);

struct Condition {
  Tensor x_c;  // [b, 4, 2h, w]: encode(I_m) stacked above encode(I_g)
  Tensor m_c;  // [b, 1, 2h, w]: latent mask stacked above zeros
};

// Both images go through one encode call, so one parameter set serves both.
Condition build_condition(const Tensor& agnostic, const Tensor& garment, const Tensor& mask, const Codec& codec);

// Channel packing of the UNet input: [z_t | m_c | x_c].
Tensor pack_input(const Tensor& z_t, const Condition& c);

struct TryOnModel {
  UNetConfig config;
  ParameterSet unet;
  Codec codec = Codec::analytic();
  NoiseSchedule schedule = make_schedule();
};

// The three user inputs; nothing else is accepted.
struct TryOnRequest {
  Tensor person;   // [3, H, W]
  Tensor garment;  // [3, H, W], in-shop or worn
  Tensor mask;     // [H, W]
};

struct SamplerConfig {
  int steps = 50;
  double guidance = 2.5;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

struct TryOnResult {
  Tensor image;  // [3, H, W], pasted back onto the person
  Tensor raw;    // [3, H, W], decoder output before paste-back
};

// Request k starts from noise drawn with mix_seed(seed, first_index + k). All
// requests are denoised as one batch.
std::vector<TryOnResult> run_tryon(std::span<const TryOnRequest> requests, const TryOnModel& model,
                                   const SamplerConfig& sampler, std::uint64_t first_index = 0);

// One training pair with its frozen-codec encodings cached.
struct EncodedExample {
  Tensor z0;   // [4, 2h, w]: encode(ground truth) stacked above encode(I_g)
  Tensor x_c;  // [4, 2h, w]
  Tensor m_c;  // [1, 2h, w]
};

// persons, garments [n, 3, H, W]; masks [n, 1, H, W].
std::vector<EncodedExample> encode_examples(const Tensor& persons, const Tensor& garments, const Tensor& masks,
                                            const Codec& codec);

struct TrainConfig {
  int steps = 5000;
  int batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.01;
  TrainableSet trainable = TrainableSet::kUnet;
  DreamConfig dream = DreamConfig::disabled();
  double dropout = 0.1;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: never

  void validate() const;
};

struct TrainBatch {
  Tensor z0;   // [b, 4, 2h, w]
  Tensor x_c;  // [b, 4, 2h, w]
  Tensor m_c;  // [b, 1, 2h, w]
};

TrainBatch stack_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> indices);

// Example indices for a step: consecutive slots of per-epoch permutations
// drawn from mix_seed(seed, epoch).
std::vector<std::size_t> batch_indices(std::uint64_t seed, long long step, int batch_size, std::size_t n);

struct LossEval {
  double loss = 0.0;
  ParameterSet watched;
  Gradients grads;
};

// Draws, in order, the dropout decisions, one t per sample and the noise from
// `rng`, then regresses the (rectified) noise over both latent halves.
LossEval loss_and_gradients(const ParameterSet& params, const UNetConfig& config, const TrainBatch& batch,
                            const NoiseSchedule& schedule, const TrainConfig& train, Rng& rng);

struct TrainState {
  ParameterSet params;
  AdamW optimizer;
  Rng rng;
  long long step = 0;
  std::vector<double> losses;
};

TrainState init_train_state(const UNetConfig& config, const TrainConfig& train);

// Runs one step on the indexed batch and updates only trainable entries.
// Throws std::runtime_error on a non-finite loss.
double train_step(TrainState& state, const TrainBatch& batch, const UNetConfig& config, const NoiseSchedule& schedule,
                  const TrainConfig& train);

struct TrainHooks {
  std::function<void(const TrainState&)> on_checkpoint;
  std::function<void(const TrainState&, double loss)> on_step;
};

// Continues from state.step until `train.steps`.
void train_loop(TrainState& state, std::span<const EncodedExample> data, const UNetConfig& config,
                const NoiseSchedule& schedule, const TrainConfig& train, const TrainHooks& hooks = {});

}  // namespace vton

#endif  // VTON_PIPELINE_HPP_
