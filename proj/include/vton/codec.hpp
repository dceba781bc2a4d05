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

#ifndef VTON_CODEC_HPP_
#define VTON_CODEC_HPP_

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "vton/nn.hpp"

namespace vton {

inline constexpr int kCodecFactor = 8;
inline constexpr Index kLatentChannels = 4;

enum class CodecMode { kAnalytic, kLearned };

std::string_view to_string(CodecMode mode);

// Image <-> latent map at 1/8 resolution. Analytic mode is 8x8 mean pooling
// followed by a fixed 4x3 mixing with orthonormal columns (entries +-1/2);
// learned mode is a small convolutional autoencoder.
class Codec {
 public:
  static Codec analytic();
  static Codec learned(ParameterSet params, std::vector<Index> widths);

  CodecMode mode() const { return mode_; }
  const std::vector<Index>& widths() const { return widths_; }
  const ParameterSet& params() const { return *params_; }

  // image [b, 3, H, W] in [-1, 1] -> latent [b, 4, H/8, W/8].
  Tensor encode(const Tensor& image) const;
  // latent [b, 4, h, w] -> image [b, 3, 8h, 8w] clamped to [-1, 1].
  Tensor decode(const Tensor& latent) const;
  // Unclamped decoder output; differentiable in the parameters it is given.
  Tensor decode_raw(const Tensor& latent, const ParameterSet& params) const;
  Tensor encode_with(const Tensor& image, const ParameterSet& params) const;

  // Mixing matrix rows: latent channel k = sum_c mix[k][c] * pooled channel c.
  static const double kMix[4][3];

 private:
  Codec(CodecMode mode, std::shared_ptr<const ParameterSet> params, std::vector<Index> widths)
      : mode_(mode), params_(std::move(params)), widths_(std::move(widths)) {}

  CodecMode mode_;
  std::shared_ptr<const ParameterSet> params_;
  std::vector<Index> widths_;
};

// Parameters live under "first_stage_model.{encoder,decoder}".
Layout learned_codec_layout(const std::vector<Index>& widths);

struct CodecTrainOptions {
  int steps = 2000;
  int batch_size = 8;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  std::vector<Index> widths{16, 32, 64};
};

struct CodecTrainResult {
  Codec codec;
  std::vector<double> losses;
  int best_step = 0;
  double best_smoothed_loss = 0.0;
};

// Plain autoencoder regression (MSE) over images [3, H, W]. The returned
// codec holds the parameters of the step with the lowest smoothed loss.
// Throws std::runtime_error if the loss turns non-finite.
CodecTrainResult train_codec(const std::vector<Tensor>& images, const CodecTrainOptions& options);

}  // namespace vton

#endif  // VTON_CODEC_HPP_
