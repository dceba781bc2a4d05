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
#include <limits>
#include <stdexcept>

#include "vton/optim.hpp"

namespace vton {

const double Codec::kMix[4][3] = {
    {0.5, 0.5, 0.5},
    {0.5, -0.5, 0.5},
    {0.5, 0.5, -0.5},
    {0.5, -0.5, -0.5},
};

std::string_view to_string(CodecMode mode) { return mode == CodecMode::kAnalytic ? "analytic" : "learned"; }

namespace {

const std::string kEnc = "first_stage_model.encoder";
const std::string kDec = "first_stage_model.decoder";

Tensor mix_weight(bool transpose) {
  Buffer b(12);
  for (int k = 0; k < 4; ++k)
    for (int c = 0; c < 3; ++c) b[transpose ? c * 4 + k : k * 3 + c] = Codec::kMix[k][c];
  return transpose ? Tensor({3, 4}, b) : Tensor({4, 3}, b);
}

// Applies a per-pixel channel map x [b, c, h, w] -> [b, o, h, w].
Tensor channel_map(const Tensor& x, const Tensor& weight) {
  return permute(linear(permute(x, {0, 2, 3, 1}), weight), {0, 3, 1, 2});
}

const Tensor& W(const ParameterSet& p, const std::string& n) { return p.get(n + ".weight"); }
const Tensor& B(const ParameterSet& p, const std::string& n) { return p.get(n + ".bias"); }

void check_image(const Tensor& image) {
  if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("codec: expected image [b,3,H,W], got " + to_string(image.shape()));
  if (image.dim(2) % kCodecFactor != 0 || image.dim(3) % kCodecFactor != 0) {
    throw ShapeError("codec: image extents " + to_string(image.shape()) + " not divisible by 8");
  }
}

void check_latent(const Tensor& latent) {
  if (latent.rank() != 4 || latent.dim(1) != kLatentChannels) {
    throw ShapeError("codec: expected latent [b,4,h,w], got " + to_string(latent.shape()));
  }
}

}  // namespace

Codec Codec::analytic() { return Codec(CodecMode::kAnalytic, std::make_shared<const ParameterSet>(), {}); }

Codec Codec::learned(ParameterSet params, std::vector<Index> widths) {
  if (widths.size() != 3) throw std::invalid_argument("learned codec needs three stage widths");
  const Layout layout = learned_codec_layout(widths);
  for (const ParamSpec& s : layout) {
    if (!params.contains(s.name) || params.get(s.name).shape() != s.shape) {
      throw std::invalid_argument("learned codec: missing or mis-shaped parameter " + s.name);
    }
  }
  return Codec(CodecMode::kLearned, std::make_shared<const ParameterSet>(std::move(params)), std::move(widths));
}

Layout learned_codec_layout(const std::vector<Index>& w) {
  if (w.size() != 3) throw std::invalid_argument("learned codec needs three stage widths");
  Layout l;
  layout_conv(l, kEnc + ".conv_in", 3, w[0], 3);
  layout_conv(l, kEnc + ".down.0", w[0], w[0], 3);
  layout_conv(l, kEnc + ".down.1", w[0], w[1], 3);
  layout_conv(l, kEnc + ".down.2", w[1], w[2], 3);
  layout_conv(l, kEnc + ".conv_out", w[2], kLatentChannels, 3);
  layout_conv(l, kDec + ".conv_in", kLatentChannels, w[2], 3);
  layout_conv(l, kDec + ".up.0", w[2], w[1], 3);
  layout_conv(l, kDec + ".up.1", w[1], w[0], 3);
  layout_conv(l, kDec + ".up.2", w[0], w[0], 3);
  layout_conv(l, kDec + ".conv_out", w[0], 3, 3);
  return l;
}

Tensor Codec::encode_with(const Tensor& image, const ParameterSet& p) const {
  check_image(image);
  if (mode_ == CodecMode::kAnalytic) return channel_map(avg_pool(image, kCodecFactor), mix_weight(false));
  constexpr Conv2dOptions same{.stride = 1, .padding = 1}, half{.stride = 2, .padding = 1};
  Tensor h = silu(conv2d(image, W(p, kEnc + ".conv_in"), B(p, kEnc + ".conv_in"), same));
  for (int i = 0; i < 3; ++i) {
    const std::string n = kEnc + ".down." + std::to_string(i);
    h = silu(conv2d(h, W(p, n), B(p, n), half));
  }
  return conv2d(h, W(p, kEnc + ".conv_out"), B(p, kEnc + ".conv_out"), same);
}

Tensor Codec::decode_raw(const Tensor& latent, const ParameterSet& p) const {
  check_latent(latent);
  if (mode_ == CodecMode::kAnalytic) return upsample_nearest(channel_map(latent, mix_weight(true)), kCodecFactor);
  constexpr Conv2dOptions same{.stride = 1, .padding = 1};
  Tensor h = silu(conv2d(latent, W(p, kDec + ".conv_in"), B(p, kDec + ".conv_in"), same));
  for (int i = 0; i < 3; ++i) {
    const std::string n = kDec + ".up." + std::to_string(i);
    h = silu(conv2d(upsample_nearest(h, 2), W(p, n), B(p, n), same));
  }
  return conv2d(h, W(p, kDec + ".conv_out"), B(p, kDec + ".conv_out"), same);
}

Tensor Codec::encode(const Tensor& image) const { return encode_with(image, *params_); }

Tensor Codec::decode(const Tensor& latent) const { return clamp(decode_raw(latent, *params_), -1.0, 1.0); }

CodecTrainResult train_codec(const std::vector<Tensor>& images, const CodecTrainOptions& o) {
  if (images.empty()) throw std::invalid_argument("train_codec: empty dataset");
  if (o.steps < 0 || o.batch_size <= 0) throw std::invalid_argument("train_codec: invalid steps or batch size");
  Rng rng(o.seed);
  ParameterSet params;
  materialize(learned_codec_layout(o.widths), rng, params);
  const Codec shape_only = Codec::learned(params, o.widths);
  AdamW opt(AdamWOptions{.lr = o.lr, .weight_decay = 0.0});
  const auto all = [](const std::string&) { return true; };

  CodecTrainResult result{shape_only, {}, 0, std::numeric_limits<double>::infinity()};
  ParameterSet best = params;
  double ema = 0.0;
  const Shape one = images.front().shape();
  for (int step = 0; step < o.steps; ++step) {
    std::vector<Tensor> batch;
    for (int i = 0; i < o.batch_size; ++i) {
      const Tensor& img = images[rng.below(images.size())];
      batch.push_back(reshape(img, {1, one[0], one[1], one[2]}));
    }
    Tensor x = concat(batch, 0);
    Tape tape;
    ParameterSet watched = params.watched(tape, all);
    Tensor loss = mse_loss(shape_only.decode_raw(shape_only.encode_with(x, watched), watched), x);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw std::runtime_error("train_codec: loss diverged at step " + std::to_string(step));
    result.losses.push_back(lv);
    ema = step == 0 ? lv : 0.95 * ema + 0.05 * lv;
    // The smoothed value lags, so the snapshot taken here matches it.
    if (step >= 20 && ema < result.best_smoothed_loss) {
      result.best_smoothed_loss = ema;
      result.best_step = step;
      best = params;
    }
    Gradients g = tape.backward(loss);
    opt.step(params, watched, g, all);
  }
  if (o.steps <= 20) {
    best = params;
    result.best_step = o.steps;
    result.best_smoothed_loss = ema;
  }
  result.codec = Codec::learned(std::move(best), o.widths);
  return result;
}

}  // namespace vton
