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

#include "vton/pipeline.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vton/ops.hpp"

namespace vton {

namespace {

void check_binary(const Tensor& mask) {
  if (!((mask.values() == 0.0) || (mask.values() == 1.0)).all()) throw std::invalid_argument("mask must be binary (0 or 1)");
}

void check_pixels(const Tensor& image, const char* what) {
  if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError(std::string(what) + ": expected [b,3,H,W], got " + to_string(image.shape()));
}

void check_mask(const Tensor& mask, const Tensor& image) {
  if (mask.rank() != 4 || mask.dim(0) != image.dim(0) || mask.dim(1) != 1 || mask.dim(2) != image.dim(2) ||
      mask.dim(3) != image.dim(3)) {
    throw ShapeError("mask " + to_string(mask.shape()) + " does not match image " + to_string(image.shape()));
  }
}

Tensor one_minus(const Tensor& m) { return add(scale(m, -1.0), 1.0); }

Tensor add_batch_axis(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return reshape(t, s);
}

}  // namespace

Tensor make_agnostic(const Tensor& person, const Tensor& mask) {
  check_pixels(person, "make_agnostic");
  check_mask(mask, person);
  check_binary(mask);
  return mul(person, one_minus(mask));
}

Tensor latent_mask(const Tensor& mask) {
  check_binary(mask);
  Tensor pooled = avg_pool(mask, kCodecFactor);
  Buffer v = pooled.values();
  for (Index i = 0; i < v.size(); ++i) v[i] = v[i] > 0.0 ? 1.0 : 0.0;
  return Tensor(pooled.shape(), std::move(v));
}

Condition build_condition(const Tensor& agnostic, const Tensor& garment, const Tensor& mask, const Codec& codec) {
  check_pixels(agnostic, "build_condition");
  check_pixels(garment, "build_condition");
  if (agnostic.shape() != garment.shape()) {
    throw ShapeError("person " + to_string(agnostic.shape()) + " and garment " + to_string(garment.shape()) + " differ");
  }
  check_mask(mask, agnostic);
  const Index b = agnostic.dim(0);
  const std::vector<Tensor> halves = split(codec.encode(concat({agnostic, garment}, 0)), {b, b}, 0);
  const Tensor m = latent_mask(mask);
  return {concat({halves[0], halves[1]}, 2), concat({m, Tensor::zeros(m.shape())}, 2)};
}

Tensor pack_input(const Tensor& z_t, const Condition& c) { return concat({z_t, c.m_c, c.x_c}, 1); }

std::vector<TryOnResult> run_tryon(std::span<const TryOnRequest> requests, const TryOnModel& model,
                                   const SamplerConfig& sampler, std::uint64_t first_index) {
  if (requests.empty()) return {};
  if (model.unet.size() == 0) throw std::invalid_argument("run_tryon: UNet weights are not loaded");
  if (!std::isfinite(sampler.guidance)) throw std::invalid_argument("run_tryon: guidance must be finite");
  std::vector<Tensor> persons, garments, masks;
  for (const TryOnRequest& r : requests) {
    persons.push_back(add_batch_axis(r.person));
    garments.push_back(add_batch_axis(r.garment));
    if (r.mask.rank() != 2) throw ShapeError("run_tryon: mask must be [H,W], got " + to_string(r.mask.shape()));
    masks.push_back(reshape(r.mask, {1, 1, r.mask.dim(0), r.mask.dim(1)}));
  }
  const Tensor person = concat(persons, 0), garment = concat(garments, 0), mask = concat(masks, 0);
  const Condition cond = build_condition(make_agnostic(person, mask), garment, mask, model.codec);
  const Index b = person.dim(0), h = cond.x_c.dim(2) / 2, w = cond.x_c.dim(3);

  std::vector<Tensor> noise;
  for (Index k = 0; k < b; ++k) {
    Rng rng(mix_seed(sampler.seed, first_index + static_cast<std::uint64_t>(k)));
    noise.push_back(Tensor::randn({1, kLatentChannels, 2 * h, w}, rng));
  }
  Tensor z = concat(noise, 0);
  Rng eta_rng(mix_seed(sampler.seed, ~0ull));

  const bool guided = sampler.guidance != 1.0;
  const Condition uncond{Tensor::zeros(cond.x_c.shape()), cond.m_c};
  const Condition both{concat({cond.x_c, uncond.x_c}, 0), concat({cond.m_c, cond.m_c}, 0)};
  const std::vector<int> ts = ddim_timesteps(model.schedule.T, sampler.steps);
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t_net = ts[k] - 1;
    Tensor eps;
    if (guided) {
      const std::vector<Tensor> parts =
          split(unet_forward(model.unet, model.config, pack_input(concat({z, z}, 0), both), t_net), {b, b}, 0);
      eps = cfg_combine(parts[0], parts[1], sampler.guidance);
    } else {
      eps = unet_forward(model.unet, model.config, pack_input(z, cond), t_net);
    }
    z = ddim_step(z, eps, ts[k], ts[k + 1], model.schedule, sampler.eta, &eta_rng);
  }

  const Tensor raw = model.codec.decode(slice(z, 2, 0, h));
  const Tensor out = add(mul(person, one_minus(mask)), mul(raw, mask));
  std::vector<TryOnResult> results;
  for (Index k = 0; k < b; ++k) {
    const Shape one{3, person.dim(2), person.dim(3)};
    results.push_back({reshape(slice(out, 0, k, 1), one), reshape(slice(raw, 0, k, 1), one)});
  }
  return results;
}

std::vector<EncodedExample> encode_examples(const Tensor& persons, const Tensor& garments, const Tensor& masks,
                                            const Codec& codec) {
  check_pixels(persons, "encode_examples");
  const Condition c = build_condition(make_agnostic(persons, masks), garments, masks, codec);
  const Index n = persons.dim(0), h = c.x_c.dim(2) / 2;
  const Tensor z0 = concat({codec.encode(persons), slice(c.x_c, 2, h, h)}, 2);
  std::vector<EncodedExample> out;
  for (Index i = 0; i < n; ++i) {
    auto one = [i](const Tensor& t) {
      Shape s(t.shape().begin() + 1, t.shape().end());
      return reshape(slice(t, 0, i, 1), s);
    };
    out.push_back({one(z0), one(c.x_c), one(c.m_c)});
  }
  return out;
}

void TrainConfig::validate() const {
  if (steps < 0 || batch_size <= 0) throw std::invalid_argument("TrainConfig: steps must be >= 0 and batch size > 0");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw std::invalid_argument("TrainConfig: dropout must lie in [0, 1]");
  if (!(dream.lambda >= 0.0)) throw std::invalid_argument("TrainConfig: DREAM lambda must be non-negative");
  if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint interval must be >= 0");
}

TrainBatch stack_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> indices) {
  std::vector<Tensor> z0, xc, mc;
  for (std::size_t i : indices) {
    const EncodedExample& e = examples[i];
    z0.push_back(add_batch_axis(e.z0));
    xc.push_back(add_batch_axis(e.x_c));
    mc.push_back(add_batch_axis(e.m_c));
  }
  return {concat(z0, 0), concat(xc, 0), concat(mc, 0)};
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, long long step, int batch_size, std::size_t n) {
  if (n == 0) throw std::invalid_argument("batch_indices: empty dataset");
  std::vector<std::size_t> out;
  long long cached_epoch = -1;
  std::vector<std::size_t> perm(n);
  for (int i = 0; i < batch_size; ++i) {
    const long long slot = step * batch_size + i;
    const long long epoch = slot / static_cast<long long>(n);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
      for (std::size_t j = n - 1; j > 0; --j) std::swap(perm[j], perm[rng.below(j + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(slot % static_cast<long long>(n))]);
  }
  return out;
}

LossEval loss_and_gradients(const ParameterSet& params, const UNetConfig& config, const TrainBatch& batch,
                            const NoiseSchedule& schedule, const TrainConfig& train, Rng& rng) {
  const Index b = batch.z0.dim(0);
  const Tensor x_c = condition_dropout(batch.x_c, train.dropout, rng);
  std::vector<int> t(static_cast<std::size_t>(b)), t_net(static_cast<std::size_t>(b));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T)));
    t_net[i] = t[i] - 1;
  }
  const Tensor eps = Tensor::randn(batch.z0.shape(), rng);
  const Condition cond{x_c, batch.m_c};
  const EpsModel frozen = [&](const Tensor& z_t, std::span<const int>) {
    return unet_forward(params, config, pack_input(z_t, cond), t_net);
  };
  const DreamTargets target = dream_targets(batch.z0, eps, t, schedule, frozen, train.dream);

  LossEval out;
  Tape tape;
  out.watched = params.watched(tape, trainable_predicate(train.trainable));
  const Tensor loss = ldm_loss(unet_forward(out.watched, config, pack_input(target.z_hat, cond), t_net), target.eps_hat);
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) return out;
  out.grads = tape.backward(loss);
  return out;
}

TrainState init_train_state(const UNetConfig& config, const TrainConfig& train) {
  train.validate();
  return {build_unet(config, mix_seed(train.seed, 1)),
          AdamW(AdamWOptions{.lr = train.lr, .weight_decay = train.weight_decay}),
          Rng(mix_seed(train.seed, 2)),
          0,
          {}};
}

double train_step(TrainState& state, const TrainBatch& batch, const UNetConfig& config, const NoiseSchedule& schedule,
                  const TrainConfig& train) {
  LossEval e = loss_and_gradients(state.params, config, batch, schedule, train, state.rng);
  if (!std::isfinite(e.loss)) {
    throw std::runtime_error("training diverged: loss " + std::to_string(e.loss) + " at step " + std::to_string(state.step));
  }
  state.optimizer.step(state.params, e.watched, e.grads, trainable_predicate(train.trainable));
  state.losses.push_back(e.loss);
  ++state.step;
  return e.loss;
}

void train_loop(TrainState& state, std::span<const EncodedExample> data, const UNetConfig& config,
                const NoiseSchedule& schedule, const TrainConfig& train, const TrainHooks& hooks) {
  train.validate();
  if (data.empty()) throw std::invalid_argument("train_loop: empty dataset");
  while (state.step < train.steps) {
    const std::vector<std::size_t> idx = batch_indices(mix_seed(train.seed, 3), state.step, train.batch_size, data.size());
    const double loss = train_step(state, stack_batch(data, idx), config, schedule, train);
    if (hooks.on_step) hooks.on_step(state, loss);
    if (hooks.on_checkpoint && train.checkpoint_every > 0 && state.step % train.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
}

}  // namespace vton
