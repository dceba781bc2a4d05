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

#include "vton/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "vton/ops.hpp"

namespace vton {

double NoiseSchedule::abar(int t) const {
  if (t < 0 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(ScheduleKind kind, double beta_start, double beta_end, int T) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be positive");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T));
  const double a = kind == ScheduleKind::kScaledLinear ? std::sqrt(beta_start) : beta_start;
  const double b = kind == ScheduleKind::kScaledLinear ? std::sqrt(beta_end) : beta_end;
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    const double v = a + (b - a) * frac;
    const double beta = kind == ScheduleKind::kScaledLinear ? v * v : v;
    s.beta[static_cast<std::size_t>(i)] = beta;
    prod *= 1.0 - beta;
    s.alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

namespace {

// Per-element coefficient tensor [b, 1, ..., 1] broadcastable over x.
Tensor per_sample(const Tensor& x, std::span<const int> t, const std::function<double(int)>& f) {
  const Index bsz = x.dim(0);
  if (t.size() != 1 && static_cast<Index>(t.size()) != bsz) throw ShapeError("one timestep per sample expected");
  Shape shape(static_cast<std::size_t>(x.rank()), 1);
  shape[0] = bsz;
  Buffer v(bsz);
  for (Index i = 0; i < bsz; ++i) v[i] = f(t[t.size() == 1 ? 0 : static_cast<std::size_t>(i)]);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

Tensor add_noise(const Tensor& z0, const Tensor& eps, std::span<const int> t, const NoiseSchedule& s) {
  if (z0.shape() != eps.shape()) throw ShapeError("add_noise: z0 and eps shapes differ");
  for (int ti : t) {
    if (ti < 1 || ti > s.T) throw std::out_of_range("add_noise: timestep " + std::to_string(ti) + " outside [1, T]");
  }
  Tensor a = per_sample(z0, t, [&s](int ti) { return std::sqrt(s.abar(ti)); });
  Tensor b = per_sample(z0, t, [&s](int ti) { return std::sqrt(1.0 - s.abar(ti)); });
  return add(mul(z0, a), mul(eps, b));
}

Tensor ldm_loss(const Tensor& eps_pred, const Tensor& eps) { return mse_loss(eps_pred, eps); }

DreamTargets dream_targets(const Tensor& z0, const Tensor& eps, std::span<const int> t, const NoiseSchedule& s,
                           const EpsModel& model, const DreamConfig& dream) {
  if (!(dream.lambda >= 0.0)) throw std::invalid_argument("dream_targets: lambda must be non-negative");
  if (!dream.enabled() || dream.lambda == 0.0) return {add_noise(z0, eps, t, s), eps};
  const Tensor z0c = z0.detached(), epsc = eps.detached();
  const Tensor eps_theta = model(add_noise(z0c, epsc, t, s), t).detached();
  Tensor eps_hat = add(epsc, scale(eps_theta, dream.lambda));
  return {add_noise(z0c, eps_hat, t, s), eps_hat};
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("ddim_timesteps: need 1 <= steps <= T");
  std::vector<int> out;
  for (int i = 0; i < steps; ++i) {
    out.push_back(static_cast<int>(static_cast<long long>(steps - i) * T / steps));
  }
  out.push_back(0);
  return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& s, double eta,
                 Rng* rng) {
  if (!(t > t_prev && t_prev >= 0)) throw std::invalid_argument("ddim_step: need t > t_prev >= 0");
  if (z_t.shape() != eps_pred.shape()) throw ShapeError("ddim_step: shape mismatch");
  const double at = s.abar(t), ap = s.abar(t_prev);
  Tensor z0_hat = scale(sub(z_t, scale(eps_pred, std::sqrt(1.0 - at))), 1.0 / std::sqrt(at));
  if (eta == 0.0) return add(scale(z0_hat, std::sqrt(ap)), scale(eps_pred, std::sqrt(1.0 - ap)));
  if (!rng) throw std::invalid_argument("ddim_step: eta > 0 needs an rng");
  const double sigma = eta * std::sqrt((1.0 - ap) / (1.0 - at)) * std::sqrt(1.0 - at / ap);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ap - sigma * sigma));
  Tensor noise = Tensor::randn(z_t.shape(), *rng);
  return add(add(scale(z0_hat, std::sqrt(ap)), scale(eps_pred, dir)), scale(noise, sigma));
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
  if (eps_cond.shape() != eps_uncond.shape()) throw ShapeError("cfg_combine: shape mismatch");
  if (s == 1.0) return eps_cond;
  if (s == 0.0) return eps_uncond;
  return add(eps_uncond, scale(sub(eps_cond, eps_uncond), s));
}

}  // namespace vton
