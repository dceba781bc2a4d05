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

#ifndef VTON_DIFFUSION_HPP_
#define VTON_DIFFUSION_HPP_

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "vton/rng.hpp"
#include "vton/tensor.hpp"

namespace vton {

enum class ScheduleKind { kLinear, kScaledLinear };

// Timesteps are 1-based: t = 1..T index beta/alpha_bar, and t = 0 denotes the
// clean latent (alpha_bar(0) = 1). The network sees t - 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t - 1]
  std::vector<double> alpha_bar;  // alpha_bar[t - 1]

  double abar(int t) const;
};

NoiseSchedule make_schedule(ScheduleKind kind = ScheduleKind::kScaledLinear, double beta_start = 8.5e-4,
                            double beta_end = 1.2e-2, int T = 1000);

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with one t per sample (or one shared).
Tensor add_noise(const Tensor& z0, const Tensor& eps, std::span<const int> t, const NoiseSchedule& s);
inline Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& s) {
  return add_noise(z0, eps, std::span<const int>(&t, 1), s);
}

// Mean squared error between predicted and target noise.
Tensor ldm_loss(const Tensor& eps_pred, const Tensor& eps);

struct DreamConfig {
  double lambda = 0.0;
  // Infinite lambda: no rectification pass at all.
  static DreamConfig disabled() { return {std::numeric_limits<double>::infinity()}; }
  bool enabled() const { return lambda != std::numeric_limits<double>::infinity(); }
};

// Noise predictor with its conditioning already bound; t as in add_noise.
using EpsModel = std::function<Tensor(const Tensor& z_t, std::span<const int> t)>;

struct DreamTargets {
  Tensor z_hat;
  Tensor eps_hat;
};

// eps_hat = eps + lambda * eps_theta(z_t), z_hat = noised z0 with eps_hat.
// The first model pass sees only detached inputs, so it records nothing.
DreamTargets dream_targets(const Tensor& z0, const Tensor& eps, std::span<const int> t, const NoiseSchedule& s,
                           const EpsModel& model, const DreamConfig& dream);

// Evenly spaced descending steps T, ..., T/n followed by 0.
std::vector<int> ddim_timesteps(int T, int steps);

// One DDIM update from t to t_prev (t > t_prev >= 0). With eta > 0 the noise
// term draws from `rng`, which must then be non-null.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& s, double eta = 0.0,
                 Rng* rng = nullptr);

// uncond + s (cond - uncond).
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s);

}  // namespace vton

#endif  // VTON_DIFFUSION_HPP_
