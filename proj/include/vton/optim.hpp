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

#ifndef VTON_OPTIM_HPP_
#define VTON_OPTIM_HPP_

#include <functional>
#include <string>

#include "vton/nn.hpp"

namespace vton {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. Moments live in parameter sets keyed by the
// same names as the parameters they track.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  // Updates every parameter for which `grads` holds a gradient on its watched
  // counterpart in `watched`; all other entries are left bit-identical.
  void step(ParameterSet& params, const ParameterSet& watched, const Gradients& grads,
            const std::function<bool(const std::string&)>& trainable);

  const AdamWOptions& options() const { return options_; }
  long long steps() const { return steps_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }
  void restore(long long steps, ParameterSet m, ParameterSet v);

 private:
  AdamWOptions options_;
  long long steps_ = 0;
  ParameterSet m_;
  ParameterSet v_;
};

}  // namespace vton

#endif  // VTON_OPTIM_HPP_
