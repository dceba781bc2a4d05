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

#include "vton/optim.hpp"

#include <cmath>

namespace vton {

void AdamW::step(ParameterSet& params, const ParameterSet& watched, const Gradients& grads,
                 const std::function<bool(const std::string&)>& trainable) {
  ++steps_;
  const AdamWOptions& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(steps_));
  for (const std::string& name : params.names()) {
    if (!trainable(name)) continue;
    const Tensor& p = params.get(name);
    const Buffer g = grads.of(watched.get(name)).values();
    if (!m_.contains(name)) {
      m_.add(name, Tensor::zeros(p.shape()));
      v_.add(name, Tensor::zeros(p.shape()));
    }
    Buffer m = o.beta1 * m_.get(name).values() + (1.0 - o.beta1) * g;
    Buffer v = o.beta2 * v_.get(name).values() + (1.0 - o.beta2) * g.square();
    Buffer next = p.values() - o.lr * ((m / c1) / ((v / c2).sqrt() + o.eps) + o.weight_decay * p.values());
    m_.set(name, Tensor(p.shape(), std::move(m)));
    v_.set(name, Tensor(p.shape(), std::move(v)));
    params.set(name, Tensor(p.shape(), std::move(next)));
  }
}

void AdamW::restore(long long steps, ParameterSet m, ParameterSet v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace vton
