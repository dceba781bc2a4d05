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

#ifndef VTON_GRADCHECK_HPP_
#define VTON_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vton/tensor.hpp"

namespace vton::testing {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central-difference gradient of f with respect to input k, computed without
// any tape involvement.
inline Buffer numeric_grad(const ScalarFn& f, const std::vector<Tensor>& inputs, std::size_t k, double h = 1e-5) {
  Buffer g(inputs[k].numel());
  for (Index i = 0; i < g.size(); ++i) {
    std::vector<Tensor> plus = inputs, minus = inputs;
    Buffer bp = inputs[k].values(), bm = inputs[k].values();
    bp[i] += h;
    bm[i] -= h;
    plus[k] = Tensor(inputs[k].shape(), bp);
    minus[k] = Tensor(inputs[k].shape(), bm);
    g[i] = (f(plus).item() - f(minus).item()) / (2.0 * h);
  }
  return g;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool ok = true;
};

// Compares tape gradients against finite differences for every input.
// Relative error is |a - n| / max(1, |a|, |n|).
inline GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double tol = 1e-6) {
  Tape tape;
  std::vector<Tensor> watched;
  for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
  Gradients grads = tape.backward(f(watched));
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Buffer analytic = grads.of(watched[k]).values();
    const Buffer numeric = numeric_grad(f, inputs, k);
    for (Index i = 0; i < analytic.size(); ++i) {
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric[i]) / denom);
    }
  }
  r.ok = r.max_rel_error <= tol;
  return r;
}

// Norm-wise relative error ||a - n|| / max(||a||, ||n||), or the absolute
// error when both vanish.
inline double relative_error(const Buffer& analytic, const Buffer& numeric) {
  const double scale = std::max(std::sqrt(analytic.square().sum()), std::sqrt(numeric.square().sum()));
  const double diff = std::sqrt((analytic - numeric).square().sum());
  return scale > 0.0 ? diff / scale : diff;
}

}  // namespace vton::testing

#endif  // VTON_GRADCHECK_HPP_
