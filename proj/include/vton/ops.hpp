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

#ifndef VTON_OPS_HPP_
#define VTON_OPS_HPP_

#include <span>
#include <vector>

#include "vton/tensor.hpp"

// Differentiable operations. Every function records itself on the tape of its
// inputs (if any) and is otherwise a pure function of its arguments.
namespace vton {

// Elementwise arithmetic. `b` must either match `a` or broadcast to it
// (right-aligned extents equal or 1); the result always has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// [..., m, k] x [..., k, n] -> [..., m, n] with broadcast leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);
// x [..., in] * weight[out, in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};
// x [b, c, h, w], weight [o, c, kh, kw], optional bias [o].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {}, Conv2dOptions opt = {});

inline constexpr double kGroupNormEps = 1e-6;

// Per-(sample, group) statistics of a group norm.
struct NormStats {
  Buffer mean;  // [b * groups]
  Buffer rstd;  // [b * groups]
};

NormStats group_norm_stats(const Tensor& x, int groups, double eps = kGroupNormEps);
// x [b, c, ...]; gamma, beta [c].
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = kGroupNormEps);
// Normalizes with externally supplied statistics, treated as constants.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, const NormStats& stats);
// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor softmax(const Tensor& x, int axis);

Tensor concat(std::span<const Tensor> tensors, int axis);
inline Tensor concat(std::initializer_list<Tensor> tensors, int axis) {
  return concat(std::span<const Tensor>(tensors.begin(), tensors.size()), axis);
}
Tensor slice(const Tensor& x, int axis, Index start, Index length);
std::vector<Tensor> split(const Tensor& x, std::span<const Index> sizes, int axis);
inline std::vector<Tensor> split(const Tensor& x, std::initializer_list<Index> sizes, int axis) {
  return split(x, std::span<const Index>(sizes.begin(), sizes.size()), axis);
}

// One extent may be -1 and is inferred.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const int> order);
inline Tensor permute(const Tensor& x, std::initializer_list<int> order) {
  return permute(x, std::span<const int>(order.begin(), order.size()));
}

// Nearest-neighbour upsampling / mean pooling over the two trailing axes.
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor avg_pool(const Tensor& x, int factor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean((a - b)^2) over all elements.
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace vton

#endif  // VTON_OPS_HPP_
