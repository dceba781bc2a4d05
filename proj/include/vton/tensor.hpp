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

#ifndef VTON_TENSOR_HPP_
#define VTON_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vton/rng.hpp"

namespace vton {

using Index = std::int64_t;
using Shape = std::vector<Index>;
using Buffer = Eigen::ArrayXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

Index numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TapeState;
}

class Tensor;

// Write-side view handed to a backward closure: slot i accumulates the
// gradient of input i, and exists only when that input needs one.
struct GradSink {
  std::span<Buffer* const> slots;
  bool wants(std::size_t i) const { return i < slots.size() && slots[i] != nullptr; }
  Buffer& operator[](std::size_t i) const { return *slots[i]; }
};

using BackwardFn = std::function<void(const Buffer& grad_out, GradSink& sink)>;

// Records `out` as the result of an operation over `inputs`. When no input is
// on a tape the tensor is returned untouched and `fn` is dropped.
Tensor detail_record(Tensor out, std::span<const Tensor* const> inputs, BackwardFn fn);

// Dense row-major tensor of doubles. Storage is shared and never mutated after
// construction, so copies are cheap and safe to hand to other threads.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor of(Shape shape, std::initializer_list<double> values);
  static Tensor randn(Shape shape, Rng& rng);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  // Negative axes count from the back.
  Index dim(int axis) const;
  Index numel() const { return data_ ? data_->size() : 0; }

  const Buffer& values() const { return *data_; }
  std::span<const double> data() const { return {data_->data(), static_cast<std::size_t>(data_->size())}; }
  double item() const;
  double at(std::initializer_list<Index> index) const;

  // True when this tensor is linked to a tape and gradients flow through it.
  bool requires_grad() const { return tape_ != nullptr; }
  Tensor detached() const;
  // Same storage under a new shape of equal element count; not tape-linked.
  Tensor with_shape(Shape shape) const;
  bool shares_storage_with(const Tensor& other) const { return data_ == other.data_; }

 private:
  friend class Tape;
  friend Tensor detail_record(Tensor, std::span<const Tensor* const>, BackwardFn);
  friend class Gradients;

  Shape shape_;
  std::shared_ptr<const Buffer> data_;
  std::shared_ptr<detail::TapeState> tape_;
  Index node_ = -1;
};

inline Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  return detail_record(std::move(out), std::span<const Tensor* const>(inputs.begin(), inputs.size()), std::move(fn));
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

class Gradients {
 public:
  // Gradient for a watched leaf; zeros when the loss does not depend on it.
  Tensor of(const Tensor& leaf) const;
  bool has(const Tensor& leaf) const;

 private:
  friend class Tape;
  std::shared_ptr<detail::TapeState> tape_;
  std::vector<Buffer> grads_;
  std::vector<bool> present_;
};

// Ordered record of operations for one forward pass. Confined to a single
// thread; backward may run once.
class Tape {
 public:
  Tape();

  Tensor watch(const Tensor& leaf);
  Gradients backward(const Tensor& loss);

  std::size_t size() const;
  bool consumed() const;

 private:
  std::shared_ptr<detail::TapeState> state_;
};

}  // namespace vton

#endif  // VTON_TENSOR_HPP_
