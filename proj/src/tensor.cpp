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

#include "vton/tensor.hpp"

#include <sstream>

namespace vton {

namespace detail {

struct TapeNode {
  std::vector<Index> parents;  // -1 marks a constant input
  BackwardFn backward;         // empty for leaves
  Index numel = 0;
  Shape shape;
  bool leaf = false;
};

struct TapeState {
  std::vector<TapeNode> nodes;
  bool consumed = false;
};

}  // namespace detail

Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, Buffer data) : shape_(std::move(shape)) {
  if (numel_of(shape_) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " + to_string(shape_));
  }
  data_ = std::make_shared<const Buffer>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const Index n = numel_of(shape);
  return Tensor(std::move(shape), Buffer::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, Buffer::Constant(1, value)); }

Tensor Tensor::of(Shape shape, std::initializer_list<double> values) {
  Buffer b(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) b[i++] = v;
  return Tensor(std::move(shape), std::move(b));
}

Tensor Tensor::randn(Shape shape, Rng& rng) {
  Buffer b(numel_of(shape));
  for (Index i = 0; i < b.size(); ++i) b[i] = rng.normal();
  return Tensor(std::move(shape), std::move(b));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  Buffer b(numel_of(shape));
  for (Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(b));
}

Index Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<Index> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("at(): index rank mismatch for " + to_string(shape_));
  Index flat = 0;
  std::size_t k = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape_[k]) throw ShapeError("at(): index out of range for " + to_string(shape_));
    flat = flat * shape_[k] + i;
    ++k;
  }
  return (*data_)[flat];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::with_shape(Shape shape) const {
  if (numel_of(shape) != numel()) throw ShapeError("cannot view " + to_string(shape_) + " as " + to_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

Tensor detail_record(Tensor out, std::span<const Tensor* const> inputs, BackwardFn fn) {
  std::shared_ptr<detail::TapeState> tape;
  for (const Tensor* in : inputs) {
    if (!in->tape_) continue;
    if (tape && tape != in->tape_) throw AutodiffError("operation mixes tensors from two different tapes");
    tape = in->tape_;
  }
  if (!tape) return out;
  if (tape->consumed) throw AutodiffError("operation recorded on a tape that already ran backward");

  detail::TapeNode node;
  node.parents.reserve(inputs.size());
  for (const Tensor* in : inputs) node.parents.push_back(in->tape_ ? in->node_ : -1);
  node.backward = std::move(fn);
  node.numel = out.numel();
  node.shape = out.shape();
  tape->nodes.push_back(std::move(node));

  out.tape_ = tape;
  out.node_ = static_cast<Index>(tape->nodes.size()) - 1;
  return out;
}

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tensor Tape::watch(const Tensor& leaf) {
  if (!leaf.defined()) throw AutodiffError("watch(): undefined tensor");
  if (leaf.tape_) throw AutodiffError("watch(): tensor already participates in a tape");
  if (state_->consumed) throw AutodiffError("watch(): tape already ran backward");
  detail::TapeNode node;
  node.numel = leaf.numel();
  node.shape = leaf.shape();
  node.leaf = true;
  state_->nodes.push_back(std::move(node));

  Tensor t = leaf.detached();
  t.tape_ = state_;
  t.node_ = static_cast<Index>(state_->nodes.size()) - 1;
  return t;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw AutodiffError("backward(): loss must be a scalar, got shape " + to_string(loss.shape()));
  if (loss.tape_ != state_) throw AutodiffError("backward(): loss is not on this tape");
  if (state_->consumed) throw AutodiffError("backward(): tape already consumed");
  state_->consumed = true;

  auto& nodes = state_->nodes;
  std::vector<Buffer> grads(nodes.size());
  std::vector<bool> present(nodes.size(), false);
  grads[static_cast<std::size_t>(loss.node_)] = Buffer::Ones(1);
  present[static_cast<std::size_t>(loss.node_)] = true;

  std::vector<Buffer*> slots;
  for (Index n = loss.node_; n >= 0; --n) {
    const auto un = static_cast<std::size_t>(n);
    if (!present[un]) continue;
    detail::TapeNode& node = nodes[un];
    if (node.leaf) continue;
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      const Index p = node.parents[i];
      if (p < 0) continue;
      const auto up = static_cast<std::size_t>(p);
      if (!present[up]) {
        grads[up] = Buffer::Zero(nodes[up].numel);
        present[up] = true;
      }
      slots[i] = &grads[up];
    }
    GradSink sink{slots};
    node.backward(grads[un], sink);
    // Interior gradients are no longer needed once propagated.
    grads[un] = Buffer();
    node.backward = nullptr;
  }

  Gradients out;
  out.tape_ = state_;
  out.grads_ = std::move(grads);
  out.present_ = std::move(present);
  return out;
}

std::size_t Tape::size() const { return state_->nodes.size(); }
bool Tape::consumed() const { return state_->consumed; }

Tensor Gradients::of(const Tensor& leaf) const {
  if (leaf.tape_ != tape_ || leaf.node_ < 0) throw AutodiffError("Gradients::of(): tensor is not a leaf of this tape");
  const auto n = static_cast<std::size_t>(leaf.node_);
  if (!tape_->nodes[n].leaf) throw AutodiffError("Gradients::of(): tensor is not a watched leaf");
  if (!present_[n]) return Tensor::zeros(leaf.shape());
  return Tensor(leaf.shape(), grads_[n]);
}

bool Gradients::has(const Tensor& leaf) const {
  return leaf.tape_ == tape_ && leaf.node_ >= 0 && present_[static_cast<std::size_t>(leaf.node_)];
}

}  // namespace vton
