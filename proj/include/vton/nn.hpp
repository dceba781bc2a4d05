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

#ifndef VTON_NN_HPP_
#define VTON_NN_HPP_

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vton/ops.hpp"
#include "vton/rng.hpp"
#include "vton/tensor.hpp"

namespace vton {

// Named parameters in insertion order.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value);
  // Replaces an existing entry; the shape must not change.
  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  Index count() const;
  Index count(const std::function<bool(const std::string&)>& pred) const;

  // Copy in which every entry selected by `pred` is watched on `tape`.
  ParameterSet watched(Tape& tape, const std::function<bool(const std::string&)>& pred) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

// Group-norm statistics capture. In kRecord mode every normalization stores
// its live statistics; in kReplay mode the stored statistics are reused, in
// order, as constants. Replaying the statistics of a reference input turns the
// network into a function of purely local receptive field outside attention.
class NormPin {
 public:
  enum class Mode { kRecord, kReplay };
  explicit NormPin(Mode mode) : mode_(mode) {}

  Mode mode() const { return mode_; }
  void replay() {
    mode_ = Mode::kReplay;
    cursor_ = 0;
  }
  std::size_t size() const { return stats_.size(); }
  Tensor apply(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta);

 private:
  Mode mode_;
  std::vector<NormStats> stats_;
  std::size_t cursor_ = 0;
};

Tensor norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, NormPin* pin = nullptr);

inline constexpr double kMaxPeriod = 10000.0;

// Sinusoidal embedding [t.size(), dim]: sin half then cos half of
// t / period^(i / (dim/2)).
Tensor timestep_embedding(std::span<const int> t, int dim, int num_timesteps = 1000);

// Shape-only description of a parameter and how it is initialized.
struct ParamSpec {
  enum class Init { kUniform, kOnes, kZeros };
  std::string name;
  Shape shape;
  Init init = Init::kUniform;
  Index fan_in = 1;  // kUniform draws from U(+-1/sqrt(fan_in))
};
using Layout = std::vector<ParamSpec>;

Index count(const Layout& layout);
// Draws every parameter in layout order.
void materialize(const Layout& layout, Rng& rng, ParameterSet& out);

void layout_linear(Layout& l, const std::string& name, Index in, Index out, bool bias);
void layout_conv(Layout& l, const std::string& name, Index in, Index out, Index k);
void layout_norm(Layout& l, const std::string& name, Index channels);
void layout_res_block(Layout& l, const std::string& prefix, Index in, Index out, Index temb_dim);
// `context_dim` > 0 adds the text cross-attention sub-block (norm2, attn2)
// found in full-scale text-to-image UNets; such layouts are for accounting only.
void layout_attention_block(Layout& l, const std::string& prefix, Index channels, Index context_dim = 0);
void layout_resample(Layout& l, const std::string& prefix, Index channels);

void init_res_block(ParameterSet& p, const std::string& prefix, Index in, Index out, Index temb_dim, Rng& rng);
// skip(x) + conv2(silu(norm2(conv1(silu(norm1(x))) + proj(silu(temb))))).
Tensor res_block(const Tensor& x, const Tensor& temb, const ParameterSet& p, const std::string& prefix, int groups,
                 NormPin* pin = nullptr);

// Plain multi-head attention over tokens [b, n, c] with the prefix's
// to_q/to_k/to_v (no bias) and to_out.0 (with bias).
Tensor self_attention(const Tensor& tokens, const ParameterSet& p, const std::string& prefix, int heads);
// softmax(q k^T / sqrt(c/heads)) for q, k [b, n, c]; result [b, heads, n, n].
Tensor attention_weights(const Tensor& q, const Tensor& k, int heads);

void init_attention_block(ParameterSet& p, const std::string& prefix, Index channels, Rng& rng);
// Spatial transformer without cross-attention:
// x + proj_out(t), t = proj_in(norm(x)) tokens, t += attn1(ln1(t)), t += ff(ln3(t)).
Tensor attention_block(const Tensor& x, const ParameterSet& p, const std::string& prefix, int groups, int heads,
                       NormPin* pin = nullptr);

void init_downsample(ParameterSet& p, const std::string& prefix, Index channels, Rng& rng);
Tensor downsample(const Tensor& x, const ParameterSet& p, const std::string& prefix);
void init_upsample(ParameterSet& p, const std::string& prefix, Index channels, Rng& rng);
Tensor upsample(const Tensor& x, const ParameterSet& p, const std::string& prefix);

}  // namespace vton

#endif  // VTON_NN_HPP_
