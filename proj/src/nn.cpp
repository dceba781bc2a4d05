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

#include "vton/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vton {

void ParameterSet::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

void ParameterSet::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  if (values_[it->second].shape() != value.shape()) {
    throw ShapeError("parameter " + name + " expects " + to_string(values_[it->second].shape()) + ", got " +
                     to_string(value.shape()));
  }
  values_[it->second] = std::move(value);
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter: " + name);
  return values_[it->second];
}

Index ParameterSet::count() const {
  Index n = 0;
  for (const Tensor& t : values_) n += t.numel();
  return n;
}

Index ParameterSet::count(const std::function<bool(const std::string&)>& pred) const {
  Index n = 0;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (pred(names_[i])) n += values_[i].numel();
  }
  return n;
}

ParameterSet ParameterSet::watched(Tape& tape, const std::function<bool(const std::string&)>& pred) const {
  ParameterSet out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    out.add(names_[i], pred(names_[i]) ? tape.watch(values_[i].detached()) : values_[i]);
  }
  return out;
}

Tensor NormPin::apply(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta) {
  if (mode_ == Mode::kRecord) {
    stats_.push_back(group_norm_stats(x, groups));
    return group_norm(x, groups, gamma, beta);
  }
  if (cursor_ >= stats_.size()) throw std::logic_error("NormPin: replay ran past recorded statistics");
  return group_norm(x, groups, gamma, beta, stats_[cursor_++]);
}

Tensor norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, NormPin* pin) {
  if (pin) return pin->apply(x, groups, gamma, beta);
  return group_norm(x, groups, gamma, beta);
}

Tensor timestep_embedding(std::span<const int> t, int dim, int num_timesteps) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be positive and even");
  const int half = dim / 2;
  Buffer out(static_cast<Index>(t.size()) * dim);
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (t[r] < 0 || t[r] >= num_timesteps) {
      throw std::out_of_range("timestep " + std::to_string(t[r]) + " outside [0, " + std::to_string(num_timesteps) + ")");
    }
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(kMaxPeriod) * static_cast<double>(i) / half);
      const double arg = static_cast<double>(t[r]) * freq;
      out[static_cast<Index>(r) * dim + i] = std::sin(arg);
      out[static_cast<Index>(r) * dim + half + i] = std::cos(arg);
    }
  }
  return Tensor({static_cast<Index>(t.size()), dim}, std::move(out));
}

Index count(const Layout& layout) {
  Index n = 0;
  for (const ParamSpec& s : layout) n += numel_of(s.shape);
  return n;
}

void materialize(const Layout& layout, Rng& rng, ParameterSet& out) {
  for (const ParamSpec& s : layout) {
    switch (s.init) {
      case ParamSpec::Init::kUniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
        out.add(s.name, Tensor::uniform(s.shape, -bound, bound, rng));
        break;
      }
      case ParamSpec::Init::kOnes: out.add(s.name, Tensor::ones(s.shape)); break;
      case ParamSpec::Init::kZeros: out.add(s.name, Tensor::zeros(s.shape)); break;
    }
  }
}

void layout_linear(Layout& l, const std::string& name, Index in, Index out, bool bias) {
  l.push_back({name + ".weight", {out, in}, ParamSpec::Init::kUniform, in});
  if (bias) l.push_back({name + ".bias", {out}, ParamSpec::Init::kUniform, in});
}

void layout_conv(Layout& l, const std::string& name, Index in, Index out, Index k) {
  l.push_back({name + ".weight", {out, in, k, k}, ParamSpec::Init::kUniform, in * k * k});
  l.push_back({name + ".bias", {out}, ParamSpec::Init::kUniform, in * k * k});
}

void layout_norm(Layout& l, const std::string& name, Index channels) {
  l.push_back({name + ".weight", {channels}, ParamSpec::Init::kOnes, 1});
  l.push_back({name + ".bias", {channels}, ParamSpec::Init::kZeros, 1});
}

void layout_res_block(Layout& l, const std::string& prefix, Index in, Index out, Index temb_dim) {
  layout_norm(l, prefix + ".norm1", in);
  layout_conv(l, prefix + ".conv1", in, out, 3);
  layout_linear(l, prefix + ".time_emb_proj", temb_dim, out, true);
  layout_norm(l, prefix + ".norm2", out);
  layout_conv(l, prefix + ".conv2", out, out, 3);
  if (in != out) layout_conv(l, prefix + ".conv_shortcut", in, out, 1);
}

void layout_attention_block(Layout& l, const std::string& prefix, Index channels, Index context_dim) {
  const Index c = channels;
  layout_norm(l, prefix + ".norm", c);
  layout_linear(l, prefix + ".proj_in", c, c, true);
  const std::string tb = prefix + ".transformer_blocks.0";
  layout_norm(l, tb + ".norm1", c);
  layout_linear(l, tb + ".attn1.to_q", c, c, false);
  layout_linear(l, tb + ".attn1.to_k", c, c, false);
  layout_linear(l, tb + ".attn1.to_v", c, c, false);
  layout_linear(l, tb + ".attn1.to_out.0", c, c, true);
  if (context_dim > 0) {
    layout_norm(l, tb + ".norm2", c);
    layout_linear(l, tb + ".attn2.to_q", c, c, false);
    layout_linear(l, tb + ".attn2.to_k", context_dim, c, false);
    layout_linear(l, tb + ".attn2.to_v", context_dim, c, false);
    layout_linear(l, tb + ".attn2.to_out.0", c, c, true);
  }
  layout_norm(l, tb + ".norm3", c);
  layout_linear(l, tb + ".ff.net.0.proj", c, 8 * c, true);
  layout_linear(l, tb + ".ff.net.2", 4 * c, c, true);
  layout_linear(l, prefix + ".proj_out", c, c, true);
}

void layout_resample(Layout& l, const std::string& prefix, Index channels) {
  layout_conv(l, prefix + ".conv", channels, channels, 3);
}

void init_res_block(ParameterSet& p, const std::string& prefix, Index in, Index out, Index temb_dim, Rng& rng) {
  Layout l;
  layout_res_block(l, prefix, in, out, temb_dim);
  materialize(l, rng, p);
}

namespace {

const Tensor& w(const ParameterSet& p, const std::string& name) { return p.get(name + ".weight"); }
const Tensor& b(const ParameterSet& p, const std::string& name) { return p.get(name + ".bias"); }

constexpr Conv2dOptions kSame{.stride = 1, .padding = 1};

}  // namespace

Tensor res_block(const Tensor& x, const Tensor& temb, const ParameterSet& p, const std::string& prefix, int groups,
                 NormPin* pin) {
  const Tensor& w1 = w(p, prefix + ".conv1");
  if (x.rank() != 4 || x.dim(1) != w1.dim(1)) {
    throw ShapeError(prefix + ": input " + to_string(x.shape()) + " does not match " + std::to_string(w1.dim(1)) + " channels");
  }
  if (temb.rank() != 2 || temb.dim(1) != w(p, prefix + ".time_emb_proj").dim(1) || temb.dim(0) != x.dim(0)) {
    throw ShapeError(prefix + ": time embedding " + to_string(temb.shape()) + " does not match block");
  }
  Tensor h = silu(norm(x, groups, w(p, prefix + ".norm1"), b(p, prefix + ".norm1"), pin));
  h = conv2d(h, w1, b(p, prefix + ".conv1"), kSame);
  Tensor t = linear(silu(temb), w(p, prefix + ".time_emb_proj"), b(p, prefix + ".time_emb_proj"));
  h = add(h, reshape(t, {t.dim(0), t.dim(1), 1, 1}));
  h = silu(norm(h, groups, w(p, prefix + ".norm2"), b(p, prefix + ".norm2"), pin));
  h = conv2d(h, w(p, prefix + ".conv2"), b(p, prefix + ".conv2"), kSame);
  const std::string skip = prefix + ".conv_shortcut";
  const Tensor s = p.contains(skip + ".weight") ? conv2d(x, w(p, skip), b(p, skip)) : x;
  return add(s, h);
}

Tensor attention_weights(const Tensor& q, const Tensor& k, int heads) {
  const Index bsz = q.dim(0), n = q.dim(1), c = q.dim(2);
  if (heads <= 0 || c % heads != 0) {
    throw ShapeError(std::to_string(c) + " channels not divisible into " + std::to_string(heads) + " heads");
  }
  const Index d = c / heads;
  Tensor qh = permute(reshape(q, {bsz, n, heads, d}), {0, 2, 1, 3});
  Tensor kt = permute(reshape(k, {bsz, k.dim(1), heads, d}), {0, 2, 3, 1});
  return softmax(scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(d))), -1);
}

Tensor self_attention(const Tensor& tokens, const ParameterSet& p, const std::string& prefix, int heads) {
  const Index bsz = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  Tensor q = linear(tokens, w(p, prefix + ".to_q"));
  Tensor k = linear(tokens, w(p, prefix + ".to_k"));
  Tensor v = linear(tokens, w(p, prefix + ".to_v"));
  Tensor weights = attention_weights(q, k, heads);
  Tensor vh = permute(reshape(v, {bsz, n, heads, c / heads}), {0, 2, 1, 3});
  Tensor o = reshape(permute(matmul(weights, vh), {0, 2, 1, 3}), {bsz, n, c});
  return linear(o, w(p, prefix + ".to_out.0"), b(p, prefix + ".to_out.0"));
}

void init_attention_block(ParameterSet& p, const std::string& prefix, Index channels, Rng& rng) {
  Layout l;
  layout_attention_block(l, prefix, channels);
  materialize(l, rng, p);
}

Tensor attention_block(const Tensor& x, const ParameterSet& p, const std::string& prefix, int groups, int heads,
                       NormPin* pin) {
  if (x.rank() != 4) throw ShapeError(prefix + ": expected [b,c,h,w], got " + to_string(x.shape()));
  const Index bsz = x.dim(0), c = x.dim(1), hgt = x.dim(2), wid = x.dim(3);
  if (heads <= 0 || c % heads != 0) {
    throw ShapeError(prefix + ": " + std::to_string(c) + " channels not divisible into " + std::to_string(heads) + " heads");
  }
  const std::string tb = prefix + ".transformer_blocks.0";
  Tensor h = norm(x, groups, w(p, prefix + ".norm"), b(p, prefix + ".norm"), pin);
  Tensor t = permute(reshape(h, {bsz, c, hgt * wid}), {0, 2, 1});
  t = linear(t, w(p, prefix + ".proj_in"), b(p, prefix + ".proj_in"));
  t = add(t, self_attention(layer_norm(t, w(p, tb + ".norm1"), b(p, tb + ".norm1")), p, tb + ".attn1", heads));
  Tensor f = linear(layer_norm(t, w(p, tb + ".norm3"), b(p, tb + ".norm3")), w(p, tb + ".ff.net.0.proj"),
                    b(p, tb + ".ff.net.0.proj"));
  auto halves = split(f, {4 * c, 4 * c}, -1);
  f = linear(mul(halves[0], gelu(halves[1])), w(p, tb + ".ff.net.2"), b(p, tb + ".ff.net.2"));
  t = add(t, f);
  t = linear(t, w(p, prefix + ".proj_out"), b(p, prefix + ".proj_out"));
  return add(x, reshape(permute(t, {0, 2, 1}), {bsz, c, hgt, wid}));
}

void init_downsample(ParameterSet& p, const std::string& prefix, Index channels, Rng& rng) {
  Layout l;
  layout_resample(l, prefix, channels);
  materialize(l, rng, p);
}

Tensor downsample(const Tensor& x, const ParameterSet& p, const std::string& prefix) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError(prefix + ": downsample needs even extents, got " + to_string(x.shape()));
  }
  return conv2d(x, w(p, prefix + ".conv"), b(p, prefix + ".conv"), {.stride = 2, .padding = 1});
}

void init_upsample(ParameterSet& p, const std::string& prefix, Index channels, Rng& rng) {
  init_downsample(p, prefix, channels, rng);
}

Tensor upsample(const Tensor& x, const ParameterSet& p, const std::string& prefix) {
  return conv2d(upsample_nearest(x, 2), w(p, prefix + ".conv"), b(p, prefix + ".conv"), kSame);
}

}  // namespace vton
