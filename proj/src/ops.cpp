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

#include "vton/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace vton {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return a;
}

Index prod(const Shape& s, std::size_t begin, std::size_t end) {
  Index n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

// Maps every element of `target` to the element of `source` it reads under
// right-aligned broadcasting. Empty result means identical shapes.
std::vector<Index> broadcast_map(const Shape& target, const Shape& source) {
  if (target == source) return {};
  if (source.size() > target.size()) {
    throw ShapeError("cannot broadcast " + to_string(source) + " to " + to_string(target));
  }
  const std::size_t offset = target.size() - source.size();
  std::vector<Index> stride(target.size(), 0);
  Index s = 1;
  for (std::size_t i = source.size(); i-- > 0;) {
    const Index td = target[i + offset];
    if (source[i] == td) {
      stride[i + offset] = s;
    } else if (source[i] != 1) {
      throw ShapeError("cannot broadcast " + to_string(source) + " to " + to_string(target));
    }
    s *= source[i];
  }
  const Index n = numel_of(target);
  std::vector<Index> map(static_cast<std::size_t>(n));
  std::vector<Index> counter(target.size(), 0);
  Index j = 0;
  for (Index i = 0; i < n; ++i) {
    map[static_cast<std::size_t>(i)] = j;
    for (std::size_t d = target.size(); d-- > 0;) {
      ++counter[d];
      j += stride[d];
      if (counter[d] < target[d]) break;
      j -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

Buffer gather(const Buffer& src, const std::vector<Index>& map) {
  Buffer out(static_cast<Index>(map.size()));
  for (std::size_t i = 0; i < map.size(); ++i) out[static_cast<Index>(i)] = src[map[i]];
  return out;
}

void scatter_add(Buffer& dst, const Buffer& src, const std::vector<Index>& map) {
  for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] += src[static_cast<Index>(i)];
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  if (!a.defined() || !b.defined()) throw ShapeError("elementwise op on undefined tensor");
  const bool scalar_b = b.numel() == 1 && a.shape() != b.shape();
  std::vector<Index> map;
  if (!scalar_b) map = broadcast_map(a.shape(), b.shape());
  const bool same = !scalar_b && map.empty();

  const Buffer& av = a.values();
  Buffer bx;  // b expanded to a's shape
  if (same) {
    bx = b.values();
  } else if (scalar_b) {
    bx = Buffer::Constant(a.numel(), b.values()[0]);
  } else {
    bx = gather(b.values(), map);
  }
  Buffer out;
  switch (kind) {
    case BinaryKind::kAdd: out = av + bx; break;
    case BinaryKind::kSub: out = av - bx; break;
    case BinaryKind::kMul: out = av * bx; break;
  }
  Tensor result(a.shape(), std::move(out));
  if (!any_requires_grad({&a, &b})) return result;

  auto reduce_to_b = [scalar_b, same, map](Buffer& gb, const Buffer& g) {
    if (same) {
      gb += g;
    } else if (scalar_b) {
      gb[0] += g.sum();
    } else {
      scatter_add(gb, g, map);
    }
  };
  Tensor ca = a.detached(), cb = b.detached();
  return record(std::move(result), {&a, &b}, [kind, ca, bx = std::move(bx), reduce_to_b](const Buffer& g, GradSink& sink) {
    switch (kind) {
      case BinaryKind::kAdd:
        if (sink.wants(0)) sink[0] += g;
        if (sink.wants(1)) reduce_to_b(sink[1], g);
        break;
      case BinaryKind::kSub:
        if (sink.wants(0)) sink[0] += g;
        if (sink.wants(1)) reduce_to_b(sink[1], Buffer(-g));
        break;
      case BinaryKind::kMul:
        if (sink.wants(0)) sink[0] += g * bx;
        if (sink.wants(1)) reduce_to_b(sink[1], Buffer(g * ca.values()));
        break;
    }
  });
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  Buffer out = x.values().unaryExpr(f);
  Tensor result(x.shape(), std::move(out));
  if (!x.requires_grad()) return result;
  Tensor cx = x.detached();
  return record(std::move(result), {&x}, [cx, df](const Buffer& g, GradSink& sink) {
    if (sink.wants(0)) sink[0] += g * cx.values().unaryExpr(df);
  });
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }

Tensor add(const Tensor& a, double b) {
  Tensor result(a.shape(), a.values() + b);
  return record(std::move(result), {&a}, [](const Buffer& g, GradSink& sink) {
    if (sink.wants(0)) sink[0] += g;
  });
}

Tensor scale(const Tensor& a, double s) {
  Tensor result(a.shape(), a.values() * s);
  return record(std::move(result), {&a}, [s](const Buffer& g, GradSink& sink) {
    if (sink.wants(0)) sink[0] += g * s;
  });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * sigmoid(v); },
      [](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs rank >= 2 operands");
  const Index m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) throw ShapeError("matmul inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));

  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const std::size_t r = std::max(abatch.size(), bbatch.size());
  Shape batch(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const Index da = i + abatch.size() >= r ? abatch[i + abatch.size() - r] : 1;
    const Index db = i + bbatch.size() >= r ? bbatch[i + bbatch.size() - r] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("matmul batch extents not broadcastable: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    batch[i] = std::max(da, db);
  }
  // Offsets of every output batch entry into a and b (in matrices).
  const Index nb = numel_of(batch);
  auto pad = [r](const Shape& s) {
    Shape p(r - s.size(), 1);
    p.insert(p.end(), s.begin(), s.end());
    return p;
  };
  std::vector<Index> aoff = broadcast_map(batch, pad(abatch));
  std::vector<Index> boff = broadcast_map(batch, pad(bbatch));
  if (aoff.empty()) {
    aoff.resize(static_cast<std::size_t>(nb));
    for (Index i = 0; i < nb; ++i) aoff[static_cast<std::size_t>(i)] = i;
  }
  if (boff.empty()) {
    boff.resize(static_cast<std::size_t>(nb));
    for (Index i = 0; i < nb; ++i) boff[static_cast<std::size_t>(i)] = i;
  }

  Shape oshape = batch;
  oshape.push_back(m);
  oshape.push_back(n);
  Buffer out(nb * m * n);
  for (Index i = 0; i < nb; ++i) {
    ConstMap A(a.values().data() + aoff[static_cast<std::size_t>(i)] * m * k, m, k);
    ConstMap B(b.values().data() + boff[static_cast<std::size_t>(i)] * k * n, k, n);
    MutMap C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  Tensor result(std::move(oshape), std::move(out));
  if (!any_requires_grad({&a, &b})) return result;
  Tensor ca = a.detached(), cb = b.detached();
  return record(std::move(result), {&a, &b}, [ca, cb, aoff, boff, nb, m, k, n](const Buffer& g, GradSink& sink) {
    for (Index i = 0; i < nb; ++i) {
      ConstMap G(g.data() + i * m * n, m, n);
      const Index ao = aoff[static_cast<std::size_t>(i)], bo = boff[static_cast<std::size_t>(i)];
      if (sink.wants(0)) {
        ConstMap B(cb.values().data() + bo * k * n, k, n);
        MutMap GA(sink[0].data() + ao * m * k, m, k);
        GA.noalias() += G * B.transpose();
      }
      if (sink.wants(1)) {
        ConstMap A(ca.values().data() + ao * m * k, m, k);
        MutMap GB(sink[1].data() + bo * k * n, k, n);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw ShapeError("linear weight must be [out, in], got " + to_string(weight.shape()));
  const Index in = weight.dim(1), outf = weight.dim(0);
  if (x.rank() < 1 || x.dim(-1) != in) {
    throw ShapeError("linear input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) throw ShapeError("linear bias shape mismatch");
  const Index rows = x.numel() / in;
  Shape oshape = x.shape();
  oshape.back() = outf;
  Buffer out(rows * outf);
  {
    ConstMap X(x.values().data(), rows, in);
    ConstMap W(weight.values().data(), outf, in);
    MutMap Y(out.data(), rows, outf);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) Y.rowwise() += bias.values().matrix().transpose();
  }
  Tensor result(std::move(oshape), std::move(out));
  if (!any_requires_grad({&x, &weight, &bias})) return result;
  Tensor cx = x.detached(), cw = weight.detached();
  const bool has_bias = bias.defined();
  auto fn = [cx, cw, rows, in, outf](const Buffer& g, GradSink& sink) {
    ConstMap G(g.data(), rows, outf);
    if (sink.wants(0)) {
      ConstMap W(cw.values().data(), outf, in);
      MutMap GX(sink[0].data(), rows, in);
      GX.noalias() += G * W;
    }
    if (sink.wants(1)) {
      ConstMap X(cx.values().data(), rows, in);
      MutMap GW(sink[1].data(), outf, in);
      GW.noalias() += G.transpose() * X;
    }
    if (sink.wants(2)) sink[2] += G.colwise().sum().transpose().array();
  };
  if (has_bias) return record(std::move(result), {&x, &weight, &bias}, fn);
  return record(std::move(result), {&x, &weight}, fn);
}

namespace {

struct ConvGeom {
  Index batch, cin, h, w, cout, kh, kw, oh, ow;
  int stride, pad;
  Index patch() const { return cin * kh * kw; }
  Index positions() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const Index P = g.positions();
  for (Index c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = xc + iy * g.w;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
  const Index P = g.positions();
  for (Index c = 0; c < g.cin; ++c) {
    double* xc = x + c * g.h * g.w;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.ow;
          double* dst = xc + iy * g.w;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  if (x.rank() != 4) throw ShapeError("conv2d input must be [b,c,h,w], got " + to_string(x.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d weight must be [o,c,kh,kw], got " + to_string(weight.shape()));
  if (opt.stride < 1 || opt.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, opt.stride, opt.padding};
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + " weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) throw ShapeError("conv2d bias shape mismatch");
  const Index ph = g.h + 2 * g.pad - g.kh, pw = g.w + 2 * g.pad - g.kw;
  if (ph < 0 || pw < 0) throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  g.oh = ph / g.stride + 1;
  g.ow = pw / g.stride + 1;
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: non-positive output extent");

  const Index K = g.patch(), P = g.positions();
  Buffer out(g.batch * g.cout * P);
  RowMat col;
  if (!g.pointwise()) col.resize(K, P);
  ConstMap W(weight.values().data(), g.cout, K);
  for (Index b = 0; b < g.batch; ++b) {
    const double* xb = x.values().data() + b * g.cin * g.h * g.w;
    MutMap Y(out.data() + b * g.cout * P, g.cout, P);
    if (g.pointwise()) {
      Y.noalias() = W * ConstMap(xb, K, P);
    } else {
      im2col(xb, g, col.data());
      Y.noalias() = W * col;
    }
    if (bias.defined()) Y.colwise() += bias.values().matrix();
  }
  Tensor result({g.batch, g.cout, g.oh, g.ow}, std::move(out));
  if (!any_requires_grad({&x, &weight, &bias})) return result;

  Tensor cx = x.detached(), cw = weight.detached();
  auto fn = [cx, cw, g](const Buffer& grad, GradSink& sink) {
    const Index K = g.patch(), P = g.positions();
    ConstMap W(cw.values().data(), g.cout, K);
    RowMat col, dcol;
    if (!g.pointwise()) {
      col.resize(K, P);
      dcol.resize(K, P);
    }
    for (Index b = 0; b < g.batch; ++b) {
      ConstMap G(grad.data() + b * g.cout * P, g.cout, P);
      const double* xb = cx.values().data() + b * g.cin * g.h * g.w;
      if (sink.wants(1)) {
        MutMap GW(sink[1].data(), g.cout, K);
        if (g.pointwise()) {
          GW.noalias() += G * ConstMap(xb, K, P).transpose();
        } else {
          im2col(xb, g, col.data());
          GW.noalias() += G * col.transpose();
        }
      }
      if (sink.wants(0)) {
        double* gx = sink[0].data() + b * g.cin * g.h * g.w;
        if (g.pointwise()) {
          MutMap(gx, K, P).noalias() += W.transpose() * G;
        } else {
          dcol.noalias() = W.transpose() * G;
          col2im_add(dcol.data(), g, gx);
        }
      }
      if (sink.wants(2)) sink[2] += G.rowwise().sum().array();
    }
  };
  if (bias.defined()) return record(std::move(result), {&x, &weight, &bias}, fn);
  return record(std::move(result), {&x, &weight}, fn);
}

namespace {

struct GroupLayout {
  Index batch, channels, groups, spatial;
  Index group_channels() const { return channels / groups; }
  Index block() const { return group_channels() * spatial; }
};

GroupLayout group_layout(const Tensor& x, int groups) {
  if (x.rank() < 2) throw ShapeError("group_norm input must be [b,c,...], got " + to_string(x.shape()));
  if (groups <= 0 || x.dim(1) % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(x.dim(1)) + " channels not divisible into " + std::to_string(groups) + " groups");
  }
  return {x.dim(0), x.dim(1), groups, prod(x.shape(), 2, x.shape().size())};
}

void check_affine(const Tensor& gamma, const Tensor& beta, Index channels) {
  if (gamma.numel() != channels || beta.numel() != channels) throw ShapeError("norm affine parameters do not match channel count");
}

// Normalizes contiguous blocks of `block` elements; channel of element e within
// a block is (block_index % groups) * gc + e / spatial.
Tensor normalize_blocks(const Tensor& x, const GroupLayout& L, const Tensor& gamma, const Tensor& beta, const Buffer& mean,
                        const Buffer& rstd, bool pinned) {
  const Index blocks = L.batch * L.groups, B = L.block(), gc = L.group_channels();
  Buffer out(x.numel());
  const Buffer& xv = x.values();
  const Buffer& gv = gamma.values();
  const Buffer& bv = beta.values();
  for (Index k = 0; k < blocks; ++k) {
    const Index c0 = (k % L.groups) * gc;
    for (Index e = 0; e < B; ++e) {
      const Index c = c0 + e / L.spatial;
      const Index i = k * B + e;
      out[i] = (xv[i] - mean[k]) * rstd[k] * gv[c] + bv[c];
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (!any_requires_grad({&x, &gamma, &beta})) return result;
  Tensor cx = x.detached(), cg = gamma.detached();
  return record(std::move(result), {&x, &gamma, &beta}, [cx, cg, L, mean, rstd, pinned](const Buffer& g, GradSink& sink) {
    const Index blocks = L.batch * L.groups, B = L.block(), gc = L.group_channels();
    const Buffer& xv = cx.values();
    const Buffer& gv = cg.values();
    Buffer dxhat(B), xhat(B);
    for (Index k = 0; k < blocks; ++k) {
      const Index c0 = (k % L.groups) * gc;
      for (Index e = 0; e < B; ++e) {
        const Index c = c0 + e / L.spatial;
        const Index i = k * B + e;
        xhat[e] = (xv[i] - mean[k]) * rstd[k];
        dxhat[e] = g[i] * gv[c];
        if (sink.wants(1)) sink[1][c] += g[i] * xhat[e];
        if (sink.wants(2)) sink[2][c] += g[i];
      }
      if (sink.wants(0)) {
        if (pinned) {
          sink[0].segment(k * B, B) += dxhat * rstd[k];
        } else {
          const double m1 = dxhat.mean();
          const double m2 = (dxhat * xhat).mean();
          sink[0].segment(k * B, B) += rstd[k] * (dxhat - m1 - xhat * m2);
        }
      }
    }
  });
}

}  // namespace

NormStats group_norm_stats(const Tensor& x, int groups, double eps) {
  const GroupLayout L = group_layout(x, groups);
  const Index blocks = L.batch * L.groups, B = L.block();
  NormStats s{Buffer(blocks), Buffer(blocks)};
  for (Index k = 0; k < blocks; ++k) {
    const auto seg = x.values().segment(k * B, B);
    const double mu = seg.mean();
    const double var = (seg - mu).square().mean();
    s.mean[k] = mu;
    s.rstd[k] = 1.0 / std::sqrt(var + eps);
  }
  return s;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
  const GroupLayout L = group_layout(x, groups);
  check_affine(gamma, beta, L.channels);
  const NormStats s = group_norm_stats(x, groups, eps);
  return normalize_blocks(x, L, gamma, beta, s.mean, s.rstd, false);
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, const NormStats& stats) {
  const GroupLayout L = group_layout(x, groups);
  check_affine(gamma, beta, L.channels);
  if (stats.mean.size() != L.batch * L.groups || stats.rstd.size() != L.batch * L.groups) {
    throw ShapeError("group_norm: pinned statistics do not match input layout");
  }
  return normalize_blocks(x, L, gamma, beta, stats.mean, stats.rstd, true);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm on rank-0 tensor");
  const Index c = x.dim(-1), rows = x.numel() / c;
  check_affine(gamma, beta, c);
  Buffer mean(rows), rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const auto seg = x.values().segment(r * c, c);
    mean[r] = seg.mean();
    rstd[r] = 1.0 / std::sqrt((seg - mean[r]).square().mean() + eps);
  }
  // A layer norm is a group norm with one group over a [rows, 1, c] view.
  GroupLayout L{rows, 1, 1, c};
  Buffer out(x.numel());
  const Buffer& xv = x.values();
  const Buffer& gv = gamma.values();
  const Buffer& bv = beta.values();
  for (Index r = 0; r < rows; ++r) {
    for (Index e = 0; e < c; ++e) out[r * c + e] = (xv[r * c + e] - mean[r]) * rstd[r] * gv[e] + bv[e];
  }
  Tensor result(x.shape(), std::move(out));
  if (!any_requires_grad({&x, &gamma, &beta})) return result;
  Tensor cx = x.detached(), cg = gamma.detached();
  return record(std::move(result), {&x, &gamma, &beta}, [cx, cg, L, mean, rstd](const Buffer& g, GradSink& sink) {
    const Index rows = L.batch, c = L.spatial;
    const Buffer& xv = cx.values();
    const Buffer& gv = cg.values();
    Buffer xhat(c), dxhat(c);
    for (Index r = 0; r < rows; ++r) {
      for (Index e = 0; e < c; ++e) {
        const Index i = r * c + e;
        xhat[e] = (xv[i] - mean[r]) * rstd[r];
        dxhat[e] = g[i] * gv[e];
      }
      if (sink.wants(1)) sink[1] += g.segment(r * c, c) * xhat;
      if (sink.wants(2)) sink[2] += g.segment(r * c, c);
      if (sink.wants(0)) {
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xhat).mean();
        sink[0].segment(r * c, c) += rstd[r] * (dxhat - m1 - xhat * m2);
      }
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int a = normalize_axis(axis, x.rank());
  const auto ua = static_cast<std::size_t>(a);
  const Index outer = prod(x.shape(), 0, ua), n = x.shape()[ua], inner = prod(x.shape(), ua + 1, x.shape().size());
  Buffer y(x.numel());
  const Buffer& xv = x.values();
  for (Index o = 0; inner == 1 && o < outer; ++o) {
    const auto row = xv.segment(o * n, n);
    auto out = y.segment(o * n, n);
    out = (row - row.maxCoeff()).exp();
    out /= out.sum();
  }
  for (Index o = 0; inner > 1 && o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double s = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        s += e;
      }
      for (Index j = 0; j < n; ++j) y[base + j * inner] /= s;
    }
  }
  Tensor result(x.shape(), y);
  if (!x.requires_grad()) return result;
  return record(std::move(result), {&x}, [y = std::move(y), outer, n, inner](const Buffer& g, GradSink& sink) {
    if (!sink.wants(0)) return;
    for (Index o = 0; inner == 1 && o < outer; ++o) {
      const auto yr = y.segment(o * n, n);
      const auto gr = g.segment(o * n, n);
      sink[0].segment(o * n, n) += yr * (gr - (gr * yr).sum());
    }
    for (Index o = 0; inner > 1 && o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * n * inner + i;
        double dot = 0.0;
        for (Index j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < n; ++j) sink[0][base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
      }
    }
  });
}

Tensor concat(std::span<const Tensor> tensors, int axis) {
  if (tensors.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = tensors[0].shape();
  const int a = normalize_axis(axis, static_cast<int>(ref.size()));
  const auto ua = static_cast<std::size_t>(a);
  Shape oshape = ref;
  oshape[ua] = 0;
  for (const Tensor& t : tensors) {
    if (t.rank() != static_cast<int>(ref.size())) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != ua && t.shape()[d] != ref[d]) {
        throw ShapeError("concat extent mismatch: " + to_string(t.shape()) + " vs " + to_string(ref));
      }
    }
    oshape[ua] += t.shape()[ua];
  }
  const Index outer = prod(ref, 0, ua), inner = prod(ref, ua + 1, ref.size());
  const Index orow = oshape[ua] * inner;
  Buffer out(numel_of(oshape));
  std::vector<Index> offsets;
  Index off = 0;
  for (const Tensor& t : tensors) {
    offsets.push_back(off);
    const Index chunk = t.shape()[ua] * inner;
    for (Index o = 0; o < outer; ++o) out.segment(o * orow + off, chunk) = t.values().segment(o * chunk, chunk);
    off += chunk;
  }
  Tensor result(std::move(oshape), std::move(out));
  std::vector<const Tensor*> inputs;
  std::vector<Index> chunks;
  for (const Tensor& t : tensors) {
    inputs.push_back(&t);
    chunks.push_back(t.shape()[ua] * inner);
  }
  return detail_record(std::move(result), inputs, [offsets, chunks, outer, orow](const Buffer& g, GradSink& sink) {
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      if (!sink.wants(k)) continue;
      for (Index o = 0; o < outer; ++o) sink[k].segment(o * chunks[k], chunks[k]) += g.segment(o * orow + offsets[k], chunks[k]);
    }
  });
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
  const int a = normalize_axis(axis, x.rank());
  const auto ua = static_cast<std::size_t>(a);
  const Index extent = x.shape()[ua];
  if (start < 0 || length < 0 || start + length > extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " + to_string(x.shape()));
  }
  const Index outer = prod(x.shape(), 0, ua), inner = prod(x.shape(), ua + 1, x.shape().size());
  const Index irow = extent * inner, chunk = length * inner, off = start * inner;
  Shape oshape = x.shape();
  oshape[ua] = length;
  Buffer out(outer * chunk);
  for (Index o = 0; o < outer; ++o) out.segment(o * chunk, chunk) = x.values().segment(o * irow + off, chunk);
  Tensor result(std::move(oshape), std::move(out));
  return record(std::move(result), {&x}, [outer, irow, chunk, off](const Buffer& g, GradSink& sink) {
    if (!sink.wants(0)) return;
    for (Index o = 0; o < outer; ++o) sink[0].segment(o * irow + off, chunk) += g.segment(o * chunk, chunk);
  });
}

std::vector<Tensor> split(const Tensor& x, std::span<const Index> sizes, int axis) {
  const int a = normalize_axis(axis, x.rank());
  Index total = 0;
  for (Index s : sizes) {
    if (s < 0) throw ShapeError("split: negative size");
    total += s;
  }
  if (total != x.dim(a)) {
    throw ShapeError("split sizes sum to " + std::to_string(total) + " but extent is " + std::to_string(x.dim(a)));
  }
  std::vector<Tensor> parts;
  Index start = 0;
  for (Index s : sizes) {
    parts.push_back(slice(x, a, start, s));
    start += s;
  }
  return parts;
}

Tensor reshape(const Tensor& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) throw ShapeError("reshape: cannot infer extent for " + to_string(x.shape()));
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  Tensor result = x.with_shape(std::move(shape));
  return record(std::move(result), {&x}, [](const Buffer& g, GradSink& sink) {
    if (sink.wants(0)) sink[0] += g;
  });
}

namespace {

Buffer permute_buffer(const Buffer& src, const Shape& shape, std::span<const int> order, Shape& out_shape) {
  const std::size_t r = shape.size();
  std::vector<Index> in_stride(r);
  Index s = 1;
  for (std::size_t d = r; d-- > 0;) {
    in_stride[d] = s;
    s *= shape[d];
  }
  out_shape.assign(r, 0);
  std::vector<Index> stride(r);
  for (std::size_t d = 0; d < r; ++d) {
    out_shape[d] = shape[static_cast<std::size_t>(order[d])];
    stride[d] = in_stride[static_cast<std::size_t>(order[d])];
  }
  Buffer out(src.size());
  std::vector<Index> counter(r, 0);
  Index j = 0;
  // Innermost run is handled as a strided copy.
  const Index n_inner = r ? out_shape[r - 1] : 1;
  const Index s_inner = r ? stride[r - 1] : 1;
  for (Index i = 0; i < src.size(); i += n_inner) {
    for (Index e = 0; e < n_inner; ++e) out[i + e] = src[j + e * s_inner];
    for (std::size_t d = r - 1; d-- > 0;) {
      ++counter[d];
      j += stride[d];
      if (counter[d] < out_shape[d]) break;
      j -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return out;
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const int> order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order length does not match rank");
  std::vector<int> inverse(static_cast<std::size_t>(r), -1);
  for (int d = 0; d < r; ++d) {
    const int o = order[static_cast<std::size_t>(d)];
    if (o < 0 || o >= r || inverse[static_cast<std::size_t>(o)] != -1) throw ShapeError("permute: invalid axis order");
    inverse[static_cast<std::size_t>(o)] = d;
  }
  Shape oshape;
  Buffer out = permute_buffer(x.values(), x.shape(), order, oshape);
  Tensor result(oshape, std::move(out));
  return record(std::move(result), {&x}, [oshape, inverse](const Buffer& g, GradSink& sink) {
    if (!sink.wants(0)) return;
    Shape back;
    sink[0] += permute_buffer(g, oshape, inverse, back);
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (x.rank() < 2 || factor < 1) throw ShapeError("upsample_nearest: invalid input");
  const Index h = x.dim(-2), w = x.dim(-1), planes = x.numel() / (h * w);
  const Index oh = h * factor, ow = w * factor;
  Shape oshape = x.shape();
  oshape[oshape.size() - 2] = oh;
  oshape.back() = ow;
  Buffer out(planes * oh * ow);
  const Buffer& xv = x.values();
  for (Index r = 0; r < planes * h; ++r) {
    const double* src = xv.data() + r * w;
    double* dst = out.data() + r * factor * ow;
    for (Index xx = 0; xx < w; ++xx)
      for (int k = 0; k < factor; ++k) dst[xx * factor + k] = src[xx];
    for (int k = 1; k < factor; ++k) std::copy(dst, dst + ow, dst + k * ow);
  }
  Tensor result(std::move(oshape), std::move(out));
  return record(std::move(result), {&x}, [planes, h, w, factor](const Buffer& g, GradSink& sink) {
    if (!sink.wants(0)) return;
    const Index ow = w * factor;
    for (Index r = 0; r < planes * h; ++r) {
      double* dst = sink[0].data() + r * w;
      for (int k = 0; k < factor; ++k) {
        const double* src = g.data() + (r * factor + k) * ow;
        for (Index xx = 0; xx < w; ++xx)
          for (int j = 0; j < factor; ++j) dst[xx] += src[xx * factor + j];
      }
    }
  });
}

Tensor avg_pool(const Tensor& x, int factor) {
  if (x.rank() < 2 || factor < 1) throw ShapeError("avg_pool: invalid input");
  const Index h = x.dim(-2), w = x.dim(-1);
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("avg_pool: extents " + to_string(x.shape()) + " not divisible by " + std::to_string(factor));
  }
  const Index planes = x.numel() / (h * w), oh = h / factor, ow = w / factor;
  Shape oshape = x.shape();
  oshape[oshape.size() - 2] = oh;
  oshape.back() = ow;
  Buffer out = Buffer::Zero(planes * oh * ow);
  const Buffer& xv = x.values();
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (Index p = 0; p < planes; ++p) {
    for (Index y = 0; y < h; ++y) {
      for (Index xx = 0; xx < w; ++xx) out[(p * oh + y / factor) * ow + xx / factor] += xv[(p * h + y) * w + xx];
    }
  }
  out *= inv;
  Tensor result(std::move(oshape), std::move(out));
  return record(std::move(result), {&x}, [planes, h, w, factor, inv](const Buffer& g, GradSink& sink) {
    if (!sink.wants(0)) return;
    const Index oh = h / factor, ow = w / factor;
    for (Index p = 0; p < planes; ++p) {
      for (Index y = 0; y < h; ++y) {
        for (Index xx = 0; xx < w; ++xx) sink[0][(p * h + y) * w + xx] += g[(p * oh + y / factor) * ow + xx / factor] * inv;
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  Tensor result = Tensor::scalar(x.values().sum());
  return record(std::move(result), {&x}, [](const Buffer& g, GradSink& sink) {
    if (sink.wants(0)) sink[0] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  Tensor result = Tensor::scalar(x.values().sum() / n);
  return record(std::move(result), {&x}, [n](const Buffer& g, GradSink& sink) {
    if (sink.wants(0)) sink[0] += g[0] / n;
  });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse_loss shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Buffer diff = a.values() - b.values();
  const double n = static_cast<double>(a.numel());
  Tensor result = Tensor::scalar(diff.square().sum() / n);
  if (!any_requires_grad({&a, &b})) return result;
  return record(std::move(result), {&a, &b}, [diff = std::move(diff), n](const Buffer& g, GradSink& sink) {
    const double c = 2.0 * g[0] / n;
    if (sink.wants(0)) sink[0] += c * diff;
    if (sink.wants(1)) sink[1] -= c * diff;
  });
}

}  // namespace vton
