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

#include "vton/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "vton/rng.hpp"

namespace vton {

namespace {

void check_pair(const Tensor& x, const Tensor& y, const char* what) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(what) + ": extents differ, " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  if (x.rank() != 3) throw ShapeError(std::string(what) + ": expected [C,H,W], got " + to_string(x.shape()));
}

Buffer to_unit(const Tensor& t, PixelRange range) {
  if (range == PixelRange::kUnit) return t.values();
  return (t.values() + 1.0) * 0.5;
}

std::vector<double> gaussian_window() {
  std::vector<double> w(kSsimWindow);
  const int r = kSsimWindow / 2;
  double s = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - r) * (i - r) / (kSsimSigma * kSsimSigma));
    s += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

// Half-sample symmetric index: ... b a | a b c ... c b a | a b ...
Index reflect(Index i, Index n) {
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// Separable Gaussian filter of one [H, W] plane.
Eigen::MatrixXd filter(const Eigen::MatrixXd& plane, const std::vector<double>& w) {
  const Index h = plane.rows(), wd = plane.cols(), r = kSsimWindow / 2;
  Eigen::MatrixXd tmp(h, wd), out(h, wd);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < wd; ++x) {
      double s = 0.0;
      for (Index k = -r; k <= r; ++k) s += w[static_cast<std::size_t>(k + r)] * plane(y, reflect(x + k, wd));
      tmp(y, x) = s;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < wd; ++x) {
      double s = 0.0;
      for (Index k = -r; k <= r; ++k) s += w[static_cast<std::size_t>(k + r)] * tmp(reflect(y + k, h), x);
      out(y, x) = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y, PixelRange range) {
  check_pair(x, y, "ssim");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Buffer a = to_unit(x, range), b = to_unit(y, range);
  const std::vector<double> win = gaussian_window();
  using RowPlane = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  double total = 0.0;
  for (Index ch = 0; ch < c; ++ch) {
    const Eigen::MatrixXd pa = RowPlane(a.data() + ch * h * w, h, w);
    const Eigen::MatrixXd pb = RowPlane(b.data() + ch * h * w, h, w);
    const Eigen::MatrixXd mu_a = filter(pa, win), mu_b = filter(pb, win);
    const Eigen::MatrixXd aa = filter(pa.cwiseProduct(pa), win), bb = filter(pb.cwiseProduct(pb), win);
    const Eigen::MatrixXd ab = filter(pa.cwiseProduct(pb), win);
    const Eigen::ArrayXXd ma = mu_a.array(), mb = mu_b.array();
    const Eigen::ArrayXXd var_a = aa.array() - ma * ma, var_b = bb.array() - mb * mb, cov = ab.array() - ma * mb;
    const Eigen::ArrayXXd map = ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
                                ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
    total += map.mean();
  }
  return total / static_cast<double>(c);
}

double psnr(const Tensor& x, const Tensor& y, PixelRange range) {
  if (x.shape() != y.shape()) throw ShapeError("psnr: extents differ");
  const double mse = (to_unit(x, range) - to_unit(y, range)).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

Moments moments(const FeatureSet& set) {
  const Index n = set.features.rows(), d = set.features.cols();
  if (n <= d) {
    throw std::invalid_argument("moments: " + std::to_string(n) + " samples cannot support a " + std::to_string(d) +
                                "-dimensional covariance");
  }
  Moments m;
  m.mean = set.features.colwise().mean().transpose();
  const Matrix centered = set.features.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  return m;
}

namespace {

// Symmetric PSD square root; eigenvalues in [-tol, 0) are clamped.
Matrix psd_sqrt(const Matrix& s, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  if (es.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigendecomposition failed");
  Vector ev = es.eigenvalues();
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -kEigenTolerance) {
      throw std::runtime_error(std::string(what) + ": matrix has eigenvalue " + std::to_string(ev[i]));
    }
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Moments& a, const Moments& b) {
  const Index d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  const Matrix ra = psd_sqrt(a.cov, "frechet_distance");
  const Matrix inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double trace_sqrt = 0.0;
  for (Index i = 0; i < d; ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -kEigenTolerance) throw std::runtime_error("frechet_distance: product has eigenvalue " + std::to_string(ev));
    trace_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) { return frechet_distance(moments(a), moments(b)); }

double kid_kernel(const Vector& x, const Vector& y) {
  const double k = x.dot(y) / static_cast<double>(x.size()) + 1.0;
  return k * k * k;
}

double mmd2_unbiased(const Matrix& a, const Matrix& b) {
  const Index m = a.rows(), n = b.rows(), d = a.cols();
  if (m < 2 || n < 2) throw std::invalid_argument("mmd2_unbiased: need at least two rows per set");
  if (b.cols() != d) throw ShapeError("mmd2_unbiased: dimension mismatch");
  auto kernel = [d](const Matrix& g) { return ((g.array() / static_cast<double>(d) + 1.0).cube()).matrix(); };
  const Matrix kaa = kernel(a * a.transpose()), kbb = kernel(b * b.transpose()), kab = kernel(a * b.transpose());
  const double saa = kaa.sum() - kaa.trace(), sbb = kbb.sum() - kbb.trace();
  return saa / static_cast<double>(m * (m - 1)) + sbb / static_cast<double>(n * (n - 1)) -
         2.0 * kab.sum() / static_cast<double>(m * n);
}

KidResult kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int subsets, std::uint64_t seed) {
  const Index na = a.features.rows(), nb = b.features.rows();
  if (subset_size < 2) throw std::invalid_argument("kid: subset size must be at least 2");
  if (subset_size > std::min(na, nb)) throw std::invalid_argument("kid: subset size exceeds a feature set");
  if (subsets < 1) throw std::invalid_argument("kid: need at least one subset");
  if (a.features.cols() != b.features.cols()) throw ShapeError("kid: dimension mismatch");
  KidResult r;
  r.subsets = subsets;
  r.subset_size = subset_size;
  Rng rng(seed);
  auto draw = [&rng, subset_size](const Matrix& f) {
    const Index n = f.rows();
    if (subset_size == n) return Matrix(f);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    Matrix out(subset_size, f.cols());
    for (int i = 0; i < subset_size; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(n - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
      out.row(i) = f.row(idx[static_cast<std::size_t>(i)]);
    }
    return out;
  };
  std::vector<double> values;
  for (int s = 0; s < subsets; ++s) {
    const Matrix sa = draw(a.features);
    const Matrix sb = draw(b.features);
    values.push_back(mmd2_unbiased(sa, sb));
  }
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(subsets);
  if (subsets > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(subsets - 1));
  }
  return r;
}

KidResult kid(const FeatureSet& a, const FeatureSet& b, std::uint64_t seed) {
  const int size = static_cast<int>(std::min<Index>({100, a.features.rows(), b.features.rows()}));
  return kid(a, b, size, 100, seed);
}

std::string toy_extractor_id(const Codec& codec) {
  return "toy-latent-moments-d16/" + std::string(to_string(codec.mode()));
}

FeatureSet toy_features(const Tensor& images, const Codec& codec) {
  const Tensor z = codec.encode(images);
  const Index n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
  if (c * 4 != kToyFeatureDim) throw ShapeError("toy_features: expected a 4-channel latent");
  FeatureSet out{Matrix(n, kToyFeatureDim), toy_extractor_id(codec)};
  const Buffer& v = z.values();
  const double inv = 1.0 / static_cast<double>(h * w);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < c; ++k) {
      const double* p = v.data() + (i * c + k) * h * w;
      double mean = 0.0, my = 0.0, mx = 0.0;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const double val = p[y * w + x];
          mean += val;
          // Pixel centres mapped to [-1, 1].
          my += val * ((2.0 * y + 1.0) / static_cast<double>(h) - 1.0);
          mx += val * ((2.0 * x + 1.0) / static_cast<double>(w) - 1.0);
        }
      mean *= inv;
      double var = 0.0;
      for (Index j = 0; j < h * w; ++j) var += (p[j] - mean) * (p[j] - mean);
      out.features(i, k) = mean;
      out.features(i, c + 3 * k) = std::sqrt(var * inv);
      out.features(i, c + 3 * k + 1) = my * inv;
      out.features(i, c + 3 * k + 2) = mx * inv;
    }
  }
  return out;
}

std::string format_report(const MetricReport& r) {
  // A side with no samples is omitted; with neither, both headers are kept.
  const bool paired = r.paired_samples > 0 || r.unpaired_samples == 0;
  const bool unpaired = r.unpaired_samples > 0 || r.paired_samples == 0;
  std::ostringstream o;
  o << std::fixed;
  o << "feature extractor: " << r.extractor << " (not comparable to Inception-based FID/KID)\n|";
  if (paired) o << " paired (n=" << r.paired_samples << ") SSIM | paired PSNR (dB) |";
  if (unpaired) o << " unpaired (n=" << r.unpaired_samples << ") Frechet | unpaired KID (x1000) |";
  o << "\n|" << (paired ? "---|---|" : "") << (unpaired ? "---|---|" : "") << "\n|";
  if (paired) o << " " << std::setprecision(4) << r.ssim << " | " << std::setprecision(2) << r.psnr << " |";
  if (unpaired) {
    o << " " << std::setprecision(4) << r.frechet << " | " << std::setprecision(3) << 1000.0 * r.kid.mean << " +- "
      << 1000.0 * r.kid.stddev << " |";
  }
  o << "\n";
  return o.str();
}

}  // namespace vton
