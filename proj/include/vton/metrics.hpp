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
#ifndef VTON_METRICS_HPP_
#define VTON_METRICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vton/codec.hpp"

namespace vton {

enum class PixelRange {
  kSigned,  // [-1, 1], the model range
  kUnit,    // [0, 1]
};

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Mean local SSIM of [C, H, W] images over all pixels and channels, with a
// Gaussian window and half-sample symmetric padding at the borders.
double ssim(const Tensor& x, const Tensor& y, PixelRange range = PixelRange::kSigned);
// 10 log10(1 / MSE) on the unit range; +infinity for identical inputs.
double psnr(const Tensor& x, const Tensor& y, PixelRange range = PixelRange::kSigned);

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct FeatureSet {
  Matrix features;  // n x d
  std::string extractor;
};

struct Moments {
  Vector mean;
  Matrix cov;
};

// Mean and unbiased covariance. Throws std::invalid_argument when n <= d.
Moments moments(const FeatureSet& set);

inline constexpr double kEigenTolerance = 1e-8;

// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
double frechet_distance(const Moments& a, const Moments& b);
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

// Polynomial kernel (x.y / d + 1)^3.
double kid_kernel(const Vector& x, const Vector& y);
// Unbiased MMD^2 between two row sets.
double mmd2_unbiased(const Matrix& a, const Matrix& b);

struct KidResult {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over subsets
  int subsets = 0;
  int subset_size = 0;
};

// Mean and spread of unbiased MMD^2 over random subsets drawn from `seed`.
// A subset size equal to both set sizes uses every row, in order, once.
KidResult kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int subsets, std::uint64_t seed = 0);
// 100 subsets of size min(100, n).
KidResult kid(const FeatureSet& a, const FeatureSet& b, std::uint64_t seed = 0);

inline constexpr int kToyFeatureDim = 16;
std::string toy_extractor_id(const Codec& codec);

// Per latent channel: mean, standard deviation and the value-weighted mean
// of each normalized coordinate. images [n, 3, H, W].
FeatureSet toy_features(const Tensor& images, const Codec& codec);

struct MetricReport {
  std::string extractor;
  int paired_samples = 0;
  int unpaired_samples = 0;
  double ssim = 0.0;
  double psnr = 0.0;
  double frechet = 0.0;
  KidResult kid;
};

// Text table with paired and unpaired columns.
std::string format_report(const MetricReport& report);

}  // namespace vton

#endif  // VTON_METRICS_HPP_
