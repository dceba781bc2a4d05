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

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "vton/ops.hpp"
#include "vton/rng.hpp"

namespace vton {
namespace {

Tensor checkerboard(Index h, Index w, Index cell) {
  Buffer b(3 * h * w);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) b[(c * h + y) * w + x] = ((y / cell + x / cell) % 2) ? 1.0 : 0.0;
  return Tensor({3, h, w}, b);
}

TEST(SsimTest, IdenticalIsOne) {
  Rng rng(1);
  const Tensor x = Tensor::uniform({3, 40, 30}, -1, 1, rng);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(SsimTest, Symmetric) {
  Rng rng(2);
  const Tensor x = Tensor::uniform({3, 24, 24}, -1, 1, rng), y = Tensor::uniform({3, 24, 24}, -1, 1, rng);
  EXPECT_NEAR(ssim(x, y), ssim(y, x), 1e-12);
}

TEST(SsimTest, InvertedCheckerboardIsNegative) {
  const Tensor x = checkerboard(32, 32, 4);
  const Tensor inv = add(scale(x, -1.0), 1.0);
  EXPECT_LT(ssim(x, inv, PixelRange::kUnit), 0.0);
}

TEST(SsimTest, ConstantsMatchClosedForm) {
  const double m1 = 0.5, m2 = 0.6;
  const double expected = (2 * m1 * m2 + kSsimC1) / (m1 * m1 + m2 * m2 + kSsimC1);
  EXPECT_NEAR(ssim(Tensor::full({3, 16, 16}, m1), Tensor::full({3, 16, 16}, m2), PixelRange::kUnit), expected, 1e-12);
}

TEST(SsimTest, SignedRangeConverts) {
  const Tensor a = Tensor::full({3, 12, 12}, 0.0), b = Tensor::full({3, 12, 12}, 0.2);
  EXPECT_NEAR(ssim(a, b), ssim(Tensor::full({3, 12, 12}, 0.5), Tensor::full({3, 12, 12}, 0.6), PixelRange::kUnit), 1e-12);
}

TEST(SsimTest, MoreNoiseLowerScore) {
  Rng rng(3);
  const Tensor x = checkerboard(32, 32, 8);
  const Tensor n = Tensor::randn({3, 32, 32}, rng);
  EXPECT_GT(ssim(x, x + n * 0.05, PixelRange::kUnit), ssim(x, x + n * 0.2, PixelRange::kUnit));
}

TEST(SsimTest, ExtentMismatchThrows) {
  EXPECT_THROW(ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 9})), ShapeError);
}

TEST(PsnrTest, IdenticalIsInfinite) {
  const Tensor x = Tensor::full({3, 4, 4}, 0.3);
  EXPECT_EQ(psnr(x, x), std::numeric_limits<double>::infinity());
}

TEST(PsnrTest, FormulaAndMonotone) {
  EXPECT_NEAR(psnr(Tensor::full({3, 4, 4}, 0.5), Tensor::full({3, 4, 4}, 0.6), PixelRange::kUnit), 20.0, 1e-9);
  Rng rng(4);
  const Tensor x = Tensor::uniform({3, 16, 16}, -0.5, 0.5, rng), n = Tensor::randn({3, 16, 16}, rng);
  EXPECT_GT(psnr(x, x + n * 0.01), psnr(x, x + n * 0.1));
}

FeatureSet gaussian_set(Index n, const Vector& mean, const Matrix& chol, Rng& rng) {
  FeatureSet s{Matrix(n, mean.size()), "test"};
  for (Index i = 0; i < n; ++i) {
    Vector z(mean.size());
    for (Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
    s.features.row(i) = (mean + chol * z).transpose();
  }
  return s;
}

TEST(FrechetTest, AnalyticOneDimensional) {
  const Moments a{Vector::Constant(1, 0.0), Matrix::Identity(1, 1)};
  const Moments b{Vector::Constant(1, 1.0), Matrix::Identity(1, 1)};
  EXPECT_NEAR(frechet_distance(a, b), 1.0, 1e-12);
}

TEST(FrechetTest, IdenticalSetsAndSymmetry) {
  Rng rng(5);
  const FeatureSet a = gaussian_set(200, Vector::Zero(4), Matrix::Identity(4, 4), rng);
  FeatureSet b = gaussian_set(300, Vector::Ones(4), 0.5 * Matrix::Identity(4, 4), rng);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
  EXPECT_GE(frechet_distance(a, b), 0.0);
}

TEST(FrechetTest, SampledGaussiansNearClosedForm) {
  Matrix la(2, 2), lb(2, 2);
  la << 1.0, 0.0, 0.5, 0.8;
  lb << 1.5, 0.0, -0.3, 0.6;
  Vector ma(2), mb(2);
  ma << 0.0, 1.0;
  mb << 1.0, -0.5;
  const Matrix sa = la * la.transpose(), sb = lb * lb.transpose();
  // For 2x2 PSD products: Tr sqrt(A) = sqrt(Tr A + 2 sqrt(det A)).
  const double tr_sqrt = std::sqrt((sa * sb).trace() + 2.0 * std::sqrt(sa.determinant() * sb.determinant()));
  const double closed = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  EXPECT_NEAR(frechet_distance(Moments{ma, sa}, Moments{mb, sb}), closed, 1e-10);
  Rng rng(6);
  const double sampled = frechet_distance(gaussian_set(10000, ma, la, rng), gaussian_set(10000, mb, lb, rng));
  EXPECT_NEAR(sampled, closed, 0.05 * closed);
}

TEST(FrechetTest, DegenerateInputsRejected) {
  FeatureSet small{Matrix::Zero(3, 3), "test"};
  EXPECT_THROW(moments(small), std::invalid_argument);
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  EXPECT_THROW(frechet_distance(Moments{Vector::Zero(2), bad}, Moments{Vector::Zero(2), Matrix::Identity(2, 2)}),
               std::runtime_error);
  Matrix tiny = Matrix::Identity(2, 2);
  tiny(1, 1) = -1e-10;
  EXPECT_NO_THROW(frechet_distance(Moments{Vector::Zero(2), tiny}, Moments{Vector::Zero(2), Matrix::Identity(2, 2)}));
}

// Direct double loop over pairs.
double brute_mmd2(const Matrix& a, const Matrix& b) {
  const Index m = a.rows(), n = b.rows();
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j)
      if (i != j) saa += kid_kernel(a.row(i).transpose(), a.row(j).transpose());
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) sbb += kid_kernel(b.row(i).transpose(), b.row(j).transpose());
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) sab += kid_kernel(a.row(i).transpose(), b.row(j).transpose());
  return saa / static_cast<double>(m * (m - 1)) + sbb / static_cast<double>(n * (n - 1)) - 2.0 * sab / static_cast<double>(m * n);
}

TEST(KidTest, MatchesBruteForce) {
  Rng rng(7);
  for (Index n : {2, 5, 17, 64}) {
    const FeatureSet a = gaussian_set(n, Vector::Zero(16), Matrix::Identity(16, 16), rng);
    const FeatureSet b = gaussian_set(n, Vector::Constant(16, 0.3), Matrix::Identity(16, 16), rng);
    const double brute = brute_mmd2(a.features, b.features);
    const KidResult r = kid(a, b, static_cast<int>(n), 1);
    EXPECT_LE(std::abs(r.mean - brute), 1e-12 * std::max(1.0, std::abs(brute))) << n;
  }
}

TEST(KidTest, SameDistributionCentredOnZero) {
  Rng rng(8);
  const FeatureSet a = gaussian_set(400, Vector::Zero(16), Matrix::Identity(16, 16), rng);
  const KidResult r = kid(a, a, 50, 100, 9);
  EXPECT_LT(std::abs(r.mean), 3.0 * r.stddev);
}

TEST(KidTest, PointMassesGrowWithDistance) {
  auto masses = [](double delta) {
    FeatureSet a{Matrix::Zero(2, 2), "t"}, b{Matrix::Constant(2, 2, delta), "t"};
    return mmd2_unbiased(a.features, b.features);
  };
  EXPECT_GT(masses(0.5), 0.0);
  EXPECT_GT(masses(1.0), masses(0.5));
  EXPECT_GT(masses(2.0), masses(1.0));
}

TEST(KidTest, DeterministicAndValidated) {
  Rng rng(10);
  const FeatureSet a = gaussian_set(150, Vector::Zero(16), Matrix::Identity(16, 16), rng);
  const FeatureSet b = gaussian_set(150, Vector::Ones(16), Matrix::Identity(16, 16), rng);
  const KidResult r1 = kid(a, b, 3), r2 = kid(a, b, 3);
  EXPECT_EQ(r1.mean, r2.mean);
  EXPECT_EQ(r1.stddev, r2.stddev);
  EXPECT_EQ(r1.subset_size, 100);
  EXPECT_EQ(r1.subsets, 100);
  EXPECT_NE(kid(a, b, 4).mean, r1.mean);
  EXPECT_THROW(kid(a, b, 1, 10), std::invalid_argument);
  EXPECT_THROW(kid(a, b, 151, 10), std::invalid_argument);
}

TEST(ToyFeaturesTest, DimensionAndDeterminism) {
  Rng rng(11);
  const Tensor imgs = Tensor::uniform({3, 3, 32, 24}, -1, 1, rng);
  const Codec c = Codec::analytic();
  const FeatureSet a = toy_features(imgs, c), b = toy_features(imgs, c);
  EXPECT_EQ(a.features.cols(), kToyFeatureDim);
  EXPECT_EQ(a.features.rows(), 3);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.extractor, "toy-latent-moments-d16/analytic");
}

TEST(ToyFeaturesTest, TranslationShiftsMoments) {
  // A bright square on the left versus on the right.
  Buffer left = Buffer::Constant(3 * 32 * 32, -1.0), right = left;
  for (Index c = 0; c < 3; ++c)
    for (Index y = 8; y < 24; ++y)
      for (Index x = 0; x < 8; ++x) {
        left[(c * 32 + y) * 32 + x] = 1.0;
        right[(c * 32 + y) * 32 + 24 + x] = 1.0;
      }
  const FeatureSet f = toy_features(concat({Tensor({1, 3, 32, 32}, left), Tensor({1, 3, 32, 32}, right)}, 0), Codec::analytic());
  EXPECT_NEAR(f.features(0, 0), f.features(1, 0), 1e-12);
  EXPECT_GT(std::abs(f.features(0, 4 + 2) - f.features(1, 4 + 2)), 0.1);
}

TEST(ReportTest, NamesExtractor) {
  MetricReport r;
  r.extractor = "toy-latent-moments-d16/analytic";
  const std::string text = format_report(r);
  EXPECT_NE(text.find("toy-latent-moments-d16/analytic"), std::string::npos);
  EXPECT_NE(text.find("SSIM"), std::string::npos);
  EXPECT_NE(text.find("KID"), std::string::npos);
}

TEST(ReportTest, PairedAndUnpairedColumnsSplit) {
  MetricReport r;
  r.paired_samples = 5;
  const std::string paired = format_report(r);
  EXPECT_NE(paired.find("PSNR"), std::string::npos);
  EXPECT_EQ(paired.find("Frechet"), std::string::npos);
  r.paired_samples = 0;
  r.unpaired_samples = 5;
  const std::string unpaired = format_report(r);
  EXPECT_EQ(unpaired.find("SSIM"), std::string::npos);
  EXPECT_NE(unpaired.find("KID"), std::string::npos);
}

}  // namespace
}  // namespace vton
