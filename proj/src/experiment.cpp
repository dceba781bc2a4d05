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

#include "vton/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vton/ops.hpp"

namespace vton {

namespace {

Tensor stack(const std::vector<Tensor>& items) {
  std::vector<Tensor> batched;
  batched.reserve(items.size());
  for (const Tensor& t : items) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    batched.push_back(t.with_shape(s));
  }
  return concat(batched, 0);
}

Tensor row(const Tensor& batch, Index i) {
  const Shape& s = batch.shape();
  return slice(batch, 0, i, 1).with_shape(Shape(s.begin() + 1, s.end()));
}

}  // namespace

Split make_split(std::span<const SamplePair> samples, std::vector<ManifestEntry> entries) {
  if (samples.empty()) throw std::invalid_argument("make_split: no samples");
  if (entries.empty()) entries.resize(samples.size());
  if (entries.size() != samples.size()) throw std::invalid_argument("make_split: entry count mismatch");
  std::vector<Tensor> persons, garments, masks;
  for (const SamplePair& s : samples) {
    if (s.person.height != s.garment.height || s.person.width != s.garment.width || s.person.height != s.mask.height ||
        s.person.width != s.mask.width) {
      throw ShapeError("make_split: person, garment and mask extents differ");
    }
    persons.push_back(to_tensor(s.person));
    garments.push_back(to_tensor(s.garment));
    const Tensor m = to_tensor(s.mask);
    masks.push_back(m.with_shape({1, m.dim(0), m.dim(1)}));
  }
  return Split{std::move(entries), stack(persons), stack(garments), stack(masks)};
}

Split load_split(const std::filesystem::path& manifest) {
  std::vector<ManifestEntry> entries = load_manifest(manifest);
  if (entries.empty()) throw std::invalid_argument("load_split: " + manifest.string() + " lists no samples");
  std::vector<SamplePair> samples;
  samples.reserve(entries.size());
  for (const ManifestEntry& e : entries) samples.push_back(load_sample(e));
  return make_split(samples, std::move(entries));
}

std::vector<TryOnRequest> requests_of(const Split& split) {
  std::vector<TryOnRequest> out;
  for (Index i = 0; i < split.size(); ++i) {
    const Tensor m = row(split.masks, i);
    out.push_back({row(split.persons, i), row(split.garments, i), m.with_shape({m.dim(1), m.dim(2)})});
  }
  return out;
}

Codec prepare_codec(const RunConfig& config, const Split& train, std::vector<double>* losses) {
  if (config.codec.mode == CodecMode::kAnalytic) return Codec::analytic();
  std::vector<Tensor> images;
  for (Index i = 0; i < train.size(); ++i) {
    images.push_back(row(train.persons, i));
    images.push_back(row(train.garments, i));
  }
  CodecTrainResult r = train_codec(images, config.codec.train);
  if (losses) *losses = r.losses;
  return r.codec;
}

std::vector<TryOnResult> run_tryon_chunked(std::span<const TryOnRequest> requests, const TryOnModel& model,
                                           const SamplerConfig& sampler, int chunk) {
  if (chunk <= 0) throw std::invalid_argument("run_tryon_chunked: chunk must be positive");
  std::vector<TryOnResult> out;
  for (std::size_t i = 0; i < requests.size(); i += static_cast<std::size_t>(chunk)) {
    const std::size_t n = std::min(requests.size() - i, static_cast<std::size_t>(chunk));
    for (TryOnResult& r : run_tryon(requests.subspan(i, n), model, sampler, i)) out.push_back(std::move(r));
  }
  return out;
}

PairedEval evaluate_paired(const TryOnModel& model, const SamplerConfig& sampler, const Split& test) {
  if (test.size() == 0) throw std::invalid_argument("evaluate_paired: empty split");
  const std::vector<TryOnRequest> requests = requests_of(test);
  PairedEval e;
  for (TryOnResult& r : run_tryon_chunked(requests, model, sampler)) e.outputs.push_back(std::move(r.image));
  const Tensor agnostic = make_agnostic(test.persons, test.masks);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const TryOnRequest& q = requests[i];
    e.ssim += ssim(e.outputs[i], q.person);
    e.psnr += psnr(e.outputs[i], q.person);
    e.baseline_ssim += ssim(row(agnostic, static_cast<Index>(i)), q.person);
    const auto out = e.outputs[i].data(), in = q.person.data(), mask = q.mask.data();
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (mask[k % mask.size()] == 0.0 && out[k] != in[k]) e.outside_exact = false;
    }
  }
  const double n = static_cast<double>(requests.size());
  e.ssim /= n;
  e.psnr /= n;
  e.baseline_ssim /= n;
  return e;
}

UnpairedEval evaluate_unpaired(const TryOnModel& model, const SamplerConfig& sampler, const Split& unpaired,
                               const Split& reference) {
  if (unpaired.size() == 0 || reference.size() == 0) throw std::invalid_argument("evaluate_unpaired: empty split");
  const std::vector<TryOnRequest> requests = requests_of(unpaired);
  UnpairedEval e;
  for (TryOnResult& r : run_tryon_chunked(requests, model, sampler)) e.outputs.push_back(std::move(r.image));
  const FeatureSet generated = toy_features(stack(e.outputs), model.codec);
  const FeatureSet real = toy_features(reference.persons, model.codec);
  e.extractor = generated.extractor;
  e.frechet = frechet_distance(generated, real);
  e.kid = kid(generated, real, sampler.seed);
  return e;
}

double output_distance(std::span<const Tensor> a, std::span<const Tensor> b) {
  if (a.size() != b.size()) throw std::invalid_argument("output_distance: list sizes differ");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) throw ShapeError("output_distance: shapes differ");
    sq += (a[i].values() - b[i].values()).square().sum();
  }
  return std::sqrt(sq);
}

}  // namespace vton
