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

#ifndef VTON_EXPERIMENT_HPP_
#define VTON_EXPERIMENT_HPP_

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vton/metrics.hpp"
#include "vton/pipeline.hpp"
#include "vton/run.hpp"
#include "vton/synth.hpp"

namespace vton {

// One manifest split held in memory.
struct Split {
  std::vector<ManifestEntry> entries;
  Tensor persons;   // [n, 3, H, W]
  Tensor garments;  // [n, 3, H, W]
  Tensor masks;     // [n, 1, H, W]

  int size() const { return static_cast<int>(entries.size()); }
};

Split make_split(std::span<const SamplePair> samples, std::vector<ManifestEntry> entries = {});
Split load_split(const std::filesystem::path& manifest);
std::vector<TryOnRequest> requests_of(const Split& split);

// Trains a learned codec on the split's person and garment images when the
// config asks for one.
Codec prepare_codec(const RunConfig& config, const Split& train, std::vector<double>* losses = nullptr);

// Runs the requests `chunk` at a time. Request k still starts from the noise
// of mix_seed(seed, k).
std::vector<TryOnResult> run_tryon_chunked(std::span<const TryOnRequest> requests, const TryOnModel& model,
                                           const SamplerConfig& sampler, int chunk = 8);

struct PairedEval {
  std::vector<Tensor> outputs;  // [3, H, W] per sample
  double ssim = 0.0;            // mean over samples
  double psnr = 0.0;
  double baseline_ssim = 0.0;  // agnostic input against ground truth
  // Every pixel outside the mask equals the person input bit-exactly.
  bool outside_exact = true;
};

PairedEval evaluate_paired(const TryOnModel& model, const SamplerConfig& sampler, const Split& test);

struct UnpairedEval {
  std::vector<Tensor> outputs;
  double frechet = 0.0;
  KidResult kid;
  std::string extractor;
};

// Generated try-ons on `unpaired` against the real persons of `reference`.
UnpairedEval evaluate_unpaired(const TryOnModel& model, const SamplerConfig& sampler, const Split& unpaired,
                               const Split& reference);

// L2 norm of the difference of two output lists, over all samples jointly.
double output_distance(std::span<const Tensor> a, std::span<const Tensor> b);

}  // namespace vton

#endif  // VTON_EXPERIMENT_HPP_
