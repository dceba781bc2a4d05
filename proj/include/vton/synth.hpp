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

#ifndef VTON_SYNTH_HPP_
#define VTON_SYNTH_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vton/error.hpp"
#include "vton/tensor.hpp"

namespace vton {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit interleaved RGB raster.
struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Image8() = default;
  Image8(int h, int w, Rgb fill);
  std::uint8_t* px(int y, int x) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* px(int y, int x) const { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  friend bool operator==(const Image8&, const Image8&) = default;
};

// Binary raster; 1 marks the region to regenerate.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

enum class Pattern { kSolid, kStripes, kChecker, kLogoGlyph };
inline constexpr int kPatternCount = 4;
std::string_view to_string(Pattern p);
std::optional<Pattern> parse_pattern(std::string_view text);

// Every field is an integer so a spec survives a text roundtrip exactly.
struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 128;
  int width = 96;
  Rgb background{};
  Rgb skin{};
  Rgb pants{};
  int head_cx = 0, head_cy = 0, head_r = 0;
  int shoulder_y = 0;
  int torso_half_width = 0;
  int arm_width = 0;
  int hem_y = 0;
  int sleeve_length = 0;
  int neck_r = 0;
  Pattern pattern = Pattern::kSolid;
  Rgb color1{};
  Rgb color2{};
  int period = 8;
  int vertical = 0;  // stripes orientation
  int glyph = 0;     // index into the built-in glyph table

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

SceneSpec random_spec(std::uint64_t seed, int height = 128, int width = 96);
// Throws std::invalid_argument if the garment would leave the canvas.
void validate(const SceneSpec& spec);

struct SamplePair {
  Image8 person;   // ground truth: the person wearing the garment
  Image8 garment;  // in-shop garment on white
  Mask mask;       // exact garment support on the person
  SceneSpec spec;
};

SamplePair gen_sample(const SceneSpec& spec);

std::string format_spec(const SceneSpec& spec);
SceneSpec parse_spec(std::string_view text);

// Binary PPM (P6, maxval 255) and PBM (P4) codecs.
std::string encode_ppm(const Image8& image);
Image8 decode_ppm(std::string_view bytes);
std::string encode_pbm(const Mask& mask);
Mask decode_pbm(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct ManifestEntry {
  std::string id;
  std::filesystem::path person;
  std::filesystem::path garment;
  std::filesystem::path mask;
  std::filesystem::path spec;
  std::uint64_t seed = 0;
};

std::string format_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& base);
// Relative paths resolve against `base`.
std::vector<ManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

void save_sample(const std::filesystem::path& dir, const std::string& id, const SamplePair& pair);
SamplePair load_sample(const ManifestEntry& entry);

struct DatasetManifests {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> test;
  // Test persons each paired with another test sample's garment.
  std::vector<ManifestEntry> test_unpaired;
};

// Sample i is generated from mix_seed(seed, i); the first floor(n * ratio)
// ids form the training split.
DatasetManifests plan_dataset(std::uint64_t seed, int n, double split_ratio, const std::filesystem::path& dir);
// Writes every sample plus train.txt, test.txt and test_unpaired.txt.
DatasetManifests gen_dataset(std::uint64_t seed, int n, double split_ratio, const std::filesystem::path& dir, int height = 128,
                             int width = 96);

// [3, H, W] in [-1, 1] and back (rounding to nearest).
Tensor to_tensor(const Image8& image);
Image8 to_image(const Tensor& chw);
// [H, W] of 0/1.
Tensor to_tensor(const Mask& mask);
Mask to_mask(const Tensor& hw);

}  // namespace vton

#endif  // VTON_SYNTH_HPP_
