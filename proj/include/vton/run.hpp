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

#ifndef VTON_RUN_HPP_
#define VTON_RUN_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vton/codec.hpp"
#include "vton/error.hpp"
#include "vton/pipeline.hpp"

namespace vton {

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kScaledLinear;
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;
  int timesteps = 1000;

  NoiseSchedule make() const { return make_schedule(kind, beta_start, beta_end, timesteps); }
};

struct CodecConfig {
  CodecMode mode = CodecMode::kAnalytic;
  CodecTrainOptions train;  // learned mode only
};

// Every knob of a run. Text form: one "key = value" per line, '#' comments,
// keys grouped as unet.*, train.*, sampler.*, codec.*, schedule.*.
struct RunConfig {
  UNetConfig unet = UNetConfig::toy();
  TrainConfig train;
  SamplerConfig sampler;
  CodecConfig codec;
  ScheduleConfig schedule;

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Fully specified: every key appears, in a fixed order.
std::string format_run_config(const RunConfig& config);
// Starts from the defaults. Throws ParseError on unknown or repeated keys and
// malformed values, with the byte offset of the offending line.
RunConfig parse_run_config(std::string_view text);
std::vector<std::string> run_config_keys();
// Applies one "key=value" override.
void set_run_config_value(RunConfig& config, std::string_view key, std::string_view value);

inline constexpr char kCheckpointMagic[] = "VTONCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian: magic, u32 version, u64-length config text, i64 step,
// u64-length RNG state text, i64 optimizer steps, u32 section count, then per
// section a u32-length name and u32 tensor count, per tensor a u32-length
// name, u32 rank, i64 extents and f64 values; finally u64 loss count and f64
// losses.
struct Checkpoint {
  RunConfig config;
  long long step = 0;
  std::string rng_state;
  long long optimizer_steps = 0;
  // "unet", optionally "codec", and the optimizer moments "adam.m", "adam.v".
  std::vector<std::pair<std::string, ParameterSet>> sections;
  std::vector<double> losses;

  const ParameterSet* section(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
// Writes through a temporary file and renames it, so an interrupted save
// leaves the previous file intact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const RunConfig& config, const TrainState& state, const Codec& codec);
// Optimizer, RNG, step and loss curve exactly as saved.
TrainState restore_train_state(const Checkpoint& checkpoint);
Codec restore_codec(const Checkpoint& checkpoint);
TryOnModel restore_model(const Checkpoint& checkpoint);

}  // namespace vton

#endif  // VTON_RUN_HPP_
