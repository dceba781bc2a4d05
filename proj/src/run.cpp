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

#include "vton/run.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vton/bytes.hpp"
#include "vton/synth.hpp"

namespace vton {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(long long v) { return std::to_string(v); }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(std::string_view text, std::string_view key) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw std::invalid_argument("bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return v;
}

int parse_int(std::string_view t, std::string_view k) { return parse_number<int>(t, k); }
double parse_double(std::string_view t, std::string_view k) { return parse_number<double>(t, k); }
std::uint64_t parse_u64(std::string_view t, std::string_view k) { return parse_number<std::uint64_t>(t, k); }

bool parse_bool(std::string_view t, std::string_view k) {
  if (t == "true") return true;
  if (t == "false") return false;
  throw std::invalid_argument("bad value '" + std::string(t) + "' for " + std::string(k) + " (true or false)");
}

// Comma-separated; "none" is the empty list.
template <typename T>
std::vector<T> parse_list(std::string_view t, std::string_view k) {
  std::vector<T> out;
  if (t == "none") return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = t.find(',', pos);
    out.push_back(parse_number<T>(trim(t.substr(pos, comma - pos)), k));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define VTON_INT_KEY(key, field) \
  Key { key, [](const RunConfig& c) { return fmt(static_cast<long long>(c.field)); }, [](RunConfig& c, std::string_view v) { c.field = parse_int(v, key); } }
#define VTON_DOUBLE_KEY(key, field) \
  Key { key, [](const RunConfig& c) { return fmt(c.field); }, [](RunConfig& c, std::string_view v) { c.field = parse_double(v, key); } }
#define VTON_SEED_KEY(key, field) \
  Key { key, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, std::string_view v) { c.field = parse_u64(v, key); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> k{
      VTON_INT_KEY("unet.base_channels", unet.base_channels),
      Key{"unet.channel_mults", [](const RunConfig& c) { return fmt_list(c.unet.channel_mults); },
          [](RunConfig& c, std::string_view v) { c.unet.channel_mults = parse_list<Index>(v, "unet.channel_mults"); }},
      VTON_INT_KEY("unet.layers_per_block", unet.layers_per_block),
      Key{"unet.attention_levels", [](const RunConfig& c) { return fmt_list(c.unet.attention_levels); },
          [](RunConfig& c, std::string_view v) { c.unet.attention_levels = parse_list<int>(v, "unet.attention_levels"); }},
      Key{"unet.mid_attention", [](const RunConfig& c) { return std::string(c.unet.mid_attention ? "true" : "false"); },
          [](RunConfig& c, std::string_view v) { c.unet.mid_attention = parse_bool(v, "unet.mid_attention"); }},
      VTON_INT_KEY("unet.heads", unet.heads),
      VTON_INT_KEY("unet.groups", unet.groups),
      VTON_INT_KEY("unet.time_embed_dim", unet.time_embed_dim),
      VTON_INT_KEY("train.steps", train.steps),
      VTON_INT_KEY("train.batch_size", train.batch_size),
      VTON_DOUBLE_KEY("train.lr", train.lr),
      VTON_DOUBLE_KEY("train.weight_decay", train.weight_decay),
      Key{"train.trainable", [](const RunConfig& c) { return std::string(to_string(c.train.trainable)); },
          [](RunConfig& c, std::string_view v) {
            const auto s = parse_trainable_set(v);
            if (!s) throw std::invalid_argument("bad value '" + std::string(v) + "' for train.trainable (unet, transformers or self_attention)");
            c.train.trainable = *s;
          }},
      VTON_DOUBLE_KEY("train.dream_lambda", train.dream.lambda),
      VTON_DOUBLE_KEY("train.dropout", train.dropout),
      VTON_SEED_KEY("train.seed", train.seed),
      VTON_INT_KEY("train.checkpoint_every", train.checkpoint_every),
      VTON_INT_KEY("sampler.steps", sampler.steps),
      VTON_DOUBLE_KEY("sampler.guidance", sampler.guidance),
      VTON_DOUBLE_KEY("sampler.eta", sampler.eta),
      VTON_SEED_KEY("sampler.seed", sampler.seed),
      Key{"codec.mode", [](const RunConfig& c) { return std::string(to_string(c.codec.mode)); },
          [](RunConfig& c, std::string_view v) {
            if (v == "analytic") {
              c.codec.mode = CodecMode::kAnalytic;
            } else if (v == "learned") {
              c.codec.mode = CodecMode::kLearned;
            } else {
              throw std::invalid_argument("bad value '" + std::string(v) + "' for codec.mode (analytic or learned)");
            }
          }},
      Key{"codec.widths", [](const RunConfig& c) { return fmt_list(c.codec.train.widths); },
          [](RunConfig& c, std::string_view v) { c.codec.train.widths = parse_list<Index>(v, "codec.widths"); }},
      VTON_INT_KEY("codec.steps", codec.train.steps),
      VTON_INT_KEY("codec.batch_size", codec.train.batch_size),
      VTON_DOUBLE_KEY("codec.lr", codec.train.lr),
      VTON_SEED_KEY("codec.seed", codec.train.seed),
      Key{"schedule.kind",
          [](const RunConfig& c) { return std::string(c.schedule.kind == ScheduleKind::kLinear ? "linear" : "scaled_linear"); },
          [](RunConfig& c, std::string_view v) {
            if (v == "linear") {
              c.schedule.kind = ScheduleKind::kLinear;
            } else if (v == "scaled_linear") {
              c.schedule.kind = ScheduleKind::kScaledLinear;
            } else {
              throw std::invalid_argument("bad value '" + std::string(v) + "' for schedule.kind (linear or scaled_linear)");
            }
          }},
      VTON_DOUBLE_KEY("schedule.beta_start", schedule.beta_start),
      VTON_DOUBLE_KEY("schedule.beta_end", schedule.beta_end),
      VTON_INT_KEY("schedule.timesteps", schedule.timesteps),
  };
  return k;
}

#undef VTON_INT_KEY
#undef VTON_DOUBLE_KEY
#undef VTON_SEED_KEY

const Key* find_key(std::string_view name) {
  for (const Key& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  unet.validate();
  train.validate();
  const NoiseSchedule s = schedule.make();
  if (sampler.steps <= 0 || sampler.steps > s.T) throw std::invalid_argument("RunConfig: sampler.steps must lie in [1, T]");
  if (!std::isfinite(sampler.guidance) || sampler.guidance < 0.0) {
    throw std::invalid_argument("RunConfig: sampler.guidance must be finite and non-negative");
  }
  if (!(sampler.eta >= 0.0 && sampler.eta <= 1.0)) throw std::invalid_argument("RunConfig: sampler.eta must lie in [0, 1]");
  if (codec.train.widths.size() != 3) throw std::invalid_argument("RunConfig: codec.widths needs three entries");
  if (codec.train.steps < 0 || codec.train.batch_size <= 0 || !(codec.train.lr > 0.0)) {
    throw std::invalid_argument("RunConfig: invalid codec training settings");
  }
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.emplace_back(k.name);
  return out;
}

std::string format_run_config(const RunConfig& config) {
  std::string out = "# vton run config\n";
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

void set_run_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const Key* k = find_key(key);
  if (!k) throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
  k->set(config, trim(value));
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::size_t offset = pos;
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("config: expected key = value", offset);
    const std::string_view key = trim(line.substr(0, eq));
    if (!find_key(key)) throw ParseError("config: unknown key '" + std::string(key) + "'", offset);
    if (!seen.insert(std::string(key)).second) throw ParseError("config: repeated key '" + std::string(key) + "'", offset);
    try {
      set_run_config_value(config, key, line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("config: ") + e.what(), offset);
    }
  }
  return config;
}

const ParameterSet* Checkpoint::section(std::string_view name) const {
  for (const auto& [n, p] : sections) {
    if (n == name) return &p;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  w.str64(format_run_config(c.config));
  w.i64(c.step);
  w.str64(c.rng_state);
  w.i64(c.optimizer_steps);
  w.u32(static_cast<std::uint32_t>(c.sections.size()));
  for (const auto& [name, params] : c.sections) {
    w.str32(name);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const std::string& pname : params.names()) {
      const Tensor& t = params.get(pname);
      w.str32(pname);
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (Index d : t.shape()) w.i64(d);
      for (double v : t.data()) w.f64(v);
    }
  }
  w.u64(c.losses.size());
  for (double v : c.losses) w.f64(v);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.raw(8, "magic") != std::string_view(kCheckpointMagic, 8)) r.fail("bad magic", 0);
  const std::size_t version_at = r.pos();
  if (const std::uint32_t v = r.u32("version"); v != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(v), version_at);
  }
  Checkpoint c;
  const std::string_view config_text = r.str64("config");
  const std::size_t config_at = r.pos() - config_text.size();
  try {
    c.config = parse_run_config(config_text);
  } catch (const ParseError& e) {
    r.fail(std::string("embedded ") + e.what(), config_at + e.offset());
  }
  c.step = r.i64("step");
  c.rng_state = std::string(r.str64("rng state"));
  c.optimizer_steps = r.i64("optimizer steps");
  const std::uint32_t sections = r.u32("section count");
  for (std::uint32_t s = 0; s < sections; ++s) {
    const std::size_t section_at = r.pos();
    std::string name(r.str32("section name"));
    if (c.section(name)) r.fail("duplicate section '" + name + "'", section_at);
    ParameterSet params;
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::size_t tensor_at = r.pos();
      std::string pname(r.str32("tensor name"));
      if (pname.empty() || params.contains(pname)) r.fail("bad or duplicate tensor name '" + pname + "'", tensor_at);
      const std::size_t rank_at = r.pos();
      const std::uint32_t rank = r.u32("rank");
      if (rank > 8) r.fail("unparseable rank " + std::to_string(rank), rank_at);
      Shape shape;
      std::uint64_t n = 1;
      for (std::uint32_t k = 0; k < rank; ++k) {
        const std::size_t dim_at = r.pos();
        const std::int64_t d = r.i64("extent");
        if (d <= 0 || static_cast<std::uint64_t>(d) > r.remaining()) r.fail("extent out of range", dim_at);
        shape.push_back(d);
        n *= static_cast<std::uint64_t>(d);
        if (n > r.remaining() / 8) r.fail("tensor '" + pname + "' larger than the file", dim_at);
      }
      Buffer data(static_cast<Index>(n));
      for (std::uint64_t k = 0; k < n; ++k) data[static_cast<Index>(k)] = r.f64("values");
      params.add(pname, Tensor(shape, std::move(data)));
    }
    c.sections.emplace_back(std::move(name), std::move(params));
  }
  const std::size_t losses_at = r.pos();
  const std::uint64_t losses = r.u64("loss count");
  if (losses > r.remaining() / 8) r.fail("loss count out of range", losses_at);
  for (std::uint64_t i = 0; i < losses; ++i) c.losses.push_back(r.f64("losses"));
  if (r.remaining() != 0) r.fail("trailing bytes", r.pos());
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, encode_checkpoint(checkpoint));
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint make_checkpoint(const RunConfig& config, const TrainState& state, const Codec& codec) {
  Checkpoint c;
  c.config = config;
  c.step = state.step;
  c.rng_state = state.rng.state();
  c.optimizer_steps = state.optimizer.steps();
  c.sections.emplace_back("unet", state.params);
  if (codec.mode() == CodecMode::kLearned) c.sections.emplace_back("codec", codec.params());
  c.sections.emplace_back("adam.m", state.optimizer.first_moment());
  c.sections.emplace_back("adam.v", state.optimizer.second_moment());
  c.losses = state.losses;
  return c;
}

namespace {

const ParameterSet& require(const Checkpoint& c, std::string_view name) {
  const ParameterSet* p = c.section(name);
  if (!p) throw std::invalid_argument("checkpoint has no '" + std::string(name) + "' section");
  return *p;
}

}  // namespace

TrainState restore_train_state(const Checkpoint& c) {
  const ParameterSet& unet = require(c, "unet");
  for (const ParamSpec& s : unet_layout(c.config.unet)) {
    if (!unet.contains(s.name) || unet.get(s.name).shape() != s.shape) {
      throw std::invalid_argument("checkpoint: unet section does not match its config at " + s.name);
    }
  }
  TrainState state{unet, AdamW(AdamWOptions{.lr = c.config.train.lr, .weight_decay = c.config.train.weight_decay}), Rng(),
                   c.step, c.losses};
  state.optimizer.restore(c.optimizer_steps, require(c, "adam.m"), require(c, "adam.v"));
  state.rng.set_state(c.rng_state);
  return state;
}

Codec restore_codec(const Checkpoint& c) {
  if (c.config.codec.mode == CodecMode::kAnalytic) return Codec::analytic();
  return Codec::learned(require(c, "codec"), c.config.codec.train.widths);
}

TryOnModel restore_model(const Checkpoint& c) {
  return TryOnModel{c.config.unet, require(c, "unet"), restore_codec(c), c.config.schedule.make()};
}

}  // namespace vton
