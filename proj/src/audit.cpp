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

#include "vton/audit.hpp"

#include <cmath>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vton/bytes.hpp"

namespace vton {

namespace {

constexpr std::array<std::string_view, kParamClassCount> kClassNames{
    "vae", "resnet", "self_attn", "cross_attn", "text_encoder", "time", "io", "other", "unclassified"};
constexpr std::array<std::string_view, 5> kKindNames{"conv", "linear", "norm", "embedding", "attention-projection"};

bool contains(std::string_view s, std::string_view part) { return s.find(part) != std::string_view::npos; }
bool starts(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::string_view layer_of(std::string_view name) {
  for (std::string_view suffix : {".weight", ".bias"}) {
    if (name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix) {
      return name.substr(0, name.size() - suffix.size());
    }
  }
  return name;
}

std::string_view last_component(std::string_view layer) {
  // "to_out.0" style names keep their parent.
  std::size_t dot = layer.rfind('.');
  if (dot != std::string_view::npos && dot + 1 < layer.size() && std::isdigit(static_cast<unsigned char>(layer[dot + 1]))) {
    dot = layer.rfind('.', dot - 1);
  }
  return dot == std::string_view::npos ? layer : layer.substr(dot + 1);
}

LayerKind infer_kind(std::string_view name, int weight_rank) {
  const std::string_view last = last_component(layer_of(name));
  if (contains(last, "embedding")) return LayerKind::kEmbedding;
  for (std::string_view p : {"to_q", "to_k", "to_v", "to_out", "q_proj", "k_proj", "v_proj", "out_proj"}) {
    if (starts(last, p)) return LayerKind::kAttentionProjection;
  }
  if (contains(name, ".attn_1.") && (last == "q" || last == "k" || last == "v" || last == "proj_out")) {
    return LayerKind::kAttentionProjection;
  }
  if (contains(last, "norm")) return LayerKind::kNorm;
  if (weight_rank == 4) return LayerKind::kConv;
  return LayerKind::kLinear;
}

// Weight rank per layer, for classifying biases by their sibling weight.
ArchManifest build_manifest(const std::vector<std::pair<std::string, Shape>>& tensors) {
  std::map<std::string, int, std::less<>> rank;
  for (const auto& [name, shape] : tensors) {
    if (layer_of(name) != name && name.substr(name.size() - 7) == ".weight") {
      rank[std::string(layer_of(name))] = static_cast<int>(shape.size());
    }
  }
  ArchManifest m;
  for (const auto& [name, shape] : tensors) {
    const auto it = rank.find(layer_of(name));
    const int r = it == rank.end() ? static_cast<int>(shape.size()) : it->second;
    m.push_back({name, infer_kind(name, r), shape, classify(name)});
  }
  return m;
}

void vae_res_block(Layout& l, const std::string& p, Index in, Index out) {
  layout_norm(l, p + ".norm1", in);
  layout_conv(l, p + ".conv1", in, out, 3);
  layout_norm(l, p + ".norm2", out);
  layout_conv(l, p + ".conv2", out, out, 3);
  if (in != out) layout_conv(l, p + ".nin_shortcut", in, out, 1);
}

void vae_attention(Layout& l, const std::string& p, Index c) {
  layout_norm(l, p + ".norm", c);
  for (const char* n : {".q", ".k", ".v", ".proj_out"}) layout_conv(l, p + n, c, c, 1);
}

void vae_mid(Layout& l, const std::string& p, Index c) {
  vae_res_block(l, p + ".block_1", c, c);
  vae_attention(l, p + ".attn_1", c);
  vae_res_block(l, p + ".block_2", c, c);
}

}  // namespace

std::string_view to_string(ParamClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

std::optional<ParamClass> parse_param_class(std::string_view text) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == text) return static_cast<ParamClass>(i);
  }
  return std::nullopt;
}

std::string_view to_string(LayerKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

std::optional<LayerKind> parse_layer_kind(std::string_view text) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == text) return static_cast<LayerKind>(i);
  }
  return std::nullopt;
}

ParamClass classify(std::string_view name) {
  if (starts(name, "first_stage_model.")) return ParamClass::kVae;
  if (starts(name, "text_model.") || starts(name, "cond_stage_model.")) return ParamClass::kTextEncoder;
  if (is_self_attention_param(name)) return ParamClass::kSelfAttn;
  if (is_cross_attention_param(name)) return ParamClass::kCrossAttn;
  if (starts(name, "time_embedding.")) return ParamClass::kTime;
  if (starts(name, "conv_in.") || starts(name, "conv_norm_out.") || starts(name, "conv_out.")) return ParamClass::kIo;
  const bool unet = starts(name, "down_blocks.") || starts(name, "mid_block.") || starts(name, "up_blocks.");
  if (unet && contains(name, ".resnets.")) return ParamClass::kResnet;
  if (unet) return ParamClass::kOther;
  return ParamClass::kUnclassified;
}

ArchManifest manifest_from_layout(const Layout& layout) {
  std::vector<std::pair<std::string, Shape>> tensors;
  for (const ParamSpec& s : layout) tensors.emplace_back(s.name, s.shape);
  return build_manifest(tensors);
}

ArchManifest toy_manifest() { return manifest_from_layout(unet_layout(UNetConfig::toy())); }

Layout sd15_vae_layout() {
  const std::vector<Index> mult{1, 2, 4, 4};
  const Index ch = 128;
  Layout l;
  const std::string enc = "first_stage_model.encoder", dec = "first_stage_model.decoder";
  layout_conv(l, enc + ".conv_in", 3, ch, 3);
  Index in = ch;
  for (std::size_t i = 0; i < mult.size(); ++i) {
    const Index out = ch * mult[i];
    const std::string p = enc + ".down." + std::to_string(i);
    for (int j = 0; j < 2; ++j) {
      vae_res_block(l, p + ".block." + std::to_string(j), in, out);
      in = out;
    }
    if (i + 1 < mult.size()) layout_conv(l, p + ".downsample.conv", out, out, 3);
  }
  vae_mid(l, enc + ".mid", in);
  layout_norm(l, enc + ".norm_out", in);
  layout_conv(l, enc + ".conv_out", in, 8, 3);
  layout_conv(l, "first_stage_model.quant_conv", 8, 8, 1);
  layout_conv(l, "first_stage_model.post_quant_conv", 4, 4, 1);

  Index c = ch * mult.back();
  layout_conv(l, dec + ".conv_in", 4, c, 3);
  vae_mid(l, dec + ".mid", c);
  for (std::size_t r = 0; r < mult.size(); ++r) {
    const std::size_t i = mult.size() - 1 - r;
    const Index out = ch * mult[i];
    const std::string p = dec + ".up." + std::to_string(i);
    for (int j = 0; j < 3; ++j) {
      vae_res_block(l, p + ".block." + std::to_string(j), c, out);
      c = out;
    }
    if (i > 0) layout_conv(l, p + ".upsample.conv", out, out, 3);
  }
  layout_norm(l, dec + ".norm_out", c);
  layout_conv(l, dec + ".conv_out", c, 3, 3);
  return l;
}

Layout clip_text_layout() {
  const Index width = 768, vocab = 49408, positions = 77, layers = 12;
  Layout l;
  const std::string p = "cond_stage_model.transformer.text_model";
  l.push_back({p + ".embeddings.token_embedding.weight", {vocab, width}});
  l.push_back({p + ".embeddings.position_embedding.weight", {positions, width}});
  for (Index i = 0; i < layers; ++i) {
    const std::string b = p + ".encoder.layers." + std::to_string(i);
    layout_norm(l, b + ".layer_norm1", width);
    for (const char* n : {".self_attn.q_proj", ".self_attn.k_proj", ".self_attn.v_proj", ".self_attn.out_proj"}) {
      layout_linear(l, b + n, width, width, true);
    }
    layout_norm(l, b + ".layer_norm2", width);
    layout_linear(l, b + ".mlp.fc1", width, 4 * width, true);
    layout_linear(l, b + ".mlp.fc2", 4 * width, width, true);
  }
  layout_norm(l, p + ".final_layer_norm", width);
  return l;
}

ArchManifest sd15_manifest() {
  Layout l = sd15_vae_layout();
  const Layout unet = unet_layout(UNetConfig::sd15_inpainting());
  const Layout text = clip_text_layout();
  l.insert(l.end(), unet.begin(), unet.end());
  l.insert(l.end(), text.begin(), text.end());
  return manifest_from_layout(l);
}

Index count_params(const ArchManifest& m, const std::set<ParamClass>& classes) {
  Index n = 0;
  for (const Descriptor& d : m) {
    if (classes.count(d.cls)) n += d.count();
  }
  return n;
}

Index count_params(const ArchManifest& m, const std::vector<std::string>& classes) {
  std::set<ParamClass> set;
  for (const std::string& c : classes) {
    const auto pc = parse_param_class(c);
    if (!pc) throw std::invalid_argument("unknown parameter class '" + c + "'");
    set.insert(*pc);
  }
  return count_params(m, set);
}

Index count_params(const ArchManifest& m) {
  Index n = 0;
  for (const Descriptor& d : m) n += d.count();
  return n;
}

SurgeryPlan surgery_plan(const ArchManifest& m) {
  SurgeryPlan plan;
  for (const Descriptor& d : m) {
    if (d.cls == ParamClass::kCrossAttn || d.cls == ParamClass::kTextEncoder) {
      plan.removed.push_back(d);
      plan.removed_count += d.count();
    } else {
      plan.kept.push_back(d);
    }
  }
  return plan;
}

bool Target::ok() const {
  const double err = std::abs(actual - expected);
  return relative ? err <= tolerance * std::abs(expected) : err <= tolerance;
}

AuditReport audit_report(const ArchManifest& original, TrainableSet set, bool with_targets) {
  AuditReport r;
  r.trainable_set = set;
  const SurgeryPlan plan = surgery_plan(original);
  for (const Descriptor& d : plan.kept) {
    r.class_totals[static_cast<std::size_t>(d.cls)] += d.count();
    if (d.cls == ParamClass::kUnclassified) r.unclassified.push_back(d.name);
  }
  const auto pred = trainable_predicate(set);
  auto in_unet = [](const Descriptor& d) { return d.cls != ParamClass::kVae && d.cls != ParamClass::kTextEncoder && d.cls != ParamClass::kUnclassified; };
  for (const Descriptor& d : original) {
    r.original_total += d.count();
    if (d.cls == ParamClass::kTextEncoder) r.text_encoder += d.count();
    if (in_unet(d)) {
      r.unet_full += d.count();
      if (is_transformer_param(d.name)) r.transformers_full += d.count();
    }
  }
  for (const Descriptor& d : plan.kept) {
    r.total += d.count();
    if (d.cls == ParamClass::kVae) r.vae += d.count();
    if (in_unet(d)) {
      r.unet += d.count();
      if (pred(d.name)) r.trainable += d.count();
    }
  }
  r.removed = plan.removed_count;
  r.ratio = r.total == 0 ? 0.0 : static_cast<double>(r.trainable) / static_cast<double>(r.total);
  if (with_targets) {
    auto m = [](Index n) { return static_cast<double>(n) / 1e6; };
    r.targets.push_back({"VAE (M)", 83.61, m(r.vae), 0.005});
    r.targets.push_back({"UNet after surgery (M)", 815.45, m(r.unet), 0.005});
    r.targets.push_back({"total (M)", 899.06, m(r.total), 0.005});
    r.targets.push_back({"removed by surgery (M)", 167.02, m(r.removed), 0.01});
    switch (set) {
      case TrainableSet::kSelfAttention:
        r.targets.push_back({"trainable self_attention (M)", 49.57, m(r.trainable), 0.005});
        r.targets.push_back({"trainable ratio (%)", 5.51, 100.0 * r.ratio, 0.2, false});
        break;
      case TrainableSet::kTransformers:
        r.targets.push_back({"trainable transformers, pre-surgery scope (M)", 267.24, m(r.transformers_full), 0.01});
        break;
      case TrainableSet::kUnet:
        r.targets.push_back({"trainable unet (M)", 815.45, m(r.trainable), 0.005});
        break;
    }
  }
  return r;
}

bool all_targets_met(const AuditReport& r) {
  for (const Target& t : r.targets) {
    if (!t.ok()) return false;
  }
  return true;
}

std::string format_audit(const AuditReport& r) {
  auto m = [](Index n) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6;
    return o.str();
  };
  std::ostringstream o;
  o << "| VAE | UNet | E_text | Total | Trainable (" << to_string(r.trainable_set) << ") | Ratio |\n";
  o << "|---|---|---|---|---|---|\n";
  o << "| " << m(r.vae) << " | " << m(r.unet) << " | - | " << m(r.total) << " | " << m(r.trainable) << " | " << std::fixed
    << std::setprecision(2) << 100.0 * r.ratio << "% |\n\n";
  o << "before surgery: total " << m(r.original_total) << "M, UNet " << m(r.unet_full) << "M, E_text " << m(r.text_encoder)
    << "M\n";
  o << "removed by surgery (cross_attn + text_encoder): " << m(r.removed) << "M\n";
  o << "transformer subtree: " << m(r.transformers_full) << "M before surgery, "
    << m(r.transformers_full - (r.unet_full - r.unet)) << "M after\n";
  o << "self_attn class: q/k/v/out projection weights plus the output-projection bias\n\n";
  o << "class totals after surgery (M):\n";
  for (std::size_t i = 0; i < r.class_totals.size(); ++i) {
    o << "  " << std::left << std::setw(14) << kClassNames[i] << std::right << std::setw(10) << m(r.class_totals[i]) << "\n";
  }
  if (!r.unclassified.empty()) {
    o << "unclassified descriptors:\n";
    for (const std::string& n : r.unclassified) o << "  " << n << "\n";
  }
  if (!r.targets.empty()) {
    o << "\nchecks:\n";
    for (const Target& t : r.targets) {
      o << "  [" << (t.ok() ? "ok" : "MISS") << "] " << t.label << ": " << std::fixed << std::setprecision(2) << t.actual
        << " vs " << t.expected << " within " << (t.relative ? 100.0 * t.tolerance : t.tolerance)
        << (t.relative ? "%" : " pp") << "\n";
    }
  }
  return o.str();
}

std::string format_manifest_text(const ArchManifest& m) {
  std::ostringstream o;
  o << "# vton-arch v1\n# name kind shape class\n";
  for (const Descriptor& d : m) {
    o << d.name << ' ' << to_string(d.kind) << ' ';
    for (std::size_t i = 0; i < d.shape.size(); ++i) o << (i ? "x" : "") << d.shape[i];
    o << ' ' << to_string(d.cls) << '\n';
  }
  return o.str();
}

ArchManifest parse_manifest_text(std::string_view text) {
  ArchManifest m;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    const std::size_t offset = pos;
    pos = end + 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream in(line);
    std::string name, kind, shape, cls, extra;
    if (!(in >> name >> kind >> shape >> cls) || (in >> extra)) throw ParseError("manifest: expected 4 fields", offset);
    Descriptor d;
    d.name = name;
    const auto k = parse_layer_kind(kind);
    if (!k) throw ParseError("manifest: unknown kind '" + kind + "'", offset);
    d.kind = *k;
    const auto c = parse_param_class(cls);
    if (!c) throw ParseError("manifest: unknown class '" + cls + "'", offset);
    d.cls = *c;
    std::istringstream dims(shape);
    std::string dim;
    while (std::getline(dims, dim, 'x')) {
      char* stop = nullptr;
      const long long v = std::strtoll(dim.c_str(), &stop, 10);
      if (dim.empty() || *stop != '\0' || v <= 0) throw ParseError("manifest: bad shape '" + shape + "'", offset);
      d.shape.push_back(v);
    }
    if (d.shape.empty()) throw ParseError("manifest: empty shape", offset);
    m.push_back(std::move(d));
  }
  return m;
}

std::string encode_checkpoint_index(const CheckpointIndex& index) {
  ByteWriter w;
  w.raw("VTIX");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(index.size()));
  for (const IndexEntry& e : index) {
    w.str32(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) w.i64(d);
  }
  return std::move(w.bytes());
}

CheckpointIndex parse_checkpoint_index(std::string_view bytes) {
  ByteReader r(bytes, "index");
  if (r.raw(4, "magic") != "VTIX") r.fail("bad magic", 0);
  const std::size_t version_at = r.pos();
  if (r.u32("version") != 1) r.fail("unsupported version", version_at);
  const std::uint32_t count = r.u32("entry count");
  CheckpointIndex out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.pos();
    IndexEntry e;
    e.name = std::string(r.str32("name"));
    if (e.name.empty()) r.fail("empty name", entry_at);
    if (!seen.insert(e.name).second) r.fail("duplicate name '" + e.name + "'", entry_at);
    const std::size_t rank_at = r.pos();
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) r.fail("unparseable rank " + std::to_string(rank), rank_at);
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::size_t dim_at = r.pos();
      const std::int64_t d = r.i64("extent");
      if (d <= 0) r.fail("non-positive extent", dim_at);
      e.shape.push_back(d);
    }
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) r.fail("trailing bytes", r.pos());
  return out;
}

ArchManifest manifest_from_index(const CheckpointIndex& index) {
  std::vector<std::pair<std::string, Shape>> tensors;
  for (const IndexEntry& e : index) tensors.emplace_back(e.name, e.shape);
  return build_manifest(tensors);
}

CheckpointIndex index_from_manifest(const ArchManifest& m) {
  CheckpointIndex out;
  for (const Descriptor& d : m) out.push_back({d.name, d.shape});
  return out;
}

}  // namespace vton
