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

#ifndef VTON_AUDIT_HPP_
#define VTON_AUDIT_HPP_

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vton/error.hpp"
#include "vton/unet.hpp"

namespace vton {

enum class ParamClass { kVae, kResnet, kSelfAttn, kCrossAttn, kTextEncoder, kTime, kIo, kOther, kUnclassified };
inline constexpr int kParamClassCount = 9;
std::string_view to_string(ParamClass c);
std::optional<ParamClass> parse_param_class(std::string_view text);

enum class LayerKind { kConv, kLinear, kNorm, kEmbedding, kAttentionProjection };
std::string_view to_string(LayerKind k);
std::optional<LayerKind> parse_layer_kind(std::string_view text);

// Name grammar, first match wins: first_stage_model -> vae; text_model or
// cond_stage_model -> text_encoder; attn1 projections -> self_attn; attn2 or a
// transformer norm2 -> cross_attn; time_embedding -> time; conv_in,
// conv_norm_out, conv_out -> io; resnets -> resnet; any other down_blocks,
// mid_block or up_blocks name -> other; anything else -> unclassified.
ParamClass classify(std::string_view name);

struct Descriptor {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  Shape shape;
  ParamClass cls = ParamClass::kOther;

  Index count() const { return numel_of(shape); }
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

using ArchManifest = std::vector<Descriptor>;

// Descriptors for every tensor of a layout, classified by name.
ArchManifest manifest_from_layout(const Layout& layout);
ArchManifest toy_manifest();
// SD1.5 inpainting: VAE, UNet with cross-attention, CLIP ViT-L/14 text encoder.
ArchManifest sd15_manifest();
Layout sd15_vae_layout();
Layout clip_text_layout();

// Sum over descriptors whose class is in `classes`.
Index count_params(const ArchManifest& m, const std::set<ParamClass>& classes);
// Class names as text; throws std::invalid_argument on an unknown name.
Index count_params(const ArchManifest& m, const std::vector<std::string>& classes);
Index count_params(const ArchManifest& m);

struct SurgeryPlan {
  ArchManifest kept;
  ArchManifest removed;
  Index removed_count = 0;
};

// Drops every cross_attn and text_encoder descriptor.
SurgeryPlan surgery_plan(const ArchManifest& m);

struct Target {
  std::string label;
  double expected = 0.0;
  double actual = 0.0;
  double tolerance = 0.0;  // relative, or absolute for ratios
  bool relative = true;
  bool ok() const;
};

struct AuditReport {
  std::array<Index, kParamClassCount> class_totals{};
  Index total = 0;          // after surgery
  Index original_total = 0;  // before surgery
  Index vae = 0;
  Index unet = 0;       // after surgery
  Index unet_full = 0;  // before surgery
  Index text_encoder = 0;
  Index removed = 0;
  TrainableSet trainable_set = TrainableSet::kSelfAttention;
  Index trainable = 0;  // on the surgered manifest
  // Transformer subtree of the unsurgered UNet, the scope of the reference
  // trainable-module comparison.
  Index transformers_full = 0;
  double ratio = 0.0;  // trainable / total
  std::vector<std::string> unclassified;
  std::vector<Target> targets;
};

// Accounts the surgered manifest; `with_targets` adds the SD1.5
// reference values and their tolerances.
AuditReport audit_report(const ArchManifest& original, TrainableSet set, bool with_targets = false);
std::string format_audit(const AuditReport& report);
bool all_targets_met(const AuditReport& report);

// Text manifest: "name kind d0xd1x... class" per line, '#' comments.
std::string format_manifest_text(const ArchManifest& m);
ArchManifest parse_manifest_text(std::string_view text);

// Binary checkpoint index, little-endian: "VTIX", u32 version (1), u32 entry
// count, then per entry u32 name length, name bytes, u32 rank, rank x i64.
struct IndexEntry {
  std::string name;
  Shape shape;
};
using CheckpointIndex = std::vector<IndexEntry>;

std::string encode_checkpoint_index(const CheckpointIndex& index);
CheckpointIndex parse_checkpoint_index(std::string_view bytes);
// Classifies every entry by name; kinds are inferred from names and ranks.
ArchManifest manifest_from_index(const CheckpointIndex& index);
CheckpointIndex index_from_manifest(const ArchManifest& m);

}  // namespace vton

#endif  // VTON_AUDIT_HPP_
