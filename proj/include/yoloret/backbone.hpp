// MobileNetV2-style feature extractor: stem conv plus a flat list of
// inverted-residual blocks derived from a stage table, with width scaling,
// tail truncation, partial weight transfer, and multi-scale tap points.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "yoloret/autodiff.hpp"
#include "yoloret/blocks.hpp"
#include "yoloret/common.hpp"
#include "yoloret/params.hpp"

namespace yoloret::backbone {

struct StageSpec {
  int t;  // expansion
  int c;  // base output channels (before width scaling)
  int n;  // block repeats
  int s;  // stride of the first block in the stage
};

// The reference stage table: 17 blocks across 7 stages.
std::vector<StageSpec> mobilenet_v2_stages();

struct BackboneSpec {
  float alpha = 0.75f;
  std::vector<StageSpec> stages = mobilenet_v2_stages();
  std::vector<int> tap_strides = {4, 8, 16, 32};
};

// Width-multiplier rounding: scaled to the nearest multiple of 8 (round half
// up), floored at 8, and bumped one step if it fell below 90% of the target.
int round_width(int base, float alpha);

struct BackboneBlock {
  std::string prefix;  // parameter prefix, stable across truncation
  blocks::BlockSpec spec;
  int out_stride;  // cumulative stride of this block's output
};

// A fully planned architecture: widths resolved, blocks flattened.
struct Backbone {
  BackboneSpec spec;
  int stem_channels = 0;
  std::vector<BackboneBlock> blocks;

  int deepest_stride() const;
  // Channels of the deepest block at each tap stride.
  std::map<int, int> tap_channels() const;
  // Trainable scalars (stem + blocks); no classifier expansion.
  int64_t param_count() const;
};

Backbone plan_backbone(const BackboneSpec& spec);

// Drops the last n blocks. Rejects truncations that would remove every block
// at the deepest stride (detection needs the stride-32 tap).
Backbone truncate_backbone(const Backbone& bb, int truncate_last);

// Trainable parameter count of the classifier expansion conv the detection
// build never instantiates (base 1280 output, scaled like the reference
// implementation). Used when reporting how much truncation removed.
int64_t classifier_expansion_params(const Backbone& bb);

void build_backbone(const Backbone& bb, ParamStore& store, Rng& rng);

struct PyramidLevel {
  int stride = 0;
  autodiff::Var feature;
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;  // strictly increasing strides

  bool has(int stride) const;
  const autodiff::Var& at(int stride) const;
  void add(int stride, autodiff::Var feature);
};

// Runs the backbone and returns the deepest feature at each tap stride.
// Input spatial dims must be divisible by the deepest stride.
FeaturePyramid extract_pyramid(autodiff::Ctx& ctx, const Backbone& bb,
                               const autodiff::Var& image);

struct TransferReport {
  std::vector<std::string> loaded;
  std::vector<std::string> rerandomized;
};

// Loads stem + the first k_blocks blocks from `source` (stem counts as part
// of block 1's prefix group: it loads whenever k_blocks >= 1), re-randomizes
// every other backbone parameter, and flags the loaded trainable parameters
// frozen-eligible. Shape mismatches are rejected by name.
TransferReport init_partial_transfer(const Backbone& bb, ParamStore& params,
                                     const std::map<std::string, Tensor>& source,
                                     int k_blocks, Rng& rng);

}  // namespace yoloret::backbone
