#include "yoloret/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace yoloret::backbone {

using autodiff::Ctx;
using autodiff::Var;

std::vector<StageSpec> mobilenet_v2_stages() {
  return {{1, 16, 1, 1}, {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
          {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
}

int round_width(int base, float alpha) {
  if (alpha <= 0.0f) throw ValidationError("backbone: width multiplier must be positive");
  const float target = alpha * static_cast<float>(base);
  int scaled = std::max(8, static_cast<int>(std::floor((target + 4.0f) / 8.0f)) * 8);
  if (static_cast<float>(scaled) < 0.9f * target) scaled += 8;
  return scaled;
}

Backbone plan_backbone(const BackboneSpec& spec) {
  if (spec.alpha <= 0.0f) {
    throw ValidationError("backbone: width multiplier must be positive");
  }
  if (spec.stages.empty()) throw ValidationError("backbone: empty stage table");
  Backbone bb;
  bb.spec = spec;
  bb.stem_channels = round_width(32, spec.alpha);

  int c_in = bb.stem_channels;
  int stride = 2;  // stem is a stride-2 conv
  int index = 0;
  for (const StageSpec& st : spec.stages) {
    if (st.n < 1 || st.c < 1 || st.t < 1 || (st.s != 1 && st.s != 2)) {
      throw ValidationError("backbone: malformed stage descriptor");
    }
    const int c_out = round_width(st.c, spec.alpha);
    for (int i = 0; i < st.n; ++i) {
      ++index;
      blocks::BlockSpec b;
      b.kind = blocks::BlockSpec::Kind::mbconv;
      b.c_in = c_in;
      b.c_out = c_out;
      b.t = st.t;
      b.k = 3;
      b.s = (i == 0) ? st.s : 1;
      stride *= b.s;
      bb.blocks.push_back(BackboneBlock{"backbone.b" + std::to_string(index), b, stride});
      c_in = c_out;
    }
  }
  return bb;
}

int Backbone::deepest_stride() const {
  int deepest = 2;  // the stem
  for (const auto& b : blocks) deepest = std::max(deepest, b.out_stride);
  return deepest;
}

std::map<int, int> Backbone::tap_channels() const {
  std::map<int, int> taps;
  for (int stride : spec.tap_strides) {
    bool found = false;
    for (const auto& b : blocks) {
      if (b.out_stride == stride) {
        taps[stride] = b.spec.c_out;  // later blocks overwrite: deepest wins
        found = true;
      }
    }
    if (!found) {
      throw ValidationError("backbone: no block produces tap stride " +
                            std::to_string(stride));
    }
  }
  return taps;
}

int64_t Backbone::param_count() const {
  int64_t total = 3LL * 9 * stem_channels + 2LL * stem_channels;  // stem conv + bn
  for (const auto& b : blocks) total += b.spec.param_count();
  return total;
}

Backbone truncate_backbone(const Backbone& bb, int truncate_last) {
  if (truncate_last < 0) {
    throw ValidationError("backbone: negative truncation count");
  }
  if (truncate_last >= static_cast<int>(bb.blocks.size())) {
    throw ValidationError("backbone: cannot truncate " + std::to_string(truncate_last) +
                          " of " + std::to_string(bb.blocks.size()) + " blocks");
  }
  Backbone out = bb;
  out.blocks.resize(bb.blocks.size() - static_cast<size_t>(truncate_last));
  if (out.deepest_stride() != bb.deepest_stride()) {
    throw ValidationError(
        "backbone: truncation removed every stride-" +
        std::to_string(bb.deepest_stride()) + " block; nothing left to detect from");
  }
  return out;
}

int64_t classifier_expansion_params(const Backbone& bb) {
  const int c_in = bb.blocks.empty() ? bb.stem_channels : bb.blocks.back().spec.c_out;
  const int c_out = round_width(1280, std::max(1.0f, bb.spec.alpha));
  return static_cast<int64_t>(c_in) * c_out + 2LL * c_out;
}

void build_backbone(const Backbone& bb, ParamStore& store, Rng& rng) {
  blocks::build_conv_bn(store, "backbone.stem", 3, bb.stem_channels, 3, 1, rng);
  for (const auto& b : bb.blocks) {
    blocks::build_block(store, b.prefix, b.spec, rng);
  }
}

bool FeaturePyramid::has(int stride) const {
  for (const auto& l : levels) {
    if (l.stride == stride) return true;
  }
  return false;
}

const Var& FeaturePyramid::at(int stride) const {
  for (const auto& l : levels) {
    if (l.stride == stride) return l.feature;
  }
  throw ValidationError("pyramid: no feature at stride " + std::to_string(stride));
}

void FeaturePyramid::add(int stride, Var feature) {
  if (!levels.empty() && levels.back().stride >= stride) {
    throw ValidationError("pyramid: strides must be strictly increasing, got " +
                          std::to_string(stride) + " after " +
                          std::to_string(levels.back().stride));
  }
  levels.push_back(PyramidLevel{stride, std::move(feature)});
}

FeaturePyramid extract_pyramid(Ctx& ctx, const Backbone& bb, const Var& image) {
  const Shape& s = image.value.shape();
  const int deepest = bb.deepest_stride();
  if (s.c != 3) {
    throw ValidationError("backbone: expected 3 input channels, got " + std::to_string(s.c));
  }
  if (s.h % deepest != 0 || s.w % deepest != 0) {
    throw ValidationError("backbone: input " + std::to_string(s.h) + "x" +
                          std::to_string(s.w) + " not divisible by stride " +
                          std::to_string(deepest));
  }

  TraceSection section(ctx.trace(), "backbone");
  Var x = blocks::conv_bn_act(ctx, image, "backbone.stem", 2, 1, kernels::Act::relu6,
                              "backbone.stem");
  // deepest feature seen at each stride so far
  std::map<int, Var> deepest_at;
  deepest_at[2] = x;
  for (const auto& b : bb.blocks) {
    x = blocks::forward_block(ctx, x, b.prefix, b.spec);
    deepest_at[b.out_stride] = x;
  }

  FeaturePyramid pyramid;
  std::vector<int> taps = bb.spec.tap_strides;
  std::sort(taps.begin(), taps.end());
  for (int stride : taps) {
    auto it = deepest_at.find(stride);
    if (it == deepest_at.end()) {
      throw ValidationError("backbone: no block produces tap stride " +
                            std::to_string(stride));
    }
    pyramid.add(stride, it->second);
  }
  return pyramid;
}

namespace {

// Parameter prefixes that make up transfer unit k: the stem belongs to the
// first unit, unit i >= 1 is block i.
std::vector<std::string> unit_prefixes(const Backbone& bb, int unit) {
  std::vector<std::string> out;
  if (unit == 1) out.push_back("backbone.stem");
  if (unit >= 1 && unit <= static_cast<int>(bb.blocks.size())) {
    out.push_back(bb.blocks[static_cast<size_t>(unit) - 1].prefix);
  }
  return out;
}

bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.size() > prefix.size() && name.compare(0, prefix.size(), prefix) == 0 &&
         name[prefix.size()] == '.';
}

}  // namespace

TransferReport init_partial_transfer(const Backbone& bb, ParamStore& params,
                                     const std::map<std::string, Tensor>& source,
                                     int k_blocks, Rng& rng) {
  if (k_blocks < 0 || k_blocks > static_cast<int>(bb.blocks.size())) {
    throw ValidationError("transfer: block count " + std::to_string(k_blocks) +
                          " out of range, backbone has " +
                          std::to_string(bb.blocks.size()) + " blocks");
  }
  std::vector<std::string> load_prefixes;
  for (int unit = 1; unit <= k_blocks; ++unit) {
    for (auto& p : unit_prefixes(bb, unit)) load_prefixes.push_back(p);
  }
  auto should_load = [&](const std::string& name) {
    for (const auto& p : load_prefixes) {
      if (has_prefix(name, p)) return true;
    }
    return false;
  };
  auto is_backbone_param = [&](const std::string& name) {
    return has_prefix(name, "backbone.stem") ||
           std::any_of(bb.blocks.begin(), bb.blocks.end(),
                       [&](const BackboneBlock& b) { return has_prefix(name, b.prefix); });
  };

  TransferReport report;
  for (const auto& e : params.entries()) {
    if (!is_backbone_param(e.name)) continue;
    if (should_load(e.name)) {
      auto it = source.find(e.name);
      if (it == source.end()) {
        throw ValidationError("transfer: source is missing parameter " + e.name);
      }
      if (!(it->second.shape() == e.value.shape())) {
        throw ValidationError("transfer: shape mismatch for " + e.name + ": model " +
                              e.value.shape().str() + " vs source " +
                              it->second.shape().str());
      }
      params.set(e.name, it->second);
      if (e.trainable) params.set_frozen(e.name, true);
      report.loaded.push_back(e.name);
    } else {
      // fresh draw for weights; batchnorm affine/buffers go back to identity
      const std::string& n = e.name;
      auto ends_with = [&](const char* s) {
        const std::string suffix(s);
        return n.size() >= suffix.size() &&
               n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
      };
      if (ends_with(".weight")) {
        params.set(n, blocks::conv_init(e.value.shape(), rng));
      } else if (ends_with(".bias") || ends_with(".bn.beta") ||
                 ends_with(".bn.running_mean")) {
        params.set(n, Tensor(e.value.shape()));
      } else if (ends_with(".bn.gamma") || ends_with(".bn.running_var")) {
        params.set(n, Tensor::full(e.value.shape(), 1.0f));
      }
      params.set_frozen(n, false);
      report.rerandomized.push_back(n);
    }
  }
  return report;
}

}  // namespace yoloret::backbone
