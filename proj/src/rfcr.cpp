#include "yoloret/rfcr.hpp"

#include <algorithm>

namespace yoloret::rfcr {

using autodiff::Ctx;
using autodiff::Var;
using backbone::FeaturePyramid;

RfcrConfig default_rfcr_config(int fusion_channels) {
  RfcrConfig cfg;
  cfg.fusion_channels = fusion_channels;
  cfg.refine.kind = blocks::BlockSpec::Kind::mbconv;
  cfg.refine.c_in = fusion_channels;
  cfg.refine.c_out = fusion_channels;
  cfg.refine.t = 1;
  cfg.refine.k = 5;
  cfg.refine.s = 1;
  return cfg;
}

void RfcrConfig::validate() const {
  if (input_strides.empty()) throw ValidationError("rfcr: no input strides");
  if (output_strides.empty()) throw ValidationError("rfcr: no output strides");
  if (fusion_channels < 1) throw ValidationError("rfcr: fusion width must be positive");
  if (std::find(input_strides.begin(), input_strides.end(), fusion_stride) ==
      input_strides.end()) {
    throw ValidationError("rfcr: fusion stride " + std::to_string(fusion_stride) +
                          " is not one of the input strides");
  }
  if (refine.c_in != fusion_channels || refine.c_out != fusion_channels) {
    throw ValidationError("rfcr: refine block must keep the fusion width " +
                          std::to_string(fusion_channels));
  }
  if (refine.s != 1) throw ValidationError("rfcr: refine block must not change resolution");
}

namespace {

int pow2_factor(int a, int b) {
  // returns f with a == b * f or b == a * f; f must be a power of two
  const int hi = std::max(a, b);
  const int lo = std::min(a, b);
  if (lo < 1 || hi % lo != 0) {
    throw ValidationError("rfcr: strides " + std::to_string(a) + " and " +
                          std::to_string(b) + " are not related by an integer factor");
  }
  const int f = hi / lo;
  if ((f & (f - 1)) != 0) {
    throw ValidationError("rfcr: stride ratio " + std::to_string(f) +
                          " is not a power of two");
  }
  return f;
}

std::string stride_key(const std::string& prefix, const char* stage, int stride) {
  return prefix + "." + stage + ".s" + std::to_string(stride);
}

}  // namespace

Var resize_between_strides(Ctx& ctx, const Var& x, int from_stride, int to_stride,
                           const std::string& label) {
  if (from_stride == to_stride) return x;
  const int f = pow2_factor(from_stride, to_stride);
  // moving to a larger stride means a smaller map
  const auto dir =
      to_stride > from_stride ? kernels::ResizeDir::down : kernels::ResizeDir::up;
  return autodiff::resize(ctx, x, f, dir, label);
}

void build_rfcr(ParamStore& store, const std::string& prefix, const RfcrConfig& cfg,
                const std::map<int, int>& stride_channels, Rng& rng) {
  cfg.validate();
  for (int stride : cfg.input_strides) {
    auto it = stride_channels.find(stride);
    if (it == stride_channels.end()) {
      throw ValidationError("rfcr: no channel count for input stride " +
                            std::to_string(stride));
    }
    blocks::build_conv_bn(store, stride_key(prefix, "collect", stride), it->second,
                          cfg.fusion_channels, 1, 1, rng);
  }
  store.add(prefix + ".fuse.weights",
            Tensor::full(Shape{1, static_cast<int>(cfg.input_strides.size()), 1, 1}, 1.0f));
  blocks::build_block(store, prefix + ".refine", cfg.refine, rng);
  for (int stride : cfg.output_strides) {
    auto it = stride_channels.find(stride);
    if (it == stride_channels.end()) {
      throw ValidationError("rfcr: no channel count for output stride " +
                            std::to_string(stride));
    }
    blocks::build_conv_bn(store, stride_key(prefix, "redist", stride),
                          cfg.fusion_channels, it->second, 1, 1, rng);
  }
}

std::vector<Var> rfcr_collect(Ctx& ctx, const FeaturePyramid& pyramid,
                              const RfcrConfig& cfg, const std::string& prefix) {
  cfg.validate();
  std::vector<Var> projected;
  for (int stride : cfg.input_strides) {
    const std::string key = stride_key(prefix, "collect", stride);
    projected.push_back(
        blocks::conv_bn_act(ctx, pyramid.at(stride), key, 1, 1, std::nullopt, key));
  }
  return projected;
}

Var rfcr_fuse(Ctx& ctx, const std::vector<Var>& projected, const RfcrConfig& cfg,
              const std::string& prefix) {
  if (projected.size() != cfg.input_strides.size()) {
    throw ValidationError("rfcr: " + std::to_string(projected.size()) +
                          " projected inputs for " +
                          std::to_string(cfg.input_strides.size()) + " input strides");
  }
  std::vector<Var> aligned;
  for (size_t i = 0; i < projected.size(); ++i) {
    aligned.push_back(resize_between_strides(ctx, projected[i], cfg.input_strides[i],
                                             cfg.fusion_stride,
                                             prefix + ".fuse.resize"));
  }
  Var weights = ctx.param(prefix + ".fuse.weights");
  return autodiff::weighted_fusion(ctx, aligned, weights, cfg.fusion_eps,
                                   prefix + ".fuse");
}

Var rfcr_refine(Ctx& ctx, const Var& fused, const RfcrConfig& cfg,
                const std::string& prefix) {
  return blocks::forward_block(ctx, fused, prefix + ".refine", cfg.refine);
}

FeaturePyramid rfcr_redistribute(Ctx& ctx, const Var& refined, const FeaturePyramid& raw,
                                 const RfcrConfig& cfg, const std::string& prefix) {
  FeaturePyramid out;
  std::vector<int> strides = cfg.output_strides;
  std::sort(strides.begin(), strides.end());
  for (int stride : strides) {
    const Var& base = raw.at(stride);
    Var r = resize_between_strides(ctx, refined, cfg.fusion_stride, stride,
                                   prefix + ".redist.resize");
    const std::string key = stride_key(prefix, "redist", stride);
    r = blocks::conv_bn_act(ctx, r, key, 1, 1, std::nullopt, key);
    out.add(stride, autodiff::add(ctx, base, r, key + ".merge"));
  }
  return out;
}

FeaturePyramid rfcr_forward(Ctx& ctx, const FeaturePyramid& pyramid, const RfcrConfig& cfg,
                            const std::string& prefix) {
  TraceSection section(ctx.trace(), "rfcr");
  std::vector<Var> projected = rfcr_collect(ctx, pyramid, cfg, prefix);
  Var fused = rfcr_fuse(ctx, projected, cfg, prefix);
  Var refined = rfcr_refine(ctx, fused, cfg, prefix);
  return rfcr_redistribute(ctx, refined, pyramid, cfg, prefix);
}

}  // namespace yoloret::rfcr
