// Composite network blocks: plain conv+bn+act units, MobileNetV2
// inverted-residual blocks (MBConv), squeeze-excite gates, and the
// SE-augmented MBConv used in front of feature aggregation paths.
//
// Each block splits into build (register parameters under a dotted prefix)
// and forward (consume them through an autodiff context), so a model is just
// a list of prefixes plus specs.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "yoloret/autodiff.hpp"
#include "yoloret/common.hpp"
#include "yoloret/params.hpp"

namespace yoloret::blocks {

struct BlockSpec {
  enum class Kind { pointwise, mbconv, mbconvse };
  Kind kind = Kind::pointwise;
  int c_in = 0;
  int c_out = 0;
  int t = 1;  // expansion factor; t == 1 skips the expansion conv
  int k = 3;  // depthwise kernel size
  int s = 1;  // depthwise stride
  int r = 4;  // squeeze-excite reduction (mbconvse only)

  bool has_residual() const { return s == 1 && c_in == c_out; }
  int expanded() const { return t * c_in; }
  int se_bottleneck() const { return (expanded() + r - 1) / r; }
  // Trainable scalars registered by build_block (batchnorm running
  // statistics are buffers and not counted).
  int64_t param_count() const;
  void validate() const;
};

// conv (no bias) + batchnorm + optional activation, "same" padding k/2.
void build_conv_bn(ParamStore& store, const std::string& prefix, int c_in, int c_out,
                   int k, int groups, Rng& rng);
autodiff::Var conv_bn_act(autodiff::Ctx& ctx, const autodiff::Var& x,
                          const std::string& prefix, int stride, int groups,
                          std::optional<kernels::Act> act, const std::string& label);

// Squeeze-excite gate: pool -> 1x1 (c -> ceil(c/r), bias, swish)
// -> 1x1 (-> c, bias, sigmoid) -> per-channel scale.
void build_se(ParamStore& store, const std::string& prefix, int c, int r, Rng& rng);
autodiff::Var se_unit(autodiff::Ctx& ctx, const autodiff::Var& x,
                      const std::string& prefix, const std::string& label);

void build_block(ParamStore& store, const std::string& prefix, const BlockSpec& spec,
                 Rng& rng);
autodiff::Var forward_block(autodiff::Ctx& ctx, const autodiff::Var& x,
                            const std::string& prefix, const BlockSpec& spec);

// Zero-mean normal with variance 2/fan_in.
Tensor conv_init(const Shape& shape, Rng& rng);

}  // namespace yoloret::blocks
