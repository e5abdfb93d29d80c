#include "yoloret/blocks.hpp"

#include <cmath>

namespace yoloret::blocks {

using autodiff::Ctx;
using autodiff::Var;

void BlockSpec::validate() const {
  if (c_in < 1 || c_out < 1) {
    throw ValidationError("block: channel counts must be positive, got c_in=" +
                          std::to_string(c_in) + " c_out=" + std::to_string(c_out));
  }
  if (t < 1) throw ValidationError("block: expansion must be >= 1, got " + std::to_string(t));
  if (k != 1 && k != 3 && k != 5) {
    throw ValidationError("block: kernel must be 1, 3 or 5, got " + std::to_string(k));
  }
  if (s != 1 && s != 2) {
    throw ValidationError("block: stride must be 1 or 2, got " + std::to_string(s));
  }
  if (kind == Kind::mbconvse && r < 1) {
    throw ValidationError("block: se reduction must be >= 1, got " + std::to_string(r));
  }
}

int64_t BlockSpec::param_count() const {
  if (kind == Kind::pointwise) {
    return static_cast<int64_t>(c_in) * c_out + 2LL * c_out;
  }
  const int64_t mid = expanded();
  int64_t count = 0;
  if (t > 1) count += static_cast<int64_t>(c_in) * mid + 2 * mid;  // expand conv + bn
  count += mid * static_cast<int64_t>(k) * k + 2 * mid;            // depthwise + bn
  count += mid * static_cast<int64_t>(c_out) + 2LL * c_out;        // project + bn
  if (kind == Kind::mbconvse) {
    const int64_t b = se_bottleneck();
    count += mid * b + b + b * mid + mid;  // two 1x1 transforms with biases
  }
  return count;
}

Tensor conv_init(const Shape& shape, Rng& rng) {
  const int fan_in = shape.c * shape.h * shape.w;
  return random_normal(shape, rng, 0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
}

void build_conv_bn(ParamStore& store, const std::string& prefix, int c_in, int c_out,
                   int k, int groups, Rng& rng) {
  if (c_in % groups != 0) {
    throw ValidationError("conv_bn: groups " + std::to_string(groups) +
                          " does not divide input channels " + std::to_string(c_in));
  }
  store.add(prefix + ".weight", conv_init(Shape{c_out, c_in / groups, k, k}, rng));
  store.add(prefix + ".bn.gamma", Tensor::full(Shape{1, c_out, 1, 1}, 1.0f));
  store.add(prefix + ".bn.beta", Tensor(Shape{1, c_out, 1, 1}));
  store.add(prefix + ".bn.running_mean", Tensor(Shape{1, c_out, 1, 1}), /*trainable=*/false);
  store.add(prefix + ".bn.running_var", Tensor::full(Shape{1, c_out, 1, 1}, 1.0f),
            /*trainable=*/false);
}

Var conv_bn_act(Ctx& ctx, const Var& x, const std::string& prefix, int stride, int groups,
                std::optional<kernels::Act> act, const std::string& label) {
  Var w = ctx.param(prefix + ".weight");
  const int k = w.value.shape().h;
  Var y = autodiff::conv2d(ctx, x, w, nullptr, stride, k / 2, groups, label);
  y = autodiff::batchnorm(ctx, y, prefix + ".bn", 0.1f, 1e-5f, label);
  if (act) y = autodiff::activation(ctx, y, *act, label);
  return y;
}

void build_se(ParamStore& store, const std::string& prefix, int c, int r, Rng& rng) {
  const int b = (c + r - 1) / r;
  store.add(prefix + ".fc1.weight", conv_init(Shape{b, c, 1, 1}, rng));
  store.add(prefix + ".fc1.bias", Tensor(Shape{1, b, 1, 1}));
  store.add(prefix + ".fc2.weight", conv_init(Shape{c, b, 1, 1}, rng));
  store.add(prefix + ".fc2.bias", Tensor(Shape{1, c, 1, 1}));
}

Var se_unit(Ctx& ctx, const Var& x, const std::string& prefix, const std::string& label) {
  Var squeezed = autodiff::global_avg_pool(ctx, x, label);
  Var w1 = ctx.param(prefix + ".fc1.weight");
  Var b1 = ctx.param(prefix + ".fc1.bias");
  Var g = autodiff::conv2d(ctx, squeezed, w1, &b1, 1, 0, 1, label);
  g = autodiff::activation(ctx, g, kernels::Act::swish, label);
  Var w2 = ctx.param(prefix + ".fc2.weight");
  Var b2 = ctx.param(prefix + ".fc2.bias");
  g = autodiff::conv2d(ctx, g, w2, &b2, 1, 0, 1, label);
  g = autodiff::activation(ctx, g, kernels::Act::sigmoid, label);
  return autodiff::scale_channels(ctx, x, g, label);
}

void build_block(ParamStore& store, const std::string& prefix, const BlockSpec& spec,
                 Rng& rng) {
  spec.validate();
  if (spec.kind == BlockSpec::Kind::pointwise) {
    build_conv_bn(store, prefix, spec.c_in, spec.c_out, 1, 1, rng);
    return;
  }
  const int mid = spec.expanded();
  if (spec.t > 1) build_conv_bn(store, prefix + ".expand", spec.c_in, mid, 1, 1, rng);
  build_conv_bn(store, prefix + ".dw", mid, mid, spec.k, mid, rng);
  if (spec.kind == BlockSpec::Kind::mbconvse) {
    build_se(store, prefix + ".se", mid, spec.r, rng);
  }
  build_conv_bn(store, prefix + ".project", mid, spec.c_out, 1, 1, rng);
}

Var forward_block(Ctx& ctx, const Var& x, const std::string& prefix, const BlockSpec& spec) {
  spec.validate();
  if (x.value.shape().c != spec.c_in) {
    throw ValidationError("block " + prefix + ": input has " +
                          std::to_string(x.value.shape().c) + " channels, spec expects " +
                          std::to_string(spec.c_in));
  }
  if (spec.kind == BlockSpec::Kind::pointwise) {
    return conv_bn_act(ctx, x, prefix, 1, 1, kernels::Act::relu6, prefix);
  }
  Var y = x;
  if (spec.t > 1) {
    y = conv_bn_act(ctx, y, prefix + ".expand", 1, 1, kernels::Act::relu6,
                    prefix + ".expand");
  }
  y = conv_bn_act(ctx, y, prefix + ".dw", spec.s, spec.expanded(), kernels::Act::relu6,
                  prefix + ".dw");
  if (spec.kind == BlockSpec::Kind::mbconvse) {
    y = se_unit(ctx, y, prefix + ".se", prefix + ".se");
  }
  y = conv_bn_act(ctx, y, prefix + ".project", 1, 1, std::nullopt, prefix + ".project");
  if (spec.has_residual()) {
    y = autodiff::add(ctx, x, y, prefix + ".residual");
  }
  return y;
}

}  // namespace yoloret::blocks
