#pragma once

#include <optional>
#include <vector>

#include "yoloret/tensor.hpp"

// Dense kernels shared by every block in the model. All reductions accumulate
// in double with a fixed order (channel, then kernel row, then kernel column),
// so results are reproducible bit-for-bit across runs.
namespace yoloret::kernels {

struct ConvParams {
  Tensor weight;               // (c_out, c_in/groups, k, k)
  std::optional<Tensor> bias;  // (1, c_out, 1, 1)
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

Shape conv2d_out_shape(const Shape& in, const ConvParams& p);

// Cross-correlation (no kernel flip) plus optional bias.
Tensor conv2d(const Tensor& input, const ConvParams& p);

struct ConvGrads {
  Tensor d_input;
  Tensor d_weight;
  std::optional<Tensor> d_bias;
};
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

enum class BnMode { infer, train };

struct BnResult {
  Tensor out;
  // train mode only; variances are biased (1/N).
  Tensor batch_mean;
  Tensor batch_var;
  Tensor new_running_mean;
  Tensor new_running_var;
};

// gamma/beta/running stats are (1, c, 1, 1) tensors.
BnResult batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   const Tensor& running_mean, const Tensor& running_var,
                   BnMode mode, float momentum, float eps);

struct BnGrads {
  Tensor d_input;
  Tensor d_gamma;
  Tensor d_beta;
};
BnGrads batchnorm_infer_backward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& running_mean, const Tensor& running_var,
                                 float eps, const Tensor& grad_out);
// Gradients flow through the batch statistics.
BnGrads batchnorm_train_backward(const Tensor& x, const Tensor& gamma,
                                 const Tensor& batch_mean, const Tensor& batch_var,
                                 float eps, const Tensor& grad_out);

enum class Act { relu6, sigmoid, swish };
Tensor activation(const Tensor& x, Act kind);
Tensor activation_backward(const Tensor& x, Act kind, const Tensor& grad_out);

enum class ResizeDir { up, down };

// up: nearest-neighbor replication; down: average pooling with
// window == stride == factor. Factor must be a power of two.
Tensor resize(const Tensor& x, int factor, ResizeDir dir);
Tensor resize_backward(const Shape& in_shape, int factor, ResizeDir dir, const Tensor& grad_out);

// out = sum_i w_hat_i * x_i with w_hat_i = max(w_i,0) / (sum_j max(w_j,0) + eps).
Tensor weighted_fusion(const std::vector<Tensor>& inputs, const std::vector<float>& weights, float eps);

struct FusionGrads {
  std::vector<Tensor> d_inputs;
  std::vector<float> d_weights;
};
FusionGrads weighted_fusion_backward(const std::vector<Tensor>& inputs,
                                     const std::vector<float>& weights, float eps,
                                     const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& in_shape, const Tensor& grad_out);

Tensor eltwise_add(const Tensor& a, const Tensor& b);
Tensor eltwise_mul(const Tensor& a, const Tensor& b);

Tensor concat_channels(const std::vector<Tensor>& xs);
std::vector<Tensor> split_channels(const std::vector<Shape>& shapes, const Tensor& grad_out);

// Per-channel gate broadcast over the spatial dims; gate is (n, c, 1, 1).
Tensor scale_channels(const Tensor& x, const Tensor& gate);
struct ScaleGrads {
  Tensor d_input;
  Tensor d_gate;
};
ScaleGrads scale_channels_backward(const Tensor& x, const Tensor& gate, const Tensor& grad_out);

Tensor sum_to_scalar(const Tensor& x);

// MAC count of one conv layer: c_out * (c_in/groups) * k^2 * h_out * w_out.
int64_t conv2d_macs(const Shape& in, const ConvParams& p);

}  // namespace yoloret::kernels
