// Reverse-mode differentiation over a flat tape. Forward execution appends
// nodes in topological order; backward walks the tape in reverse, so no
// explicit graph sort is needed. Ops come in one flavor that serves both
// inference and training: pass a null tape and nothing is recorded.
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "yoloret/kernels.hpp"
#include "yoloret/params.hpp"
#include "yoloret/tensor.hpp"
#include "yoloret/trace.hpp"

namespace yoloret::autodiff {

class Tape;

// A tensor plus its position on the tape. Untracked vars (node < 0) flow
// through ops but never receive gradients.
struct Var {
  Tensor value;
  Tape* tape = nullptr;
  int node = -1;

  bool tracked() const { return tape != nullptr && node >= 0; }
};

class Tape {
 public:
  int add_leaf(const Shape& shape);
  int add_node(const Shape& shape, std::function<void(const Tensor&, Tape&)> backward);

  // Accumulates into a node's gradient slot; only meaningful during backward().
  void accumulate(int node, const Tensor& grad);

  // Seeds the scalar root with 1 and propagates through every recorded node.
  void backward(const Var& root);

  bool has_grad(int node) const;
  // Gradient of the last backward() w.r.t. the node; zeros if it never
  // received one (e.g. an unreachable leaf).
  Tensor grad(int node, const Shape& shape) const;

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Shape shape{0, 0, 0, 0};
    std::function<void(const Tensor&, Tape&)> backward;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

// Everything a forward pass needs: the parameter store, an optional tape for
// gradients, an optional trace for op accounting, and the train/infer switch
// (which decides batchnorm statistics and running-stat updates).
class Ctx {
 public:
  Ctx(ParamStore& store, Tape* tape, Trace* trace, bool training)
      : store_(&store), tape_(tape), trace_(trace), training_(training) {}

  // Leaf bound to a named parameter; repeated calls reuse the same tape node.
  Var param(const std::string& name);
  // Leaf for network input; tracked so input gradients are testable.
  Var input(const Tensor& t);
  // Untracked value (labels, masks, fixed tensors).
  Var constant(const Tensor& t) { return Var{t, nullptr, -1}; }

  ParamStore& store() { return *store_; }
  Tape* tape() { return tape_; }
  Trace* trace() { return trace_; }
  bool training() const { return training_; }

  // Batchnorm running-statistics update rate for this context. Training steps
  // keep the default; a statistics refresh pass dials it per image.
  float bn_momentum() const { return bn_momentum_; }
  void set_bn_momentum(float m) { bn_momentum_ = m; }

  // Gradients for every parameter touched by this context, keyed by name.
  // Parameters that never received a gradient map to zero tensors.
  std::map<std::string, Tensor> param_grads() const;
  const std::unordered_map<std::string, int>& param_leaves() const { return leaf_cache_; }

 private:
  ParamStore* store_;
  Tape* tape_;
  Trace* trace_;
  bool training_;
  std::unordered_map<std::string, int> leaf_cache_;
};

Var conv2d(Ctx& c, const Var& x, const Var& w, const Var* bias, int stride, int padding,
           int groups, const std::string& label = "conv2d");
// Reads gamma/beta and running statistics under `prefix` from the store; in
// training mode also writes the updated running statistics back.
Var batchnorm(Ctx& c, const Var& x, const std::string& prefix, float momentum = 0.1f,
              float eps = 1e-5f, const std::string& label = "batchnorm");
Var activation(Ctx& c, const Var& x, kernels::Act kind,
               const std::string& label = "activation");
Var resize(Ctx& c, const Var& x, int factor, kernels::ResizeDir dir,
           const std::string& label = "resize");
// weights is a (1,k,1,1) tensor of raw fusion coefficients, one per input.
Var weighted_fusion(Ctx& c, const std::vector<Var>& xs, const Var& weights, float eps,
                    const std::string& label = "weighted_fusion");
Var add(Ctx& c, const Var& a, const Var& b, const std::string& label = "add");
Var mul(Ctx& c, const Var& a, const Var& b, const std::string& label = "mul");
Var global_avg_pool(Ctx& c, const Var& x, const std::string& label = "global_avg_pool");
Var scale_channels(Ctx& c, const Var& x, const Var& gate,
                   const std::string& label = "scale_channels");
Var concat(Ctx& c, const std::vector<Var>& xs, const std::string& label = "concat");
Var sum_to_scalar(Ctx& c, const Var& x, const std::string& label = "sum");

}  // namespace yoloret::autodiff
