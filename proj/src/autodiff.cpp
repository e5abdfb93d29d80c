#include "yoloret/autodiff.hpp"

#include "yoloret/common.hpp"

namespace yoloret::autodiff {

int Tape::add_leaf(const Shape& shape) {
  nodes_.push_back(Node{shape, {}});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::add_node(const Shape& shape, std::function<void(const Tensor&, Tape&)> backward) {
  nodes_.push_back(Node{shape, std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const Tensor& grad) {
  if (node < 0 || node >= size()) {
    throw ValidationError("tape: accumulate into invalid node " + std::to_string(node));
  }
  if (!(grad.shape() == nodes_[static_cast<size_t>(node)].shape)) {
    throw ValidationError("tape: gradient shape " + grad.shape().str() + " != node shape " +
                          nodes_[static_cast<size_t>(node)].shape.str());
  }
  auto& slot = grads_[static_cast<size_t>(node)];
  if (slot.has_value()) {
    slot = kernels::eltwise_add(*slot, grad);
  } else {
    slot = grad;
  }
}

void Tape::backward(const Var& root) {
  if (root.tape != this || root.node < 0) {
    throw ValidationError("tape: backward root is not recorded on this tape");
  }
  if (!(root.value.shape() == Shape{1, 1, 1, 1})) {
    throw ValidationError("tape: backward root must be scalar, got " +
                          root.value.shape().str());
  }
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[static_cast<size_t>(root.node)] = Tensor::full(Shape{1, 1, 1, 1}, 1.0f);
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const auto& slot = grads_[static_cast<size_t>(i)];
    if (slot.has_value() && nodes_[static_cast<size_t>(i)].backward) {
      nodes_[static_cast<size_t>(i)].backward(*slot, *this);
    }
  }
}

bool Tape::has_grad(int node) const {
  return node >= 0 && node < size() && grads_.size() == nodes_.size() &&
         grads_[static_cast<size_t>(node)].has_value();
}

Tensor Tape::grad(int node, const Shape& shape) const {
  if (has_grad(node)) return *grads_[static_cast<size_t>(node)];
  return Tensor(shape);
}

Var Ctx::param(const std::string& name) {
  const Tensor& value = store_->get(name);
  if (!tape_) return Var{value, nullptr, -1};
  auto it = leaf_cache_.find(name);
  if (it != leaf_cache_.end()) return Var{value, tape_, it->second};
  int node = tape_->add_leaf(value.shape());
  leaf_cache_[name] = node;
  return Var{value, tape_, node};
}

Var Ctx::input(const Tensor& t) {
  if (!tape_) return Var{t, nullptr, -1};
  return Var{t, tape_, tape_->add_leaf(t.shape())};
}

std::map<std::string, Tensor> Ctx::param_grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, node] : leaf_cache_) {
    out.emplace(name, tape_->grad(node, store_->get(name).shape()));
  }
  return out;
}

namespace {

void check_tape(Ctx& c, std::initializer_list<const Var*> vars) {
  for (const Var* v : vars) {
    if (v && v->tracked() && v->tape != c.tape()) {
      throw ValidationError("autodiff: variable recorded on a different tape");
    }
  }
}

void trace_op(Ctx& c, const char* kind, const std::string& label, const Shape& in,
              const Shape& out, int64_t macs = 0) {
  if (c.trace()) c.trace()->record(kind, label, in, out, macs);
}

}  // namespace

Var conv2d(Ctx& c, const Var& x, const Var& w, const Var* bias, int stride, int padding,
           int groups, const std::string& label) {
  check_tape(c, {&x, &w, bias});
  kernels::ConvParams p;
  p.weight = w.value;
  if (bias) p.bias = bias->value;
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  Tensor out = kernels::conv2d(x.value, p);
  trace_op(c, "conv2d", label, x.value.shape(), out.shape(),
           kernels::conv2d_macs(x.value.shape(), p));
  Tape* t = c.tape();
  const bool any = x.tracked() || w.tracked() || (bias && bias->tracked());
  if (!t || !any) return Var{out, nullptr, -1};
  const int xn = x.tracked() ? x.node : -1;
  const int wn = w.tracked() ? w.node : -1;
  const int bn = (bias && bias->tracked()) ? bias->node : -1;
  const Tensor xv = x.value;
  int node = t->add_node(out.shape(), [xv, p, xn, wn, bn](const Tensor& go, Tape& tape) {
    kernels::ConvGrads g = kernels::conv2d_backward(xv, p, go);
    if (xn >= 0) tape.accumulate(xn, g.d_input);
    if (wn >= 0) tape.accumulate(wn, g.d_weight);
    if (bn >= 0 && g.d_bias) tape.accumulate(bn, *g.d_bias);
  });
  return Var{out, t, node};
}

Var batchnorm(Ctx& c, const Var& x, const std::string& prefix, float momentum, float eps,
              const std::string& label) {
  Var gamma = c.param(prefix + ".gamma");
  Var beta = c.param(prefix + ".beta");
  Tensor rm = c.store().get(prefix + ".running_mean");
  Tensor rv = c.store().get(prefix + ".running_var");
  check_tape(c, {&x, &gamma, &beta});
  const auto mode = c.training() ? kernels::BnMode::train : kernels::BnMode::infer;
  auto r = kernels::batchnorm(x.value, gamma.value, beta.value, rm, rv, mode, momentum, eps);
  if (c.training()) {
    c.store().set(prefix + ".running_mean", r.new_running_mean);
    c.store().set(prefix + ".running_var", r.new_running_var);
  }
  trace_op(c, "batchnorm", label, x.value.shape(), r.out.shape());
  Tape* t = c.tape();
  const bool any = x.tracked() || gamma.tracked() || beta.tracked();
  if (!t || !any) return Var{r.out, nullptr, -1};
  const int xn = x.tracked() ? x.node : -1;
  const int gn = gamma.tracked() ? gamma.node : -1;
  const int bn = beta.tracked() ? beta.node : -1;
  const Tensor xv = x.value;
  const Tensor gv = gamma.value;
  std::function<void(const Tensor&, Tape&)> bwd;
  if (c.training()) {
    const Tensor bm = r.batch_mean;
    const Tensor bv = r.batch_var;
    bwd = [xv, gv, bm, bv, eps, xn, gn, bn](const Tensor& go, Tape& tape) {
      kernels::BnGrads g = kernels::batchnorm_train_backward(xv, gv, bm, bv, eps, go);
      if (xn >= 0) tape.accumulate(xn, g.d_input);
      if (gn >= 0) tape.accumulate(gn, g.d_gamma);
      if (bn >= 0) tape.accumulate(bn, g.d_beta);
    };
  } else {
    bwd = [xv, gv, rm, rv, eps, xn, gn, bn](const Tensor& go, Tape& tape) {
      kernels::BnGrads g = kernels::batchnorm_infer_backward(xv, gv, rm, rv, eps, go);
      if (xn >= 0) tape.accumulate(xn, g.d_input);
      if (gn >= 0) tape.accumulate(gn, g.d_gamma);
      if (bn >= 0) tape.accumulate(bn, g.d_beta);
    };
  }
  int node = t->add_node(r.out.shape(), std::move(bwd));
  return Var{r.out, t, node};
}

Var activation(Ctx& c, const Var& x, kernels::Act kind, const std::string& label) {
  check_tape(c, {&x});
  Tensor out = kernels::activation(x.value, kind);
  trace_op(c, "activation", label, x.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || !x.tracked()) return Var{out, nullptr, -1};
  const int xn = x.node;
  const Tensor xv = x.value;
  int node = t->add_node(out.shape(), [xv, kind, xn](const Tensor& go, Tape& tape) {
    tape.accumulate(xn, kernels::activation_backward(xv, kind, go));
  });
  return Var{out, t, node};
}

Var resize(Ctx& c, const Var& x, int factor, kernels::ResizeDir dir,
           const std::string& label) {
  check_tape(c, {&x});
  Tensor out = kernels::resize(x.value, factor, dir);
  trace_op(c, "resize", label, x.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || !x.tracked()) return Var{out, nullptr, -1};
  const int xn = x.node;
  const Shape xs = x.value.shape();
  int node = t->add_node(out.shape(), [xs, factor, dir, xn](const Tensor& go, Tape& tape) {
    tape.accumulate(xn, kernels::resize_backward(xs, factor, dir, go));
  });
  return Var{out, t, node};
}

Var weighted_fusion(Ctx& c, const std::vector<Var>& xs, const Var& weights, float eps,
                    const std::string& label) {
  if (xs.empty()) throw ValidationError("weighted_fusion: empty input list");
  const Shape ws = weights.value.shape();
  if (ws.n != 1 || ws.h != 1 || ws.w != 1 || ws.c != static_cast<int>(xs.size())) {
    throw ValidationError("weighted_fusion: weight tensor shape " + ws.str() +
                          " does not match " + std::to_string(xs.size()) + " inputs");
  }
  for (const auto& v : xs) check_tape(c, {&v});
  check_tape(c, {&weights});

  std::vector<Tensor> values;
  std::vector<float> raw(static_cast<size_t>(ws.c));
  for (const auto& v : xs) values.push_back(v.value);
  for (int i = 0; i < ws.c; ++i) raw[static_cast<size_t>(i)] = weights.value.data()[i];

  Tensor out = kernels::weighted_fusion(values, raw, eps);
  trace_op(c, "weighted_fusion", label, values[0].shape(), out.shape());
  Tape* t = c.tape();
  bool any = weights.tracked();
  for (const auto& v : xs) any = any || v.tracked();
  if (!t || !any) return Var{out, nullptr, -1};

  std::vector<int> input_nodes;
  for (const auto& v : xs) input_nodes.push_back(v.tracked() ? v.node : -1);
  const int wn = weights.tracked() ? weights.node : -1;
  int node = t->add_node(
      out.shape(), [values, raw, eps, input_nodes, wn, ws](const Tensor& go, Tape& tape) {
        kernels::FusionGrads g = kernels::weighted_fusion_backward(values, raw, eps, go);
        for (size_t i = 0; i < input_nodes.size(); ++i) {
          if (input_nodes[i] >= 0) tape.accumulate(input_nodes[i], g.d_inputs[i]);
        }
        if (wn >= 0) tape.accumulate(wn, Tensor(ws, std::vector<float>(g.d_weights)));
      });
  return Var{out, t, node};
}

Var add(Ctx& c, const Var& a, const Var& b, const std::string& label) {
  check_tape(c, {&a, &b});
  Tensor out = kernels::eltwise_add(a.value, b.value);
  trace_op(c, "add", label, a.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || (!a.tracked() && !b.tracked())) return Var{out, nullptr, -1};
  const int an = a.tracked() ? a.node : -1;
  const int bn = b.tracked() ? b.node : -1;
  int node = t->add_node(out.shape(), [an, bn](const Tensor& go, Tape& tape) {
    if (an >= 0) tape.accumulate(an, go);
    if (bn >= 0) tape.accumulate(bn, go);
  });
  return Var{out, t, node};
}

Var mul(Ctx& c, const Var& a, const Var& b, const std::string& label) {
  check_tape(c, {&a, &b});
  Tensor out = kernels::eltwise_mul(a.value, b.value);
  trace_op(c, "mul", label, a.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || (!a.tracked() && !b.tracked())) return Var{out, nullptr, -1};
  const int an = a.tracked() ? a.node : -1;
  const int bn = b.tracked() ? b.node : -1;
  const Tensor av = a.value;
  const Tensor bv = b.value;
  int node = t->add_node(out.shape(), [an, bn, av, bv](const Tensor& go, Tape& tape) {
    if (an >= 0) tape.accumulate(an, kernels::eltwise_mul(go, bv));
    if (bn >= 0) tape.accumulate(bn, kernels::eltwise_mul(go, av));
  });
  return Var{out, t, node};
}

Var global_avg_pool(Ctx& c, const Var& x, const std::string& label) {
  check_tape(c, {&x});
  Tensor out = kernels::global_avg_pool(x.value);
  trace_op(c, "global_avg_pool", label, x.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || !x.tracked()) return Var{out, nullptr, -1};
  const int xn = x.node;
  const Shape xs = x.value.shape();
  int node = t->add_node(out.shape(), [xs, xn](const Tensor& go, Tape& tape) {
    tape.accumulate(xn, kernels::global_avg_pool_backward(xs, go));
  });
  return Var{out, t, node};
}

Var scale_channels(Ctx& c, const Var& x, const Var& gate, const std::string& label) {
  check_tape(c, {&x, &gate});
  Tensor out = kernels::scale_channels(x.value, gate.value);
  trace_op(c, "scale_channels", label, x.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || (!x.tracked() && !gate.tracked())) return Var{out, nullptr, -1};
  const int xn = x.tracked() ? x.node : -1;
  const int gn = gate.tracked() ? gate.node : -1;
  const Tensor xv = x.value;
  const Tensor gv = gate.value;
  int node = t->add_node(out.shape(), [xv, gv, xn, gn](const Tensor& go, Tape& tape) {
    kernels::ScaleGrads g = kernels::scale_channels_backward(xv, gv, go);
    if (xn >= 0) tape.accumulate(xn, g.d_input);
    if (gn >= 0) tape.accumulate(gn, g.d_gate);
  });
  return Var{out, t, node};
}

Var concat(Ctx& c, const std::vector<Var>& xs, const std::string& label) {
  if (xs.empty()) throw ValidationError("concat: empty input list");
  for (const auto& v : xs) check_tape(c, {&v});
  std::vector<Tensor> values;
  for (const auto& v : xs) values.push_back(v.value);
  Tensor out = kernels::concat_channels(values);
  trace_op(c, "concat", label, values[0].shape(), out.shape());
  Tape* t = c.tape();
  bool any = false;
  for (const auto& v : xs) any = any || v.tracked();
  if (!t || !any) return Var{out, nullptr, -1};
  std::vector<int> input_nodes;
  std::vector<Shape> shapes;
  for (const auto& v : xs) {
    input_nodes.push_back(v.tracked() ? v.node : -1);
    shapes.push_back(v.value.shape());
  }
  int node = t->add_node(out.shape(), [shapes, input_nodes](const Tensor& go, Tape& tape) {
    std::vector<Tensor> parts = kernels::split_channels(shapes, go);
    for (size_t i = 0; i < input_nodes.size(); ++i) {
      if (input_nodes[i] >= 0) tape.accumulate(input_nodes[i], parts[i]);
    }
  });
  return Var{out, t, node};
}

Var sum_to_scalar(Ctx& c, const Var& x, const std::string& label) {
  check_tape(c, {&x});
  Tensor out = kernels::sum_to_scalar(x.value);
  trace_op(c, "sum", label, x.value.shape(), out.shape());
  Tape* t = c.tape();
  if (!t || !x.tracked()) return Var{out, nullptr, -1};
  const int xn = x.node;
  const Shape xs = x.value.shape();
  int node = t->add_node(out.shape(), [xs, xn](const Tensor& go, Tape& tape) {
    tape.accumulate(xn, Tensor::full(xs, go.item()));
  });
  return Var{out, t, node};
}

}  // namespace yoloret::autodiff
