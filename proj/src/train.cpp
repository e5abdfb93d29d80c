#include "yoloret/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "yoloret/common.hpp"
#include "yoloret/geometry.hpp"

namespace yoloret {
namespace train {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// numerically safe BCE against a sigmoid logit
double bce_logit(double z, double target) {
  return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}

double shape_iou(float w1, float h1, float w2, float h2) {
  const double inter = static_cast<double>(std::min(w1, w2)) * std::min(h1, h2);
  const double uni = static_cast<double>(w1) * h1 + static_cast<double>(w2) * h2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

constexpr float kSizeLogitClamp = 20.0f;

}  // namespace

void TrainConfig::validate() const {
  if (lr_phase1 <= 0.0f || lr_phase2 <= 0.0f) {
    throw ValidationError("learning rates must be positive");
  }
  if (lr_min < 0.0f) throw ValidationError("minimum learning rate must be non-negative");
  if (epochs_phase1 < 0 || epochs_phase2 < 0) {
    throw ValidationError("epoch counts must be non-negative");
  }
  if (momentum < 0.0f || momentum >= 1.0f) {
    throw ValidationError("momentum must lie in [0,1)");
  }
  if (ignore_iou <= 0.0f || ignore_iou > 1.0f) {
    throw ValidationError("ignore threshold must lie in (0,1]");
  }
  if (lambda_box < 0.0f || lambda_obj < 0.0f || lambda_cls < 0.0f) {
    throw ValidationError("loss weights must be non-negative");
  }
}

bool AnchorAssignment::ignored(int scale, int anchor, int y, int x) const {
  const auto [h, w] = grid[static_cast<size_t>(scale)];
  return ignore[static_cast<size_t>(scale)]
               [static_cast<size_t>((anchor * h + y) * w + x)] != 0;
}

AnchorAssignment assign_anchors(const std::vector<evalmetrics::GroundTruth>& gts,
                                const std::vector<std::vector<detect::Anchor>>& anchors,
                                const std::vector<int>& strides, int image_w,
                                int image_h, float ignore_iou) {
  if (strides.empty() || anchors.size() != strides.size()) {
    throw ValidationError("need one anchor group per scale");
  }
  const int per_scale = static_cast<int>(anchors[0].size());
  if (per_scale < 1) throw ValidationError("anchor groups must be non-empty");
  for (const auto& group : anchors) {
    if (static_cast<int>(group.size()) != per_scale) {
      throw ValidationError("anchor groups must share one size");
    }
  }

  AnchorAssignment out;
  out.strides = strides;
  out.anchors_per_scale = per_scale;
  for (int s : strides) {
    if (s < 1 || image_w % s != 0 || image_h % s != 0) {
      throw ValidationError("image size must be divisible by every stride");
    }
    out.grid.push_back({image_h / s, image_w / s});
    out.ignore.emplace_back(
        static_cast<size_t>(per_scale) * (image_h / s) * (image_w / s), 0);
  }

  for (size_t g = 0; g < gts.size(); ++g) {
    const geometry::Box& b = gts[g].box;
    const float cx = 0.5f * (b.x1 + b.x2);
    const float cy = 0.5f * (b.y1 + b.y2);
    if (cx < 0.0f || cx >= static_cast<float>(image_w) || cy < 0.0f ||
        cy >= static_cast<float>(image_h)) {
      throw ValidationError("ground-truth center lies outside the image");
    }
    const float gw = b.width();
    const float gh = b.height();
    int best_scale = 0;
    int best_anchor = 0;
    double best = -1.0;
    for (size_t s = 0; s < anchors.size(); ++s) {
      for (size_t a = 0; a < anchors[s].size(); ++a) {
        const double v = shape_iou(gw, gh, anchors[s][a].w, anchors[s][a].h);
        if (v > best) {
          best = v;
          best_scale = static_cast<int>(s);
          best_anchor = static_cast<int>(a);
        }
      }
    }
    const int stride = strides[static_cast<size_t>(best_scale)];
    out.positives.push_back(Positive{best_scale,
                                     static_cast<int>(cx / static_cast<float>(stride)),
                                     static_cast<int>(cy / static_cast<float>(stride)),
                                     best_anchor, static_cast<int>(g)});
  }

  // prior boxes pinned at cell centers that already cover some truth are
  // left out of the background term
  for (size_t s = 0; s < strides.size(); ++s) {
    const int stride = strides[s];
    const auto [h, w] = out.grid[s];
    for (int a = 0; a < per_scale; ++a) {
      const detect::Anchor& anchor = anchors[s][static_cast<size_t>(a)];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const float px = (static_cast<float>(x) + 0.5f) * static_cast<float>(stride);
          const float py = (static_cast<float>(y) + 0.5f) * static_cast<float>(stride);
          const geometry::Box prior{px - anchor.w / 2, py - anchor.h / 2,
                                    px + anchor.w / 2, py + anchor.h / 2};
          for (const auto& gt : gts) {
            if (geometry::iou(prior, gt.box) >= ignore_iou) {
              out.ignore[s][static_cast<size_t>((a * h + y) * w + x)] = 1;
              break;
            }
          }
        }
      }
    }
  }
  return out;
}

autodiff::Var detection_loss(autodiff::Ctx& ctx, const std::vector<autodiff::Var>& raw,
                             const AnchorAssignment& assignment,
                             const std::vector<evalmetrics::GroundTruth>& gts,
                             const std::vector<std::vector<detect::Anchor>>& anchors,
                             const detect::HeadConfig& head, const TrainConfig& cfg,
                             LossComponents* components) {
  head.validate();
  if (raw.size() != assignment.strides.size() || anchors.size() != raw.size()) {
    throw ValidationError("prediction scales disagree with the assignment");
  }
  const int per_anchor = 5 + head.num_classes;
  for (size_t s = 0; s < raw.size(); ++s) {
    const Shape& sh = raw[s].value.shape();
    const auto [h, w] = assignment.grid[s];
    if (sh.n != 1 || sh.c != head.channels() || sh.h != h || sh.w != w) {
      throw ValidationError("prediction tensor does not match the assignment grid");
    }
    if (static_cast<int>(anchors[s].size()) != head.anchors_per_scale) {
      throw ValidationError("anchor group size disagrees with the head");
    }
  }
  for (const auto& p : assignment.positives) {
    if (p.gt < 0 || p.gt >= static_cast<int>(gts.size())) {
      throw ValidationError("assignment refers to a missing ground truth");
    }
  }

  const double n = std::max<size_t>(1, assignment.positives.size());
  const double wbox = cfg.lambda_box / n;
  const double wobj = cfg.lambda_obj / n;
  const double wcls = cfg.lambda_cls / n;

  // positive lookup per (scale, anchor, y, x); later truths override earlier
  // ones when centers collide
  std::vector<std::map<int, int>> positive(raw.size());
  for (const auto& p : assignment.positives) {
    const auto [h, w] = assignment.grid[static_cast<size_t>(p.scale)];
    positive[static_cast<size_t>(p.scale)][(p.anchor * h + p.cell_y) * w + p.cell_x] =
        p.gt;
  }

  double box_sum = 0.0;
  double obj_sum = 0.0;
  double cls_sum = 0.0;
  std::vector<std::vector<float>> grads(raw.size());

  for (size_t s = 0; s < raw.size(); ++s) {
    const Tensor& t = raw[s].value;
    const auto [h, w] = assignment.grid[s];
    const int stride = assignment.strides[s];
    grads[s].assign(t.numel(), 0.0f);
    auto at = [&](int c, int y, int x) { return static_cast<double>(t.at(0, c, y, x)); };
    auto gslot = [&](int c, int y, int x) -> float& {
      return grads[s][(static_cast<size_t>(c) * h + y) * w + x];
    };

    for (int a = 0; a < head.anchors_per_scale; ++a) {
      const int c0 = a * per_anchor;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const auto hit = positive[s].find((a * h + y) * w + x);
          const double tobj = at(c0 + 4, y, x);
          if (hit == positive[s].end()) {
            if (!assignment.ignored(static_cast<int>(s), a, y, x)) {
              obj_sum += wobj * bce_logit(tobj, 0.0);
              gslot(c0 + 4, y, x) += static_cast<float>(wobj * sigmoid(tobj));
            }
            continue;
          }
          const evalmetrics::GroundTruth& gt = gts[static_cast<size_t>(hit->second)];

          obj_sum += wobj * bce_logit(tobj, 1.0);
          gslot(c0 + 4, y, x) += static_cast<float>(wobj * (sigmoid(tobj) - 1.0));

          for (int c = 0; c < head.num_classes; ++c) {
            const double z = at(c0 + 5 + c, y, x);
            const double target = c == gt.class_id ? 1.0 : 0.0;
            cls_sum += wcls * bce_logit(z, target);
            gslot(c0 + 5 + c, y, x) += static_cast<float>(wcls * (sigmoid(z) - target));
          }

          const double tx = at(c0 + 0, y, x);
          const double ty = at(c0 + 1, y, x);
          const double tw_raw = at(c0 + 2, y, x);
          const double th_raw = at(c0 + 3, y, x);
          const double tw = std::clamp(tw_raw, -double(kSizeLogitClamp),
                                       double(kSizeLogitClamp));
          const double th = std::clamp(th_raw, -double(kSizeLogitClamp),
                                       double(kSizeLogitClamp));
          const double sx = sigmoid(tx);
          const double sy = sigmoid(ty);
          const double bx = (sx + x) * stride;
          const double by = (sy + y) * stride;
          const double bw = anchors[s][static_cast<size_t>(a)].w * std::exp(tw);
          const double bh = anchors[s][static_cast<size_t>(a)].h * std::exp(th);
          const geometry::Box pred{static_cast<float>(bx - bw / 2),
                                   static_cast<float>(by - bh / 2),
                                   static_cast<float>(bx + bw / 2),
                                   static_cast<float>(by + bh / 2)};
          const geometry::GiouResult g = geometry::giou_with_grad(pred, gt.box);
          box_sum += wbox * (1.0 - g.value);

          // chain the corner gradients of -giou back to the four box logits
          const double dx1 = -wbox * g.d_a[0];
          const double dy1 = -wbox * g.d_a[1];
          const double dx2 = -wbox * g.d_a[2];
          const double dy2 = -wbox * g.d_a[3];
          const double dbx = dx1 + dx2;
          const double dby = dy1 + dy2;
          const double dbw = 0.5 * (dx2 - dx1);
          const double dbh = 0.5 * (dy2 - dy1);
          gslot(c0 + 0, y, x) += static_cast<float>(dbx * stride * sx * (1.0 - sx));
          gslot(c0 + 1, y, x) += static_cast<float>(dby * stride * sy * (1.0 - sy));
          if (tw_raw == tw) gslot(c0 + 2, y, x) += static_cast<float>(dbw * bw);
          if (th_raw == th) gslot(c0 + 3, y, x) += static_cast<float>(dbh * bh);
        }
      }
    }
  }

  const double total = box_sum + obj_sum + cls_sum;
  if (components) {
    components->total = static_cast<float>(total);
    components->box = static_cast<float>(box_sum);
    components->obj = static_cast<float>(obj_sum);
    components->cls = static_cast<float>(cls_sum);
  }

  const Shape scalar{1, 1, 1, 1};
  Tensor out(scalar, {static_cast<float>(total)});
  if (ctx.trace()) {
    ctx.trace()->record("detection_loss", "loss", raw[0].value.shape(), scalar, 0);
  }
  autodiff::Tape* tape = ctx.tape();
  if (!tape) return autodiff::Var{out, nullptr, -1};

  struct Hook {
    int node;
    Shape shape;
    std::vector<float> grad;
  };
  std::vector<Hook> hooks;
  for (size_t s = 0; s < raw.size(); ++s) {
    if (raw[s].tracked()) {
      hooks.push_back(Hook{raw[s].node, raw[s].value.shape(), std::move(grads[s])});
    }
  }
  const int node = tape->add_node(scalar, [hooks](const Tensor& go, autodiff::Tape& t) {
    const float scale = go.item();
    for (const Hook& h : hooks) {
      std::vector<float> scaled(h.grad.size());
      for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = h.grad[i] * scale;
      t.accumulate(h.node, Tensor(h.shape, std::move(scaled)));
    }
  });
  return autodiff::Var{out, tape, node};
}

float cosine_lr(int step, int total_steps, float lr_max, float lr_min) {
  if (total_steps == 0) throw ValidationError("schedule needs at least one step");
  if (step < 0 || step > total_steps) {
    throw ValidationError("schedule step out of range");
  }
  const double phase = M_PI * static_cast<double>(step) / total_steps;
  return static_cast<float>(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase)));
}

void sgd_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
              SgdState& state, float lr, float momentum, bool skip_frozen) {
  for (const auto& [name, grad] : grads) {
    if (!store.contains(name) || !store.is_trainable(name)) continue;
    if (skip_frozen && store.is_frozen(name)) continue;
    const Tensor& value = store.get(name);
    if (!(grad.shape() == value.shape())) {
      throw ValidationError("gradient shape mismatch for " + name);
    }
    auto it = state.velocity.find(name);
    if (it == state.velocity.end()) {
      it = state.velocity.emplace(name, Tensor(value.shape())).first;
    }
    std::vector<float> v(value.numel());
    std::vector<float> p(value.numel());
    const float* vel = it->second.data();
    const float* g = grad.data();
    const float* cur = value.data();
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum * vel[i] + g[i];
      p[i] = cur[i] - lr * v[i];
    }
    it->second = Tensor(value.shape(), std::move(v));
    store.set(name, Tensor(value.shape(), std::move(p)));
  }
}

std::vector<StepRecord> train_two_phase(model::DetectionModel& m,
                                        const std::vector<TrainSample>& dataset,
                                        const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ValidationError("training needs at least one sample");

  const int resolution = m.spec().resolution;
  SgdState state;
  std::vector<StepRecord> curve;
  int global_step = 0;

  auto run_phase = [&](int epochs, float lr_max, bool skip_frozen) {
    const int total_steps = epochs * static_cast<int>(dataset.size());
    if (total_steps == 0) return;
    int step_in_phase = 0;
    // Fixed visitation order: any window spanning whole epochs then averages
    // each image equally, so smoothed loss comparisons line up epoch over
    // epoch instead of bouncing with the draw.
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (size_t idx : order) {
        const TrainSample& sample = dataset[idx];
        auto [image, map] = detect::letterbox(sample.image, resolution);
        std::vector<evalmetrics::GroundTruth> boxes = sample.boxes;
        for (auto& gt : boxes) {
          gt.box = geometry::Box{gt.box.x1 * map.scale + map.pad_x,
                                 gt.box.y1 * map.scale + map.pad_y,
                                 gt.box.x2 * map.scale + map.pad_x,
                                 gt.box.y2 * map.scale + map.pad_y};
        }
        const AnchorAssignment assignment = assign_anchors(
            boxes, m.anchors(), m.spec().panet.strides, resolution, resolution,
            cfg.ignore_iou);

        autodiff::Tape tape;
        autodiff::Ctx ctx(m.params(), &tape, nullptr, true);
        std::vector<autodiff::Var> raw = m.forward(ctx, ctx.input(image));
        LossComponents parts;
        autodiff::Var loss = detection_loss(ctx, raw, assignment, boxes, m.anchors(),
                                            m.head(), cfg, &parts);
        tape.backward(loss);

        const float lr = cosine_lr(step_in_phase, total_steps, lr_max, cfg.lr_min);
        sgd_step(m.params(), ctx.param_grads(), state, lr, cfg.momentum, skip_frozen);
        curve.push_back(StepRecord{global_step, lr, parts.total, parts.box, parts.obj,
                                   parts.cls});
        ++global_step;
        ++step_in_phase;
      }
    }
  };

  run_phase(cfg.epochs_phase1, cfg.lr_phase1, true);
  run_phase(cfg.epochs_phase2, cfg.lr_phase2, false);
  return curve;
}

void write_loss_csv(const std::vector<StepRecord>& curve, std::ostream& out) {
  out << "step,lr,total,box,obj,cls\n";
  out << std::setprecision(9);
  for (const StepRecord& r : curve) {
    out << r.step << ',' << r.lr << ',' << r.total << ',' << r.box << ',' << r.obj << ','
        << r.cls << '\n';
  }
}

}  // namespace train
}  // namespace yoloret
