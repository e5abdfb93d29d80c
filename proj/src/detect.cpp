#include "yoloret/detect.hpp"

#include <algorithm>
#include <cmath>

#include "yoloret/rfcr.hpp"

namespace yoloret::detect {

using autodiff::Ctx;
using autodiff::Var;
using backbone::FeaturePyramid;
using geometry::Box;

std::vector<std::vector<Anchor>> default_anchors(int resolution) {
  if (resolution < 1) throw ValidationError("anchors: resolution must be positive");
  const float s = static_cast<float>(resolution) / 416.0f;
  const std::vector<std::vector<Anchor>> base{
      {{10, 13}, {16, 30}, {33, 23}},
      {{30, 61}, {62, 45}, {59, 119}},
      {{116, 90}, {156, 198}, {373, 326}},
  };
  std::vector<std::vector<Anchor>> out;
  for (const auto& group : base) {
    std::vector<Anchor> g;
    for (const Anchor& a : group) g.push_back(Anchor{a.w * s, a.h * s});
    out.push_back(std::move(g));
  }
  return out;
}

void PanetConfig::validate() const {
  if (strides.size() < 2) throw ValidationError("panet: needs at least two scales");
  for (size_t i = 1; i < strides.size(); ++i) {
    if (strides[i] <= strides[i - 1]) {
      throw ValidationError("panet: strides must be strictly increasing");
    }
  }
  for (int s : strides) {
    if (!widths.count(s)) {
      throw ValidationError("panet: no width for stride " + std::to_string(s));
    }
    if (widths.at(s) < 1) throw ValidationError("panet: widths must be positive");
  }
  if (t < 1 || r < 1) throw ValidationError("panet: block expansion and reduction must be positive");
  if (k != 1 && k != 3 && k != 5) throw ValidationError("panet: unsupported kernel size");
}

namespace {

blocks::BlockSpec panet_block(const PanetConfig& cfg, int c_in, int c_out) {
  blocks::BlockSpec b;
  b.kind = blocks::BlockSpec::Kind::mbconvse;
  b.c_in = c_in;
  b.c_out = c_out;
  b.t = cfg.t;
  b.k = cfg.k;
  b.s = 1;
  b.r = cfg.r;
  return b;
}

std::string scale_key(const std::string& prefix, const char* stage, int stride) {
  return prefix + "." + stage + ".s" + std::to_string(stride);
}

}  // namespace

void build_panet(ParamStore& store, const std::string& prefix, const PanetConfig& cfg,
                 const std::map<int, int>& stride_channels, Rng& rng) {
  cfg.validate();
  for (int s : cfg.strides) {
    auto it = stride_channels.find(s);
    if (it == stride_channels.end()) {
      throw ValidationError("panet: no input channel count for stride " + std::to_string(s));
    }
    blocks::build_block(store, scale_key(prefix, "in", s),
                        panet_block(cfg, it->second, cfg.widths.at(s)), rng);
  }
  // top-down merges land on the finer scale of each adjacent pair
  for (size_t i = 0; i + 1 < cfg.strides.size(); ++i) {
    const int fine = cfg.strides[i], coarse = cfg.strides[i + 1];
    blocks::build_conv_bn(store, scale_key(prefix, "td", fine), cfg.widths.at(coarse),
                          cfg.widths.at(fine), 1, 1, rng);
  }
  for (int s : cfg.strides) {
    blocks::build_block(store, scale_key(prefix, "mid", s),
                        panet_block(cfg, cfg.widths.at(s), cfg.widths.at(s)), rng);
  }
  // bottom-up merges land on the coarser scale
  for (size_t i = 0; i + 1 < cfg.strides.size(); ++i) {
    const int fine = cfg.strides[i], coarse = cfg.strides[i + 1];
    blocks::build_conv_bn(store, scale_key(prefix, "bu", coarse), cfg.widths.at(fine),
                          cfg.widths.at(coarse), 1, 1, rng);
  }
}

FeaturePyramid panet_forward(Ctx& ctx, const FeaturePyramid& pyramid,
                             const PanetConfig& cfg, const std::string& prefix) {
  cfg.validate();
  if (pyramid.levels.size() != cfg.strides.size()) {
    throw ValidationError("panet: pyramid has " + std::to_string(pyramid.levels.size()) +
                          " scales, config expects " + std::to_string(cfg.strides.size()));
  }
  TraceSection section(ctx.trace(), "panet");

  // entry blocks feed the top-down pass
  std::map<int, Var> entered;
  for (int s : cfg.strides) {
    const std::string key = scale_key(prefix, "in", s);
    entered.emplace(s, blocks::forward_block(ctx, pyramid.at(s), key,
                                             panet_block(cfg, pyramid.at(s).value.shape().c,
                                                         cfg.widths.at(s))));
  }

  // top-down: coarsest feature flows toward the finest scale
  std::map<int, Var> top_down;
  for (size_t idx = cfg.strides.size(); idx-- > 0;) {
    const int s = cfg.strides[idx];
    Var v = entered.at(s);
    if (idx + 1 < cfg.strides.size()) {
      const int coarse = cfg.strides[idx + 1];
      const std::string key = scale_key(prefix, "td", s);
      Var carried = rfcr::resize_between_strides(ctx, top_down.at(coarse), coarse, s,
                                                 key + ".resize");
      carried = blocks::conv_bn_act(ctx, carried, key, 1, 1, std::nullopt, key);
      v = autodiff::add(ctx, v, carried, key + ".merge");
    }
    top_down.emplace(s, v);
  }

  // mid blocks feed the bottom-up pass
  std::map<int, Var> mid;
  for (int s : cfg.strides) {
    const std::string key = scale_key(prefix, "mid", s);
    mid.emplace(s, blocks::forward_block(ctx, top_down.at(s), key,
                                         panet_block(cfg, cfg.widths.at(s), cfg.widths.at(s))));
  }

  FeaturePyramid out;
  Var below = mid.at(cfg.strides[0]);
  out.add(cfg.strides[0], below);
  for (size_t idx = 1; idx < cfg.strides.size(); ++idx) {
    const int s = cfg.strides[idx];
    const int fine = cfg.strides[idx - 1];
    const std::string key = scale_key(prefix, "bu", s);
    Var carried = rfcr::resize_between_strides(ctx, below, fine, s, key + ".resize");
    carried = blocks::conv_bn_act(ctx, carried, key, 1, 1, std::nullopt, key);
    below = autodiff::add(ctx, mid.at(s), carried, key + ".merge");
    out.add(s, below);
  }
  return out;
}

void HeadConfig::validate() const {
  if (num_classes < 1) throw ValidationError("head: needs at least one class");
  if (anchors_per_scale < 1) throw ValidationError("head: needs at least one anchor per scale");
}

void build_yolo_head(ParamStore& store, const std::string& prefix, const HeadConfig& cfg,
                     const PanetConfig& panet, Rng& rng) {
  cfg.validate();
  // The prediction layer starts near zero so decoded boxes begin at their
  // anchors. Fan-in scaled init here produces logits of a few units, and
  // exp() of those yields boxes so oversized that the box loss gradient all
  // but vanishes; recovery then takes far longer than the whole schedule.
  for (int s : panet.strides) {
    const std::string key = scale_key(prefix, "out", s);
    store.add(key + ".weight",
              random_normal(Shape{cfg.channels(), panet.widths.at(s), 1, 1}, rng, 0.0, 0.01));
    store.add(key + ".bias", Tensor(Shape{1, cfg.channels(), 1, 1}));
  }
}

std::vector<Var> yolo_head_forward(Ctx& ctx, const FeaturePyramid& pyramid,
                                   const HeadConfig& cfg, const std::string& prefix) {
  cfg.validate();
  TraceSection section(ctx.trace(), "head");
  std::vector<Var> out;
  for (const auto& level : pyramid.levels) {
    const std::string key = scale_key(prefix, "out", level.stride);
    Var w = ctx.param(key + ".weight");
    Var b = ctx.param(key + ".bias");
    out.push_back(autodiff::conv2d(ctx, level.feature, w, &b, 1, 0, 1, key));
  }
  return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<Detection> decode(const std::vector<Tensor>& raw,
                              const std::vector<int>& strides,
                              const std::vector<std::vector<Anchor>>& anchors,
                              const HeadConfig& cfg, float conf_thresh) {
  cfg.validate();
  if (raw.size() != strides.size() || raw.size() != anchors.size()) {
    throw ValidationError("decode: got " + std::to_string(raw.size()) + " scales, " +
                          std::to_string(strides.size()) + " strides, " +
                          std::to_string(anchors.size()) + " anchor groups");
  }
  const int per_anchor = 5 + cfg.num_classes;

  int image_w = -1, image_h = -1;
  for (size_t i = 0; i < raw.size(); ++i) {
    const Shape& s = raw[i].shape();
    if (s.n != 1) throw ValidationError("decode: expected batch 1, got " + s.str());
    if (static_cast<int>(anchors[i].size()) != cfg.anchors_per_scale) {
      throw ValidationError("decode: scale " + std::to_string(i) + " has " +
                            std::to_string(anchors[i].size()) + " anchors, expected " +
                            std::to_string(cfg.anchors_per_scale));
    }
    if (s.c != cfg.channels()) {
      throw ValidationError("decode: scale " + std::to_string(i) + " has " +
                            std::to_string(s.c) + " channels, expected " +
                            std::to_string(cfg.channels()));
    }
    const int w = s.w * strides[i], h = s.h * strides[i];
    if (image_w == -1) {
      image_w = w;
      image_h = h;
    } else if (w != image_w || h != image_h) {
      throw ValidationError("decode: scales disagree on the image size");
    }
  }

  std::vector<Detection> out;
  for (size_t i = 0; i < raw.size(); ++i) {
    const Tensor& t = raw[i];
    const Shape& s = t.shape();
    const float stride = static_cast<float>(strides[i]);
    for (int a = 0; a < cfg.anchors_per_scale; ++a) {
      const Anchor& anchor = anchors[i][static_cast<size_t>(a)];
      if (anchor.w <= 0.0f || anchor.h <= 0.0f) {
        throw ValidationError("decode: anchors must have positive size");
      }
      const int c0 = a * per_anchor;
      for (int cy = 0; cy < s.h; ++cy) {
        for (int cx = 0; cx < s.w; ++cx) {
          const double bx = (sigmoid(t.at(0, c0 + 0, cy, cx)) + cx) * stride;
          const double by = (sigmoid(t.at(0, c0 + 1, cy, cx)) + cy) * stride;
          const double bw = anchor.w * std::exp(static_cast<double>(t.at(0, c0 + 2, cy, cx)));
          const double bh = anchor.h * std::exp(static_cast<double>(t.at(0, c0 + 3, cy, cx)));
          const double obj = sigmoid(t.at(0, c0 + 4, cy, cx));

          int best_class = 0;
          float best_logit = t.at(0, c0 + 5, cy, cx);
          for (int k = 1; k < cfg.num_classes; ++k) {
            const float logit = t.at(0, c0 + 5 + k, cy, cx);
            if (logit > best_logit) {
              best_logit = logit;
              best_class = k;
            }
          }
          const float conf = static_cast<float>(obj * sigmoid(best_logit));
          if (conf < conf_thresh) continue;

          Box b{static_cast<float>(bx - bw / 2), static_cast<float>(by - bh / 2),
                static_cast<float>(bx + bw / 2), static_cast<float>(by + bh / 2)};
          out.push_back(Detection{
              geometry::clip_box(b, static_cast<float>(image_w), static_cast<float>(image_h)),
              best_class, conf});
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_thresh) {
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[a].confidence != dets[b].confidence) {
      return dets[a].confidence > dets[b].confidence;
    }
    return dets[a].class_id < dets[b].class_id;
  });

  std::vector<Detection> kept;
  for (size_t idx : order) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && geometry::iou(k.box, d.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::pair<Tensor, LetterboxMap> letterbox(const Tensor& image, int target) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw ValidationError("letterbox: expected a (1,3,h,w) image, got " + s.str());
  }
  if (s.h < 1 || s.w < 1) throw ValidationError("letterbox: empty image");
  if (target < 32 || target % 32 != 0) {
    throw ValidationError("letterbox: target " + std::to_string(target) +
                          " must be a positive multiple of 32");
  }

  const double scale = std::min(static_cast<double>(target) / s.w,
                                static_cast<double>(target) / s.h);
  const int new_w = std::min(target, std::max(1, static_cast<int>(std::lround(s.w * scale))));
  const int new_h = std::min(target, std::max(1, static_cast<int>(std::lround(s.h * scale))));
  const int pad_x = (target - new_w) / 2;
  const int pad_y = (target - new_h) / 2;

  std::vector<float> buf(static_cast<size_t>(3) * target * target, 0.5f);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < new_h; ++y) {
      const int sy = std::min(s.h - 1, static_cast<int>((y + 0.5) * s.h / new_h));
      for (int x = 0; x < new_w; ++x) {
        const int sx = std::min(s.w - 1, static_cast<int>((x + 0.5) * s.w / new_w));
        buf[(static_cast<size_t>(c) * target + (y + pad_y)) * target + (x + pad_x)] =
            image.at(0, c, sy, sx);
      }
    }
  }
  LetterboxMap map{static_cast<float>(scale), static_cast<float>(pad_x),
                   static_cast<float>(pad_y), s.w, s.h};
  return {Tensor(Shape{1, 3, target, target}, std::move(buf)), map};
}

geometry::Box to_source_frame(const LetterboxMap& map, const geometry::Box& box) {
  if (map.scale <= 0.0f) throw ValidationError("letterbox: non-positive scale in map");
  Box out{(box.x1 - map.pad_x) / map.scale, (box.y1 - map.pad_y) / map.scale,
          (box.x2 - map.pad_x) / map.scale, (box.y2 - map.pad_y) / map.scale};
  return geometry::clip_box(out, static_cast<float>(map.source_w),
                            static_cast<float>(map.source_h));
}

}  // namespace yoloret::detect
