// Detection neck and head: squeeze-excite PANet aggregation over three
// scales, the 1x1 prediction head, anchor-based box decoding, greedy NMS,
// and letterbox preprocessing with its inverse coordinate map.
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "yoloret/autodiff.hpp"
#include "yoloret/backbone.hpp"
#include "yoloret/blocks.hpp"
#include "yoloret/geometry.hpp"

namespace yoloret::detect {

struct Anchor {
  float w = 0.0f;
  float h = 0.0f;
};

// The YOLOv3 prior triplets (defined at 416px), scaled to `resolution`,
// finest scale first.
std::vector<std::vector<Anchor>> default_anchors(int resolution);

struct PanetConfig {
  std::vector<int> strides = {8, 16, 32};
  std::map<int, int> widths = {{8, 64}, {16, 96}, {32, 128}};
  // MBConvSE shape shared by every aggregation block
  int t = 1;
  int k = 3;
  int r = 4;

  void validate() const;
};

// Parameter layout per scale s: in.s{s} (entry MBConvSE, feeding the
// top-down pass), mid.s{s} (MBConvSE feeding the bottom-up pass), plus one
// 1x1 conv per cross connection: td.s{fine} and bu.s{coarse}.
void build_panet(ParamStore& store, const std::string& prefix, const PanetConfig& cfg,
                 const std::map<int, int>& stride_channels, Rng& rng);

backbone::FeaturePyramid panet_forward(autodiff::Ctx& ctx,
                                       const backbone::FeaturePyramid& pyramid,
                                       const PanetConfig& cfg, const std::string& prefix);

struct HeadConfig {
  int num_classes = 20;
  int anchors_per_scale = 3;

  // t_x, t_y, t_w, t_h, objectness, then one logit per class, per anchor
  int channels() const { return anchors_per_scale * (5 + num_classes); }
  void validate() const;
};

void build_yolo_head(ParamStore& store, const std::string& prefix, const HeadConfig& cfg,
                     const PanetConfig& panet, Rng& rng);

// One raw prediction per pyramid level, in pyramid (fine-to-coarse) order.
std::vector<autodiff::Var> yolo_head_forward(autodiff::Ctx& ctx,
                                             const backbone::FeaturePyramid& pyramid,
                                             const HeadConfig& cfg,
                                             const std::string& prefix);

struct Detection {
  geometry::Box box;
  int class_id = 0;
  float confidence = 0.0f;
};

// Decodes every cell and anchor of every scale, keeps detections whose
// objectness * best-class probability reaches conf_thresh, and clips boxes
// to the image. Raw tensors must be batch-1 and agree on the image size.
std::vector<Detection> decode(const std::vector<Tensor>& raw,
                              const std::vector<int>& strides,
                              const std::vector<std::vector<Anchor>>& anchors,
                              const HeadConfig& cfg, float conf_thresh);

// Greedy per-class suppression; ties broken by confidence, then class id,
// then input order. Output is sorted the same way.
std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_thresh);

struct LetterboxMap {
  float scale = 1.0f;  // source pixels * scale = letterbox pixels
  float pad_x = 0.0f;
  float pad_y = 0.0f;
  int source_w = 0;
  int source_h = 0;
};

// Aspect-preserving nearest resize onto a target x target canvas, padded
// with mid-gray. Target must be divisible by 32.
std::pair<Tensor, LetterboxMap> letterbox(const Tensor& image, int target);

// Maps a letterbox-frame box back to source pixels, clipped to the source.
geometry::Box to_source_frame(const LetterboxMap& map, const geometry::Box& box);

}  // namespace yoloret::detect
