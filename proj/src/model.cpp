#include "yoloret/model.hpp"

#include <map>

#include "yoloret/common.hpp"

namespace yoloret {
namespace model {

void ModelSpec::validate() const {
  if (resolution < 32 || resolution % 32 != 0) {
    throw ValidationError("model resolution must be a positive multiple of 32");
  }
  if (alpha <= 0.0f) throw ValidationError("width multiplier must be positive");
  if (truncate_last < 0) throw ValidationError("truncate_last must be non-negative");
  if (num_classes < 1) throw ValidationError("need at least one class");
  rfcr.validate();
  panet.validate();
  if (rfcr.output_strides != panet.strides) {
    throw ValidationError("fusion output strides must match the aggregation strides");
  }
  if (!anchors.empty()) {
    if (anchors.size() != panet.strides.size()) {
      throw ValidationError("need one anchor group per output scale");
    }
    for (const auto& group : anchors) {
      if (group.empty() || group.size() != anchors[0].size()) {
        throw ValidationError("anchor groups must share one non-empty size");
      }
    }
  }
  if (conf_thresh < 0.0f || conf_thresh > 1.0f) {
    throw ValidationError("confidence threshold must lie in [0,1]");
  }
  if (nms_iou <= 0.0f || nms_iou > 1.0f) {
    throw ValidationError("suppression threshold must lie in (0,1]");
  }
}

DetectionModel::DetectionModel(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
  spec_.validate();

  backbone::BackboneSpec bb;
  bb.alpha = spec_.alpha;
  bb.tap_strides = spec_.rfcr.input_strides;
  plan_ = backbone::truncate_backbone(backbone::plan_backbone(bb), spec_.truncate_last);

  anchors_ = spec_.anchors.empty() ? detect::default_anchors(spec_.resolution)
                                   : spec_.anchors;
  head_.num_classes = spec_.num_classes;
  head_.anchors_per_scale = static_cast<int>(anchors_[0].size());

  Rng rng(seed);
  backbone::build_backbone(plan_, store_, rng);
  const std::map<int, int> taps = plan_.tap_channels();
  rfcr::build_rfcr(store_, "rfcr", spec_.rfcr, taps, rng);
  std::map<int, int> head_taps;
  for (int s : spec_.panet.strides) head_taps.emplace(s, taps.at(s));
  detect::build_panet(store_, "panet", spec_.panet, head_taps, rng);
  detect::build_yolo_head(store_, "head", head_, spec_.panet, rng);
}

std::vector<autodiff::Var> DetectionModel::forward(autodiff::Ctx& ctx,
                                                   const autodiff::Var& image) {
  backbone::FeaturePyramid taps = backbone::extract_pyramid(ctx, plan_, image);
  backbone::FeaturePyramid fused = rfcr::rfcr_forward(ctx, taps, spec_.rfcr, "rfcr");
  backbone::FeaturePyramid agg = detect::panet_forward(ctx, fused, spec_.panet, "panet");
  return detect::yolo_head_forward(ctx, agg, head_, "head");
}

std::vector<detect::Detection> DetectionModel::predict(const Tensor& source_image) {
  auto [boxed, map] = detect::letterbox(source_image, spec_.resolution);
  autodiff::Ctx ctx(store_, nullptr, nullptr, false);
  std::vector<autodiff::Var> raw = forward(ctx, ctx.input(boxed));
  std::vector<Tensor> values;
  values.reserve(raw.size());
  for (const auto& v : raw) values.push_back(v.value);

  auto dets = detect::nms(
      detect::decode(values, spec_.panet.strides, anchors_, head_, spec_.conf_thresh),
      spec_.nms_iou);
  for (auto& d : dets) d.box = detect::to_source_frame(map, d.box);
  return dets;
}

FlopsReport DetectionModel::flops() {
  Trace trace;
  autodiff::Ctx ctx(store_, nullptr, &trace, false);
  forward(ctx, ctx.input(Tensor(Shape{1, 3, spec_.resolution, spec_.resolution})));
  FlopsReport report;
  report.backbone = trace.section_macs("backbone");
  report.rfcr = trace.section_macs("rfcr");
  report.panet = trace.section_macs("panet");
  report.head = trace.section_macs("head");
  return report;
}

}  // namespace model
}  // namespace yoloret
