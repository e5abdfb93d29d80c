// Full detector assembly: truncated backbone taps feed the fusion module,
// whose outputs run through the aggregation neck into the prediction head.
// Wraps single-image prediction (letterbox in, source-frame boxes out) and
// per-stage compute accounting.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "yoloret/backbone.hpp"
#include "yoloret/detect.hpp"
#include "yoloret/rfcr.hpp"

namespace yoloret {
namespace model {

struct ModelSpec {
  int resolution = 320;
  float alpha = 0.75f;
  int truncate_last = 2;
  int num_classes = 20;
  rfcr::RfcrConfig rfcr = rfcr::default_rfcr_config();
  detect::PanetConfig panet;
  // One group per output scale, finest first; empty selects the reference
  // set scaled to the resolution.
  std::vector<std::vector<detect::Anchor>> anchors;
  float conf_thresh = 0.25f;
  float nms_iou = 0.45f;

  void validate() const;
};

struct FlopsReport {
  int64_t backbone = 0;
  int64_t rfcr = 0;
  int64_t panet = 0;
  int64_t head = 0;

  int64_t total() const { return backbone + rfcr + panet + head; }
};

class DetectionModel {
 public:
  DetectionModel(const ModelSpec& spec, uint64_t seed);

  // Raw per-scale head outputs, finest scale first.
  std::vector<autodiff::Var> forward(autodiff::Ctx& ctx, const autodiff::Var& image);

  // letterbox -> forward -> decode -> suppress -> map back to source coords.
  std::vector<detect::Detection> predict(const Tensor& source_image);

  // MAC counts from a traced forward pass at the configured resolution.
  FlopsReport flops();

  const ModelSpec& spec() const { return spec_; }
  const backbone::Backbone& backbone_plan() const { return plan_; }
  const detect::HeadConfig& head() const { return head_; }
  const std::vector<std::vector<detect::Anchor>>& anchors() const { return anchors_; }
  ParamStore& params() { return store_; }

 private:
  ModelSpec spec_;
  backbone::Backbone plan_;
  std::vector<std::vector<detect::Anchor>> anchors_;
  detect::HeadConfig head_;
  ParamStore store_;
};

}  // namespace model
}  // namespace yoloret
