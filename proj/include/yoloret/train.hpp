// Toy training stack: anchor-target assignment, the composite detection loss
// (box GIoU + objectness/class cross-entropy) as a single differentiable
// node, cosine learning-rate decay, SGD with momentum, and the two-phase
// freeze-then-finetune loop.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "yoloret/autodiff.hpp"
#include "yoloret/detect.hpp"
#include "yoloret/evalmetrics.hpp"
#include "yoloret/model.hpp"

namespace yoloret {
namespace train {

struct TrainConfig {
  float lr_phase1 = 1e-3f;
  float lr_phase2 = 1e-4f;
  float lr_min = 0.0f;
  int epochs_phase1 = 0;
  int epochs_phase2 = 0;
  float momentum = 0.9f;
  float ignore_iou = 0.5f;
  float lambda_box = 0.05f;
  float lambda_obj = 1.0f;
  float lambda_cls = 0.5f;
  uint64_t seed = 0;

  void validate() const;
};

struct Positive {
  int scale = 0;  // index into strides
  int cell_x = 0;
  int cell_y = 0;
  int anchor = 0;
  int gt = 0;  // index into the ground-truth list
};

struct AnchorAssignment {
  std::vector<int> strides;
  std::vector<std::array<int, 2>> grid;  // (h, w) per scale
  int anchors_per_scale = 0;
  std::vector<Positive> positives;  // exactly one per ground truth, in order
  // Cells whose prior box already overlaps some truth well enough that a
  // confident prediction there should not be punished as background.
  // Indexed (a * h + y) * w + x per scale.
  std::vector<std::vector<uint8_t>> ignore;

  bool ignored(int scale, int anchor, int y, int x) const;
};

// Each truth goes to the anchor with the best width/height overlap
// (boxes compared centered at the origin, across every scale), in the cell
// holding its center. Throws when a center lies outside the image.
AnchorAssignment assign_anchors(const std::vector<evalmetrics::GroundTruth>& gts,
                                const std::vector<std::vector<detect::Anchor>>& anchors,
                                const std::vector<int>& strides, int image_w,
                                int image_h, float ignore_iou = 0.5f);

struct LossComponents {
  float total = 0.0f;
  float box = 0.0f;
  float obj = 0.0f;
  float cls = 0.0f;
};

// Scalar loss over the raw head outputs, recorded as one tape node with an
// analytic backward. Components come back lambda-weighted and normalized so
// they sum to the total.
autodiff::Var detection_loss(autodiff::Ctx& ctx, const std::vector<autodiff::Var>& raw,
                             const AnchorAssignment& assignment,
                             const std::vector<evalmetrics::GroundTruth>& gts,
                             const std::vector<std::vector<detect::Anchor>>& anchors,
                             const detect::HeadConfig& head, const TrainConfig& cfg,
                             LossComponents* components = nullptr);

float cosine_lr(int step, int total_steps, float lr_max, float lr_min);

struct SgdState {
  std::map<std::string, Tensor> velocity;
};

// v <- momentum * v + g; p <- p - lr * v. Non-trainable entries are ignored;
// frozen ones are skipped when skip_frozen is set.
void sgd_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
              SgdState& state, float lr, float momentum, bool skip_frozen);

struct TrainSample {
  Tensor image;  // (1,3,h,w) in [0,1], source frame
  std::vector<evalmetrics::GroundTruth> boxes;
};

struct StepRecord {
  int step = 0;
  float lr = 0.0f;
  float total = 0.0f;
  float box = 0.0f;
  float obj = 0.0f;
  float cls = 0.0f;
};

// Phase 1 trains only non-frozen parameters at the phase-1 rate, phase 2
// everything at the phase-2 rate, cosine decay within each phase, one image
// per step, dataset visited in order each epoch.
std::vector<StepRecord> train_two_phase(model::DetectionModel& m,
                                        const std::vector<TrainSample>& dataset,
                                        const TrainConfig& cfg);

void write_loss_csv(const std::vector<StepRecord>& curve, std::ostream& out);

}  // namespace train
}  // namespace yoloret
