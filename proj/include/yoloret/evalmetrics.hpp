#pragma once

#include <utility>
#include <vector>

#include "yoloret/detect.hpp"
#include "yoloret/geometry.hpp"

namespace yoloret {
namespace evalmetrics {

struct GroundTruth {
  geometry::Box box;
  int class_id = 0;
  // excluded from the positive count; detections matching one are neither
  // rewarded nor penalized
  bool difficult = false;
};

// one image's predictions next to its annotations, boxes in source coordinates
struct ImageEval {
  std::vector<detect::Detection> detections;
  std::vector<GroundTruth> ground_truth;
};

enum class MatchLabel { tp, fp, ignored };

// Greedy matcher for a single image and a single class slice. Detections are
// taken in confidence-descending order (ties keep input order); each claims
// the highest-IoU unmatched non-difficult ground truth at or above the
// threshold. Detections that only reach a difficult box are ignored.
// Returns one label per detection, in input order.
std::vector<MatchLabel> match_detections(const std::vector<detect::Detection>& dets,
                                         const std::vector<GroundTruth>& gts,
                                         float iou_thresh);

struct PRPoint {
  float recall = 0.0f;
  float precision = 0.0f;
};

// (confidence, is_true_positive) pairs for every counted detection of one
// class, any order. Ignored detections must already be dropped.
using ScoredLabel = std::pair<float, bool>;

// All-point interpolated area under the precision-recall curve. The curve is
// sampled at distinct confidence cuts, which makes the result independent of
// how equal-confidence detections are ordered across images.
float average_precision(std::vector<ScoredLabel> scored, int n_positives);

struct ClassAp {
  int class_id = 0;
  float ap = 0.0f;
  int n_positives = 0;
};

struct VocResult {
  std::vector<ClassAp> per_class;  // every class present in the ground truth
  float map = 0.0f;                // mean over classes with at least one positive
};

VocResult evaluate_voc(const std::vector<ImageEval>& images, float iou_thresh = 0.5f);

struct CocoResult {
  // -1 marks an area bucket with no ground truth anywhere in the dataset
  float ap = 0.0f;
  float ap50 = 0.0f;
  float ap75 = 0.0f;
  float ap_small = -1.0f;
  float ap_medium = -1.0f;
  float ap_large = -1.0f;
};

CocoResult evaluate_coco(const std::vector<ImageEval>& images);

}  // namespace evalmetrics
}  // namespace yoloret
