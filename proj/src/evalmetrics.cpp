#include "yoloret/evalmetrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>

namespace yoloret {
namespace evalmetrics {
namespace {

enum class Bucket { small, medium, large };

constexpr double kSmallMax = 32.0 * 32.0;
constexpr double kMediumMax = 96.0 * 96.0;

bool in_bucket(double area, Bucket b) {
  switch (b) {
    case Bucket::small:
      return area < kSmallMax;
    case Bucket::medium:
      return area >= kSmallMax && area <= kMediumMax;
    case Bucket::large:
      return area > kMediumMax;
  }
  return false;
}

// Scored labels and positive count for one class over the whole dataset.
// With a bucket filter, out-of-bucket ground truth acts as difficult and
// unmatched detections whose own area falls outside the bucket are dropped
// instead of counting as false positives.
std::pair<std::vector<ScoredLabel>, int> score_class(const std::vector<ImageEval>& images,
                                                     int class_id, float iou_thresh,
                                                     std::optional<Bucket> bucket) {
  std::vector<ScoredLabel> scored;
  int n_positives = 0;
  for (const ImageEval& image : images) {
    std::vector<detect::Detection> dets;
    for (const auto& d : image.detections) {
      if (d.class_id == class_id) dets.push_back(d);
    }
    std::vector<GroundTruth> gts;
    for (const auto& gt : image.ground_truth) {
      if (gt.class_id != class_id) continue;
      GroundTruth g = gt;
      if (bucket && !in_bucket(g.box.area(), *bucket)) g.difficult = true;
      if (!g.difficult) ++n_positives;
      gts.push_back(g);
    }
    const auto labels = match_detections(dets, gts, iou_thresh);
    for (size_t i = 0; i < dets.size(); ++i) {
      if (labels[i] == MatchLabel::ignored) continue;
      if (labels[i] == MatchLabel::fp && bucket &&
          !in_bucket(dets[i].box.area(), *bucket)) {
        continue;
      }
      scored.emplace_back(dets[i].confidence, labels[i] == MatchLabel::tp);
    }
  }
  return {std::move(scored), n_positives};
}

// mean AP over classes holding at least one counted ground truth; negative
// when no class qualifies
float map_at(const std::vector<ImageEval>& images, const std::set<int>& classes,
             float iou_thresh, std::optional<Bucket> bucket) {
  double sum = 0.0;
  int counted = 0;
  for (int c : classes) {
    auto [scored, n_pos] = score_class(images, c, iou_thresh, bucket);
    if (n_pos == 0) continue;
    sum += average_precision(std::move(scored), n_pos);
    ++counted;
  }
  return counted > 0 ? static_cast<float>(sum / counted) : -1.0f;
}

std::set<int> classes_present(const std::vector<ImageEval>& images) {
  std::set<int> classes;
  for (const ImageEval& image : images) {
    for (const auto& gt : image.ground_truth) classes.insert(gt.class_id);
  }
  return classes;
}

}  // namespace

std::vector<MatchLabel> match_detections(const std::vector<detect::Detection>& dets,
                                         const std::vector<GroundTruth>& gts,
                                         float iou_thresh) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });

  std::vector<bool> matched(gts.size(), false);
  std::vector<MatchLabel> labels(dets.size(), MatchLabel::fp);
  for (size_t idx : order) {
    const geometry::Box& box = dets[idx].box;
    int best = -1;
    float best_iou = 0.0f;
    bool hit_difficult = false;
    for (size_t g = 0; g < gts.size(); ++g) {
      const float overlap = geometry::iou(box, gts[g].box);
      if (overlap < iou_thresh) continue;
      if (gts[g].difficult) {
        hit_difficult = true;
        continue;
      }
      if (matched[g]) continue;
      if (best < 0 || overlap > best_iou) {
        best = static_cast<int>(g);
        best_iou = overlap;
      }
    }
    if (best >= 0) {
      labels[idx] = MatchLabel::tp;
      matched[static_cast<size_t>(best)] = true;
    } else if (hit_difficult) {
      labels[idx] = MatchLabel::ignored;
    }
  }
  return labels;
}

float average_precision(std::vector<ScoredLabel> scored, int n_positives) {
  if (n_positives <= 0 || scored.empty()) return 0.0f;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredLabel& a, const ScoredLabel& b) {
                     return a.first > b.first;
                   });

  // one PR point per distinct confidence cut, so equal-confidence detections
  // contribute as a group no matter how they were ordered
  std::vector<PRPoint> curve;
  int tp = 0;
  int fp = 0;
  for (size_t i = 0; i < scored.size(); ++i) {
    (scored[i].second ? tp : fp) += 1;
    if (i + 1 == scored.size() || scored[i + 1].first != scored[i].first) {
      curve.push_back(PRPoint{static_cast<float>(tp) / static_cast<float>(n_positives),
                              static_cast<float>(tp) / static_cast<float>(tp + fp)});
    }
  }

  // integrate under the monotone precision envelope
  double ap = 0.0;
  double envelope = 0.0;
  for (size_t i = curve.size(); i-- > 0;) {
    envelope = std::max(envelope, static_cast<double>(curve[i].precision));
    const double lo = i == 0 ? 0.0 : curve[i - 1].recall;
    ap += (curve[i].recall - lo) * envelope;
  }
  return static_cast<float>(ap);
}

VocResult evaluate_voc(const std::vector<ImageEval>& images, float iou_thresh) {
  VocResult out;
  double sum = 0.0;
  int counted = 0;
  for (int c : classes_present(images)) {
    auto [scored, n_pos] = score_class(images, c, iou_thresh, std::nullopt);
    const float ap = average_precision(std::move(scored), n_pos);
    out.per_class.push_back(ClassAp{c, ap, n_pos});
    if (n_pos > 0) {
      sum += ap;
      ++counted;
    }
  }
  out.map = counted > 0 ? static_cast<float>(sum / counted) : 0.0f;
  return out;
}

CocoResult evaluate_coco(const std::vector<ImageEval>& images) {
  const std::set<int> classes = classes_present(images);
  CocoResult out;

  double overall = 0.0;
  std::array<double, 3> per_bucket{0.0, 0.0, 0.0};
  std::array<bool, 3> bucket_present{false, false, false};
  constexpr std::array<Bucket, 3> kBuckets{Bucket::small, Bucket::medium, Bucket::large};
  constexpr int steps = 10;
  for (int i = 0; i < steps; ++i) {
    const float thresh = 0.5f + 0.05f * static_cast<float>(i);
    overall += map_at(images, classes, thresh, std::nullopt);
    for (size_t b = 0; b < kBuckets.size(); ++b) {
      const float value = map_at(images, classes, thresh, kBuckets[b]);
      if (value >= 0.0f) {
        per_bucket[b] += value;
        bucket_present[b] = true;
      }
    }
  }

  out.ap = static_cast<float>(overall / steps);
  out.ap50 = map_at(images, classes, 0.5f, std::nullopt);
  out.ap75 = map_at(images, classes, 0.75f, std::nullopt);
  if (out.ap50 < 0.0f) out.ap50 = 0.0f;
  if (out.ap75 < 0.0f) out.ap75 = 0.0f;
  if (out.ap < 0.0f) out.ap = 0.0f;
  out.ap_small = bucket_present[0] ? static_cast<float>(per_bucket[0] / steps) : -1.0f;
  out.ap_medium = bucket_present[1] ? static_cast<float>(per_bucket[1] / steps) : -1.0f;
  out.ap_large = bucket_present[2] ? static_cast<float>(per_bucket[2] / steps) : -1.0f;
  return out;
}

}  // namespace evalmetrics
}  // namespace yoloret
