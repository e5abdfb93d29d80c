#include "yoloret/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace yoloret::geometry {

namespace {

struct Overlap {
  double inter = 0.0;
  double uni = 0.0;
  double enclose = 0.0;
};

Overlap overlap_of(const Box& a, const Box& b) {
  const double iw = std::max(0.0, static_cast<double>(std::min(a.x2, b.x2)) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, static_cast<double>(std::min(a.y2, b.y2)) - std::max(a.y1, b.y1));
  Overlap o;
  o.inter = iw * ih;
  o.uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - o.inter;
  const double cw = static_cast<double>(std::max(a.x2, b.x2)) - std::min(a.x1, b.x1);
  const double ch = static_cast<double>(std::max(a.y2, b.y2)) - std::min(a.y1, b.y1);
  o.enclose = cw * ch;
  return o;
}

}  // namespace

float iou(const Box& a, const Box& b) {
  const Overlap o = overlap_of(a, b);
  if (o.uni <= 0.0) return 0.0f;
  return static_cast<float>(o.inter / o.uni);
}

float giou(const Box& a, const Box& b) {
  const Overlap o = overlap_of(a, b);
  if (o.enclose <= 0.0) return iou(a, b);
  const double i = o.uni <= 0.0 ? 0.0 : o.inter / o.uni;
  return static_cast<float>(i - (o.enclose - o.uni) / o.enclose);
}

GiouResult giou_with_grad(const Box& a, const Box& b) {
  GiouResult r;
  r.value = giou(a, b);

  const double aw = a.width(), ah = a.height();
  const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = aw * ah + static_cast<double>(b.area()) - inter;
  const double cw = static_cast<double>(std::max(a.x2, b.x2)) - std::min(a.x1, b.x1);
  const double ch = static_cast<double>(std::max(a.y2, b.y2)) - std::min(a.y1, b.y1);
  const double enclose = cw * ch;
  if (uni <= 0.0 || enclose <= 0.0) return r;  // degenerate: flat zero gradient

  // corner order: x1, y1, x2, y2
  const double d_area[4] = {-ah, -aw, ah, aw};
  double d_inter[4] = {0, 0, 0, 0};
  if (iw > 0.0 && ih > 0.0) {
    if (a.x1 > b.x1) d_inter[0] = -ih;
    if (a.y1 > b.y1) d_inter[1] = -iw;
    if (a.x2 < b.x2) d_inter[2] = ih;
    if (a.y2 < b.y2) d_inter[3] = iw;
  }
  double d_enclose[4] = {0, 0, 0, 0};
  if (a.x1 < b.x1) d_enclose[0] = -ch;
  if (a.y1 < b.y1) d_enclose[1] = -cw;
  if (a.x2 > b.x2) d_enclose[2] = ch;
  if (a.y2 > b.y2) d_enclose[3] = cw;

  for (int i = 0; i < 4; ++i) {
    const double d_union = d_area[i] - d_inter[i];
    const double d_iou = (d_inter[i] * uni - inter * d_union) / (uni * uni);
    // slack = (enclose - union) / enclose
    const double d_slack =
        ((d_enclose[i] - d_union) * enclose - (enclose - uni) * d_enclose[i]) /
        (enclose * enclose);
    r.d_a[static_cast<size_t>(i)] = static_cast<float>(d_iou - d_slack);
  }
  return r;
}

Box clip_box(const Box& b, float width, float height) {
  Box out;
  out.x1 = std::clamp(b.x1, 0.0f, width);
  out.y1 = std::clamp(b.y1, 0.0f, height);
  out.x2 = std::clamp(b.x2, 0.0f, width);
  out.y2 = std::clamp(b.y2, 0.0f, height);
  return out;
}

}  // namespace yoloret::geometry
