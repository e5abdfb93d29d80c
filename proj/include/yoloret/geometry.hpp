// Axis-aligned box arithmetic: IoU, generalized IoU, and the analytic
// derivative of generalized IoU with respect to one box's corners (the piece
// the box-regression loss backpropagates through).
#pragma once

#include <array>

namespace yoloret::geometry {

struct Box {
  float x1 = 0.0f;
  float y1 = 0.0f;
  float x2 = 0.0f;
  float y2 = 0.0f;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return width() * height(); }
  bool valid() const { return x2 >= x1 && y2 >= y1; }
};

float iou(const Box& a, const Box& b);

// iou minus the enclosing-box slack; in (-1, 1], equal to iou when the
// enclosing box is exactly the union region.
float giou(const Box& a, const Box& b);

struct GiouResult {
  float value = 0.0f;
  // d giou / d (a.x1, a.y1, a.x2, a.y2); b is treated as constant
  std::array<float, 4> d_a{};
};
GiouResult giou_with_grad(const Box& a, const Box& b);

Box clip_box(const Box& b, float width, float height);

}  // namespace yoloret::geometry
