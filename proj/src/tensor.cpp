#include "yoloret/tensor.hpp"

#include <cmath>

namespace yoloret {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ValidationError("tensor: item() requires a scalar, got shape " + shape_.str());
  }
  return data()[0];
}

Tensor tensor_from(Shape shape, std::initializer_list<float> values) {
  return Tensor(shape, std::vector<float>(values));
}

Tensor random_normal(Shape shape, Rng& rng, double mean, double stddev) {
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = static_cast<float>(rng.normal(mean, stddev));
  return Tensor(shape, std::move(v));
}

Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(shape, std::move(v));
}

bool all_finite(const Tensor& t) {
  const float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (pa[i] != pb[i]) return false;
    // Distinguish +0/-0 irrelevant here; NaN never appears in valid tensors.
  }
  return true;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ValidationError("max_abs_diff: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  float m = 0.0f;
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::fabs(pa[i] - pb[i]));
  }
  return m;
}

}  // namespace yoloret
