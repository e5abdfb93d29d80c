#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "yoloret/common.hpp"

namespace yoloret {

// NCHW shape. w is the fastest-varying axis of the flat layout.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  int64_t numel() const {
    return static_cast<int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape& o) const = default;
  std::string str() const;
};

// Dense float32 tensor, immutable after construction. Copies share storage,
// so passing tensors by value is cheap and thread-safe for readers.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(shape),
        data_(std::make_shared<const std::vector<float>>(
            static_cast<size_t>(check_shape(shape).numel()), 0.0f)) {}

  Tensor(Shape shape, std::vector<float> data)
      : shape_(check_shape(shape)),
        data_(std::make_shared<const std::vector<float>>(std::move(data))) {
    if (static_cast<int64_t>(data_->size()) != shape_.numel()) {
      throw ValidationError("tensor: data length " + std::to_string(data_->size()) +
                            " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, float value) {
    return Tensor(shape, std::vector<float>(static_cast<size_t>(shape.numel()), value));
  }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_ == nullptr; }

  const float* data() const { return data_->data(); }

  float at(int n, int c, int y, int x) const {
    return (*data_)[static_cast<size_t>(((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x)];
  }

  // Scalar convenience for (1,1,1,1) tensors.
  float item() const;

  bool same_data(const Tensor& o) const {
    return data_ == o.data_ ||
           (shape_ == o.shape_ && *data_ == *o.data_);
  }

 private:
  static const Shape& check_shape(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ValidationError("tensor: negative dimension in shape " + s.str());
    }
    return s;
  }

  Shape shape_;
  std::shared_ptr<const std::vector<float>> data_;
};

// Fill helpers used by initializers and tests.
Tensor tensor_from(Shape shape, std::initializer_list<float> values);
Tensor random_normal(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0);
Tensor random_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);

bool all_finite(const Tensor& t);
bool bitwise_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace yoloret
