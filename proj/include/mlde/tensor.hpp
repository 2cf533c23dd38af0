#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mlde {

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense NCHW float tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, float fill = 0.0f) : shape_(shape), data_(shape.size(), fill) {}

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float* sample(int n) noexcept {
    return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane();
  }
  const float* sample(int n) const noexcept {
    return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane();
  }

  void fill(float v) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

inline void Tensor::fill(float v) noexcept {
  for (auto& x : data_) x = v;
}

}  // namespace mlde
