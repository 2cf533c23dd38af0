#pragma once

// Compute kernels in two flavors: `reference` is a plain serial transcription
// of the math kept for testing, `parallel` is the OpenMP version used by the
// library. Parallel kernels split work so that every output element is
// produced by one thread with a fixed summation order, so results do not
// depend on the thread count.

#include <span>

#include "mlde/image.hpp"

namespace mlde::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_h() const noexcept { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const noexcept { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const noexcept;
  std::size_t output_size() const noexcept;
  std::size_t weight_size() const noexcept;
};

/// a + t (b - a); shared by both resize kernels so their results agree bit for bit.
template <typename T>
constexpr T lerp(T a, T b, T t) noexcept {
  return a + t * (b - a);
}

namespace reference {

// Direct convolution. Weights are [out_c][in_c][k][k]; bias may be empty.
template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

template <typename T>
void conv2d_backward_data(const ConvShape& s, std::span<const T> grad_output,
                          std::span<const T> weight, std::span<T> grad_input);

// Overwrites grad_weight and (when non-empty) grad_bias.
template <typename T>
void conv2d_backward_weights(const ConvShape& s, std::span<const T> input,
                             std::span<const T> grad_output, std::span<T> grad_weight,
                             std::span<T> grad_bias);

void bilinear_resize_region(const ImageTensor& src, const PixelRegion& region, ImageTensor& dst);

}  // namespace reference

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output);

void conv2d_backward_data(const ConvShape& s, std::span<const float> grad_output,
                          std::span<const float> weight, std::span<float> grad_input);

void conv2d_backward_weights(const ConvShape& s, std::span<const float> input,
                             std::span<const float> grad_output, std::span<float> grad_weight,
                             std::span<float> grad_bias);

void bilinear_resize_region(const ImageTensor& src, const PixelRegion& region, ImageTensor& dst);

}  // namespace parallel

}  // namespace mlde::kernels
