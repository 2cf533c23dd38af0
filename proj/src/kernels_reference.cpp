#include <algorithm>
#include <cmath>

#include "mlde/kernels.hpp"

namespace mlde::kernels {

std::size_t ConvShape::input_size() const noexcept {
  return static_cast<std::size_t>(batch) * in_channels * in_h * in_w;
}
std::size_t ConvShape::output_size() const noexcept {
  return static_cast<std::size_t>(batch) * out_channels * out_h() * out_w();
}
std::size_t ConvShape::weight_size() const noexcept {
  return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
}

namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const int oh_n = s.out_h();
  const int ow_n = s.out_w();
  for (int n = 0; n < s.batch; ++n) {
    for (int oc = 0; oc < s.out_channels; ++oc) {
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow) {
          T acc = bias.empty() ? T(0) : bias[oc];
          for (int ic = 0; ic < s.in_channels; ++ic) {
            for (int kh = 0; kh < s.kernel; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.in_h) continue;
              for (int kw = 0; kw < s.kernel; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.in_w) continue;
                acc += weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + kh) *
                                  s.kernel + kw] *
                       input[((static_cast<std::size_t>(n) * s.in_channels + ic) * s.in_h + ih) *
                                 s.in_w + iw];
              }
            }
          }
          output[((static_cast<std::size_t>(n) * s.out_channels + oc) * oh_n + oh) * ow_n + ow] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const ConvShape& s, std::span<const T> grad_output,
                          std::span<const T> weight, std::span<T> grad_input) {
  const int oh_n = s.out_h();
  const int ow_n = s.out_w();
  for (int n = 0; n < s.batch; ++n) {
    for (int ic = 0; ic < s.in_channels; ++ic) {
      for (int ih = 0; ih < s.in_h; ++ih) {
        for (int iw = 0; iw < s.in_w; ++iw) {
          T acc = 0;
          for (int oc = 0; oc < s.out_channels; ++oc) {
            for (int kh = 0; kh < s.kernel; ++kh) {
              const int num_h = ih + s.pad - kh;
              if (num_h < 0 || num_h % s.stride != 0) continue;
              const int oh = num_h / s.stride;
              if (oh >= oh_n) continue;
              for (int kw = 0; kw < s.kernel; ++kw) {
                const int num_w = iw + s.pad - kw;
                if (num_w < 0 || num_w % s.stride != 0) continue;
                const int ow = num_w / s.stride;
                if (ow >= ow_n) continue;
                acc += weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + kh) *
                                  s.kernel + kw] *
                       grad_output[((static_cast<std::size_t>(n) * s.out_channels + oc) * oh_n + oh) *
                                       ow_n + ow];
              }
            }
          }
          grad_input[((static_cast<std::size_t>(n) * s.in_channels + ic) * s.in_h + ih) * s.in_w + iw] =
              acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(const ConvShape& s, std::span<const T> input,
                             std::span<const T> grad_output, std::span<T> grad_weight,
                             std::span<T> grad_bias) {
  const int oh_n = s.out_h();
  const int ow_n = s.out_w();
  for (int oc = 0; oc < s.out_channels; ++oc) {
    for (int ic = 0; ic < s.in_channels; ++ic) {
      for (int kh = 0; kh < s.kernel; ++kh) {
        for (int kw = 0; kw < s.kernel; ++kw) {
          T acc = 0;
          for (int n = 0; n < s.batch; ++n) {
            for (int oh = 0; oh < oh_n; ++oh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.in_h) continue;
              for (int ow = 0; ow < ow_n; ++ow) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.in_w) continue;
                acc += grad_output[((static_cast<std::size_t>(n) * s.out_channels + oc) * oh_n + oh) *
                                       ow_n + ow] *
                       input[((static_cast<std::size_t>(n) * s.in_channels + ic) * s.in_h + ih) *
                                 s.in_w + iw];
              }
            }
          }
          grad_weight[((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + kh) *
                          s.kernel + kw] = acc;
        }
      }
    }
    if (!grad_bias.empty()) {
      T acc = 0;
      for (int n = 0; n < s.batch; ++n) {
        for (int i = 0; i < oh_n * ow_n; ++i) {
          acc += grad_output[(static_cast<std::size_t>(n) * s.out_channels + oc) * oh_n * ow_n + i];
        }
      }
      grad_bias[oc] = acc;
    }
  }
}

template void conv2d_forward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvShape&, std::span<const double>,
                                     std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void conv2d_backward_data<float>(const ConvShape&, std::span<const float>,
                                          std::span<const float>, std::span<float>);
template void conv2d_backward_data<double>(const ConvShape&, std::span<const double>,
                                           std::span<const double>, std::span<double>);
template void conv2d_backward_weights<float>(const ConvShape&, std::span<const float>,
                                             std::span<const float>, std::span<float>,
                                             std::span<float>);
template void conv2d_backward_weights<double>(const ConvShape&, std::span<const double>,
                                              std::span<const double>, std::span<double>,
                                              std::span<double>);

void bilinear_resize_region(const ImageTensor& src, const PixelRegion& region, ImageTensor& dst) {
  const double sy = static_cast<double>(region.height) / dst.height();
  const double sx = static_cast<double>(region.width) / dst.width();
  for (int i = 0; i < dst.height(); ++i) {
    const double fy_src = std::clamp((i + 0.5) * sy - 0.5, 0.0, double(region.height - 1));
    const int y0 = static_cast<int>(fy_src);
    const int y1 = std::min(y0 + 1, region.height - 1);
    const float fy = static_cast<float>(fy_src - y0);
    for (int j = 0; j < dst.width(); ++j) {
      const double fx_src = std::clamp((j + 0.5) * sx - 0.5, 0.0, double(region.width - 1));
      const int x0 = static_cast<int>(fx_src);
      const int x1 = std::min(x0 + 1, region.width - 1);
      const float fx = static_cast<float>(fx_src - x0);
      for (int c = 0; c < ImageTensor::kChannels; ++c) {
        const float a = src.at(region.top + y0, region.left + x0, c);
        const float b = src.at(region.top + y0, region.left + x1, c);
        const float d = src.at(region.top + y1, region.left + x0, c);
        const float e = src.at(region.top + y1, region.left + x1, c);
        dst.at(i, j, c) = kernels::lerp(kernels::lerp(a, b, fx), kernels::lerp(d, e, fx), fy);
      }
    }
  }
}

}  // namespace reference
}  // namespace mlde::kernels
