#include <algorithm>
#include <cmath>
#include <vector>

#include "mlde/kernels.hpp"

namespace mlde::kernels::parallel {

namespace {

bool is_pointwise(const ConvShape& s) {
  return s.kernel == 1 && s.stride == 1 && s.pad == 0;
}

// Unfolds one sample into [in_c * k * k][out_h * out_w], zero at padding.
void im2col(const ConvShape& s, const float* input, float* col) {
  const int oh_n = s.out_h();
  const int ow_n = s.out_w();
  const int rows = s.in_channels * s.kernel * s.kernel;
  const std::size_t cols = static_cast<std::size_t>(oh_n) * ow_n;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int kw = r % s.kernel;
    const int kh = (r / s.kernel) % s.kernel;
    const int ic = r / (s.kernel * s.kernel);
    const float* plane = input + static_cast<std::size_t>(ic) * s.in_h * s.in_w;
    float* dst = col + r * cols;
    for (int oh = 0; oh < oh_n; ++oh) {
      const int ih = oh * s.stride - s.pad + kh;
      float* row = dst + static_cast<std::size_t>(oh) * ow_n;
      if (ih < 0 || ih >= s.in_h) {
        std::fill_n(row, ow_n, 0.0f);
        continue;
      }
      const float* src = plane + static_cast<std::size_t>(ih) * s.in_w;
      for (int ow = 0; ow < ow_n; ++ow) {
        const int iw = ow * s.stride - s.pad + kw;
        row[ow] = (iw < 0 || iw >= s.in_w) ? 0.0f : src[iw];
      }
    }
  }
}

// Folds [in_c * k * k][out_h * out_w] back into one sample's input gradient.
void col2im(const ConvShape& s, const float* col, float* grad_input) {
  const int oh_n = s.out_h();
  const int ow_n = s.out_w();
  const std::size_t cols = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t plane = static_cast<std::size_t>(s.in_h) * s.in_w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < s.in_channels; ++ic) {
    float* dst = grad_input + ic * plane;
    std::fill_n(dst, plane, 0.0f);
    for (int kh = 0; kh < s.kernel; ++kh) {
      for (int kw = 0; kw < s.kernel; ++kw) {
        const float* src = col + ((static_cast<std::size_t>(ic) * s.kernel + kh) * s.kernel + kw) * cols;
        for (int oh = 0; oh < oh_n; ++oh) {
          const int ih = oh * s.stride - s.pad + kh;
          if (ih < 0 || ih >= s.in_h) continue;
          float* drow = dst + static_cast<std::size_t>(ih) * s.in_w;
          const float* srow = src + static_cast<std::size_t>(oh) * ow_n;
          for (int ow = 0; ow < ow_n; ++ow) {
            const int iw = ow * s.stride - s.pad + kw;
            if (iw < 0 || iw >= s.in_w) continue;
            drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output) {
  const int rows = s.in_channels * s.kernel * s.kernel;
  const std::size_t cols = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.in_h * s.in_w;
  std::vector<float> col;
  if (!is_pointwise(s)) col.resize(rows * cols);

  for (int n = 0; n < s.batch; ++n) {
    const float* x = input.data() + n * in_stride;
    const float* cols_ptr = x;
    if (!is_pointwise(s)) {
      im2col(s, x, col.data());
      cols_ptr = col.data();
    }
    float* y = output.data() + static_cast<std::size_t>(n) * s.out_channels * cols;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      float* out = y + oc * cols;
      std::fill_n(out, cols, bias.empty() ? 0.0f : bias[oc]);
      const float* w = weight.data() + static_cast<std::size_t>(oc) * rows;
      for (int r = 0; r < rows; ++r) {
        const float wr = w[r];
        const float* c = cols_ptr + r * cols;
        for (std::size_t p = 0; p < cols; ++p) out[p] += wr * c[p];
      }
    }
  }
}

void conv2d_backward_data(const ConvShape& s, std::span<const float> grad_output,
                          std::span<const float> weight, std::span<float> grad_input) {
  const int rows = s.in_channels * s.kernel * s.kernel;
  const std::size_t cols = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.in_h * s.in_w;
  std::vector<float> dcol;
  if (!is_pointwise(s)) dcol.resize(rows * cols);

  for (int n = 0; n < s.batch; ++n) {
    const float* gy = grad_output.data() + static_cast<std::size_t>(n) * s.out_channels * cols;
    float* gx = grad_input.data() + n * in_stride;
    float* target = is_pointwise(s) ? gx : dcol.data();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
      float* dst = target + r * cols;
      std::fill_n(dst, cols, 0.0f);
      for (int oc = 0; oc < s.out_channels; ++oc) {
        const float w = weight[static_cast<std::size_t>(oc) * rows + r];
        const float* g = gy + oc * cols;
        for (std::size_t p = 0; p < cols; ++p) dst[p] += w * g[p];
      }
    }
    if (!is_pointwise(s)) col2im(s, dcol.data(), gx);
  }
}

void conv2d_backward_weights(const ConvShape& s, std::span<const float> input,
                             std::span<const float> grad_output, std::span<float> grad_weight,
                             std::span<float> grad_bias) {
  const int rows = s.in_channels * s.kernel * s.kernel;
  const std::size_t cols = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.in_h * s.in_w;
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0f);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0f);
  std::vector<float> col;
  if (!is_pointwise(s)) col.resize(rows * cols);

  for (int n = 0; n < s.batch; ++n) {
    const float* x = input.data() + n * in_stride;
    const float* cols_ptr = x;
    if (!is_pointwise(s)) {
      im2col(s, x, col.data());
      cols_ptr = col.data();
    }
    const float* gy = grad_output.data() + static_cast<std::size_t>(n) * s.out_channels * cols;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      const float* g = gy + oc * cols;
      float* gw = grad_weight.data() + static_cast<std::size_t>(oc) * rows;
      for (int r = 0; r < rows; ++r) {
        const float* c = cols_ptr + r * cols;
        float acc = 0.0f;
        for (std::size_t p = 0; p < cols; ++p) acc += g[p] * c[p];
        gw[r] += acc;
      }
      if (!grad_bias.empty()) {
        float acc = 0.0f;
        for (std::size_t p = 0; p < cols; ++p) acc += g[p];
        grad_bias[oc] += acc;
      }
    }
  }
}

void bilinear_resize_region(const ImageTensor& src, const PixelRegion& region, ImageTensor& dst) {
  struct Tap {
    int lo;
    int hi;
    float frac;
  };
  const auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
      const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, double(in - 1));
      const int lo = static_cast<int>(pos);
      t[i] = {lo, std::min(lo + 1, in - 1), static_cast<float>(pos - lo)};
    }
    return t;
  };
  const auto ytaps = taps(region.height, dst.height());
  const auto xtaps = taps(region.width, dst.width());
  const int out_w = dst.width();

#pragma omp parallel for schedule(static)
  for (int i = 0; i < dst.height(); ++i) {
    const Tap ty = ytaps[i];
    for (int j = 0; j < out_w; ++j) {
      const Tap tx = xtaps[j];
      for (int c = 0; c < ImageTensor::kChannels; ++c) {
        const float a = src.at(region.top + ty.lo, region.left + tx.lo, c);
        const float b = src.at(region.top + ty.lo, region.left + tx.hi, c);
        const float d = src.at(region.top + ty.hi, region.left + tx.lo, c);
        const float e = src.at(region.top + ty.hi, region.left + tx.hi, c);
        dst.at(i, j, c) = kernels::lerp(kernels::lerp(a, b, tx.frac), kernels::lerp(d, e, tx.frac), ty.frac);
      }
    }
  }
}

}  // namespace mlde::kernels::parallel
