#include "mlde/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlde/errors.hpp"

namespace mlde {

namespace {

Parameter make_param(std::string name, std::vector<std::int64_t> dims, Shape4 shape) {
  return Parameter{std::move(name), std::move(dims), Tensor(shape), Tensor(shape)};
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               int pad, bool with_bias)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(with_bias),
      weight_(make_param(name + ".weight", {out_channels, in_channels, kernel, kernel},
                         {out_channels, in_channels, kernel, kernel})),
      bias_(with_bias ? make_param(name + ".bias", {out_channels}, {out_channels, 1, 1, 1})
                      : Parameter{}) {}

kernels::ConvShape Conv2d::shape_for(const Shape4& in) const {
  if (in.c != in_channels_) {
    throw TrainingError("conv " + weight_.name + ": expected " + std::to_string(in_channels_) +
                        " input channels, got " + std::to_string(in.c));
  }
  return {in.n, in.c, in.h, in.w, out_channels_, kernel_, stride_, pad_};
}

Tensor Conv2d::forward(const Tensor& x, bool keep_cache) {
  const auto s = shape_for(x.shape());
  Tensor y({s.batch, out_channels_, s.out_h(), s.out_w()});
  kernels::parallel::conv2d_forward(s, x.data(), weight_.value.data(),
                                    has_bias_ ? bias_.value.data() : std::span<const float>{},
                                    y.data());
  if (keep_cache) cached_input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, BackwardMode mode) {
  const auto s = shape_for(cached_input_.shape());
  if (mode.param_grads) {
    kernels::parallel::conv2d_backward_weights(
        s, cached_input_.data(), grad_out.data(), weight_.grad.data(),
        has_bias_ ? bias_.grad.data() : std::span<float>{});
  }
  if (!mode.input_grad) return {};
  Tensor gx(cached_input_.shape());
  kernels::parallel::conv2d_backward_data(s, grad_out.data(), weight_.value.data(), gx.data());
  return gx;
}

void Conv2d::visit_parameters(const std::function<void(Parameter&)>& fn) {
  fn(weight_);
  if (has_bias_) fn(bias_);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, float eps)
    : channels_(channels),
      eps_(eps),
      gamma_(make_param(name + ".weight", {channels}, {channels, 1, 1, 1})),
      beta_(make_param(name + ".bias", {channels}, {channels, 1, 1, 1})),
      running_mean_(make_param(name + ".running_mean", {channels}, {channels, 1, 1, 1})),
      running_var_(make_param(name + ".running_var", {channels}, {channels, 1, 1, 1})) {
  gamma_.value.fill(1.0f);
  running_var_.value.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool keep_cache) {
  const auto& sh = x.shape();
  if (sh.c != channels_) throw TrainingError("batch norm " + gamma_.name + ": channel mismatch");
  Tensor y(sh);
  const std::size_t plane = sh.plane();
  const int planes = sh.n * sh.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int c = p % sh.c;
    const float scale = gamma_.value[c] / std::sqrt(running_var_.value[c] + eps_);
    const float shift = beta_.value[c] - running_mean_.value[c] * scale;
    const float* src = x.data().data() + p * plane;
    float* dst = y.data().data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
  }
  if (keep_cache) cached_input_ = x;
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out, BackwardMode mode) {
  const auto& sh = cached_input_.shape();
  const std::size_t plane = sh.plane();
  if (mode.param_grads) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < sh.c; ++c) {
      const float inv_std = 1.0f / std::sqrt(running_var_.value[c] + eps_);
      const float mean = running_mean_.value[c];
      double dgamma = 0.0;
      double dbeta = 0.0;
      for (int n = 0; n < sh.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * sh.c + c) * plane;
        const float* g = grad_out.data().data() + off;
        const float* x = cached_input_.data().data() + off;
        for (std::size_t i = 0; i < plane; ++i) {
          dgamma += static_cast<double>(g[i]) * ((x[i] - mean) * inv_std);
          dbeta += g[i];
        }
      }
      gamma_.grad[c] = static_cast<float>(dgamma);
      beta_.grad[c] = static_cast<float>(dbeta);
    }
  }
  if (!mode.input_grad) return {};
  Tensor gx(sh);
  const int planes = sh.n * sh.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int c = p % sh.c;
    const float scale = gamma_.value[c] / std::sqrt(running_var_.value[c] + eps_);
    const float* g = grad_out.data().data() + p * plane;
    float* dst = gx.data().data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = g[i] * scale;
  }
  return gx;
}

void BatchNorm2d::visit_parameters(const std::function<void(Parameter&)>& fn) {
  fn(gamma_);
  fn(beta_);
}

void BatchNorm2d::visit_buffers(const std::function<void(Parameter&)>& fn) {
  fn(running_mean_);
  fn(running_var_);
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, bool keep_cache) {
  Tensor y(x.shape());
  const auto src = x.data();
  auto dst = y.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(src.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  if (keep_cache) cached_output_ = y;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out, BackwardMode mode) {
  if (!mode.input_grad) return {};
  Tensor gx(grad_out.shape());
  const auto g = grad_out.data();
  const auto y = cached_output_.data();
  auto dst = gx.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(g.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = y[i] > 0.0f ? g[i] : 0.0f;
  return gx;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x, bool keep_cache) {
  const auto& sh = x.shape();
  const int oh_n = (sh.h + 2 * pad_ - kernel_) / stride_ + 1;
  const int ow_n = (sh.w + 2 * pad_ - kernel_) / stride_ + 1;
  Tensor y({sh.n, sh.c, oh_n, ow_n});
  std::vector<std::int32_t> argmax(y.size());
  const int planes = sh.n * sh.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const float* src = x.data().data() + p * sh.plane();
    float* dst = y.data().data() + p * y.shape().plane();
    std::int32_t* arg = argmax.data() + p * y.shape().plane();
    for (int oh = 0; oh < oh_n; ++oh) {
      for (int ow = 0; ow < ow_n; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_i = -1;
        for (int kh = 0; kh < kernel_; ++kh) {
          const int ih = oh * stride_ - pad_ + kh;
          if (ih < 0 || ih >= sh.h) continue;
          for (int kw = 0; kw < kernel_; ++kw) {
            const int iw = ow * stride_ - pad_ + kw;
            if (iw < 0 || iw >= sh.w) continue;
            const float v = src[ih * sh.w + iw];
            if (v > best || best_i < 0) {
              best = v;
              best_i = ih * sh.w + iw;
            }
          }
        }
        dst[oh * ow_n + ow] = best;
        arg[oh * ow_n + ow] = best_i;
      }
    }
  }
  if (keep_cache) {
    input_shape_ = sh;
    argmax_ = std::move(argmax);
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out, BackwardMode mode) {
  if (!mode.input_grad) return {};
  Tensor gx(input_shape_);
  const int planes = input_shape_.n * input_shape_.c;
  const std::size_t out_plane = grad_out.shape().plane();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    float* dst = gx.data().data() + p * input_shape_.plane();
    const float* g = grad_out.data().data() + p * out_plane;
    const std::int32_t* arg = argmax_.data() + p * out_plane;
    for (std::size_t i = 0; i < out_plane; ++i) dst[arg[i]] += g[i];
  }
  return gx;
}

// ------------------------------------------------------------ Sequential

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    layers_ = std::move(copy.layers_);
  }
  return *this;
}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, bool keep_cache) {
  if (layers_.empty()) return x;
  Tensor h = layers_.front()->forward(x, keep_cache);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, keep_cache);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, BackwardMode mode) {
  if (layers_.empty()) return mode.input_grad ? grad_out : Tensor{};
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool first = i == 0;
    g = layers_[i]->backward(g, {first ? mode.input_grad : true, mode.param_grads});
  }
  return g;
}

void Sequential::visit_parameters(const std::function<void(Parameter&)>& fn) {
  for (auto& l : layers_) l->visit_parameters(fn);
}

void Sequential::visit_buffers(const std::function<void(Parameter&)>& fn) {
  for (auto& l : layers_) l->visit_buffers(fn);
}

// ------------------------------------------------------------ Bottleneck

Bottleneck::Bottleneck(const std::string& name, int in_channels, int mid_channels,
                       int out_channels, int stride) {
  main_.add(std::make_unique<Conv2d>(name + ".conv1", in_channels, mid_channels, 1, 1, 0, false))
      .add(std::make_unique<BatchNorm2d>(name + ".bn1", mid_channels))
      .add(std::make_unique<ReLU>())
      .add(std::make_unique<Conv2d>(name + ".conv2", mid_channels, mid_channels, 3, stride, 1, false))
      .add(std::make_unique<BatchNorm2d>(name + ".bn2", mid_channels))
      .add(std::make_unique<ReLU>())
      .add(std::make_unique<Conv2d>(name + ".conv3", mid_channels, out_channels, 1, 1, 0, false))
      .add(std::make_unique<BatchNorm2d>(name + ".bn3", out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_
        .add(std::make_unique<Conv2d>(name + ".downsample.0", in_channels, out_channels, 1, stride,
                                      0, false))
        .add(std::make_unique<BatchNorm2d>(name + ".downsample.1", out_channels));
  }
}

Tensor Bottleneck::forward(const Tensor& x, bool keep_cache) {
  Tensor y = main_.forward(x, keep_cache);
  const Tensor skip = shortcut_.size() == 0 ? x : shortcut_.forward(x, keep_cache);
  auto dst = y.data();
  const auto src = skip.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(dst.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] += src[i];
  return out_relu_.forward(y, keep_cache);
}

Tensor Bottleneck::backward(const Tensor& grad_out, BackwardMode mode) {
  const Tensor g = out_relu_.backward(grad_out, {true, false});
  Tensor gx = main_.backward(g, {mode.input_grad, mode.param_grads});
  if (shortcut_.size() == 0) {
    if (!mode.input_grad) return {};
    auto dst = gx.data();
    const auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return gx;
  }
  Tensor gs = shortcut_.backward(g, {mode.input_grad, mode.param_grads});
  if (!mode.input_grad) return {};
  auto dst = gx.data();
  const auto src = gs.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return gx;
}

void Bottleneck::visit_parameters(const std::function<void(Parameter&)>& fn) {
  main_.visit_parameters(fn);
  shortcut_.visit_parameters(fn);
}

void Bottleneck::visit_buffers(const std::function<void(Parameter&)>& fn) {
  main_.visit_buffers(fn);
  shortcut_.visit_buffers(fn);
}

}  // namespace mlde
