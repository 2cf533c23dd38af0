#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mlde/kernels.hpp"
#include "mlde/tensor.hpp"

namespace mlde {

/// A named learnable tensor. `dims` is the natural (serialized) shape, which
/// may have fewer than four axes.
struct Parameter {
  std::string name;
  std::vector<std::int64_t> dims;
  Tensor value;
  Tensor grad;
};

struct BackwardMode {
  bool input_grad = true;   // produce d(loss)/d(input)
  bool param_grads = true;  // produce d(loss)/d(parameters); false when frozen
};

class Layer {
 public:
  virtual ~Layer() = default;

  /// With keep_cache the layer retains what backward() needs.
  virtual Tensor forward(const Tensor& x, bool keep_cache) = 0;
  /// Returns an empty tensor when mode.input_grad is false. Parameter
  /// gradients are overwritten, not accumulated.
  virtual Tensor backward(const Tensor& grad_out, BackwardMode mode) = 0;

  virtual void visit_parameters(const std::function<void(Parameter&)>&) {}
  /// Non-learnable state (batch-norm running statistics).
  virtual void visit_buffers(const std::function<void(Parameter&)>&) {}

  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         bool with_bias);

  Tensor forward(const Tensor& x, bool keep_cache) override;
  Tensor backward(const Tensor& grad_out, BackwardMode mode) override;
  void visit_parameters(const std::function<void(Parameter&)>& fn) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  Parameter& weight() { return weight_; }
  Parameter* bias() { return has_bias_ ? &bias_ : nullptr; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }

 private:
  kernels::ConvShape shape_for(const Shape4& in) const;

  int in_channels_, out_channels_, kernel_, stride_, pad_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
  Tensor cached_input_;
};

/// Batch normalization with frozen running statistics (inference form), the
/// usual setting when fine-tuning a pretrained network on small batches.
/// The affine scale and shift remain learnable.
class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, float eps = 1e-5f);

  Tensor forward(const Tensor& x, bool keep_cache) override;
  Tensor backward(const Tensor& grad_out, BackwardMode mode) override;
  void visit_parameters(const std::function<void(Parameter&)>& fn) override;
  void visit_buffers(const std::function<void(Parameter&)>& fn) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  int channels_;
  float eps_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Tensor cached_input_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, bool keep_cache) override;
  Tensor backward(const Tensor& grad_out, BackwardMode mode) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  Tensor cached_output_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x, bool keep_cache) override;
  Tensor backward(const Tensor& grad_out, BackwardMode mode) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  int kernel_, stride_, pad_;
  Shape4 input_shape_;
  std::vector<std::int32_t> argmax_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(std::unique_ptr<Layer> layer);
  std::size_t size() const noexcept { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }

  Tensor forward(const Tensor& x, bool keep_cache) override;
  Tensor backward(const Tensor& grad_out, BackwardMode mode) override;
  void visit_parameters(const std::function<void(Parameter&)>& fn) override;
  void visit_buffers(const std::function<void(Parameter&)>& fn) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// ResNet bottleneck: 1x1 reduce, 3x3 (carrying the stride), 1x1 expand, with
/// a projection shortcut when the shape changes.
class Bottleneck final : public Layer {
 public:
  Bottleneck(const std::string& name, int in_channels, int mid_channels, int out_channels,
             int stride);

  Tensor forward(const Tensor& x, bool keep_cache) override;
  Tensor backward(const Tensor& grad_out, BackwardMode mode) override;
  void visit_parameters(const std::function<void(Parameter&)>& fn) override;
  void visit_buffers(const std::function<void(Parameter&)>& fn) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Bottleneck>(*this); }

 private:
  Sequential main_;
  Sequential shortcut_;  // empty for identity
  ReLU out_relu_;
};

}  // namespace mlde
