#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mlde/layers.hpp"
#include "mlde/tensor.hpp"

namespace mlde {

class TensorArchive;

enum class BackboneKind { resnet50_pretrained, tiny_test };
std::string_view to_string(BackboneKind kind);
std::optional<BackboneKind> parse_backbone_kind(std::string_view name);

enum class XavierVariant { uniform, normal };
std::string_view to_string(XavierVariant v);
std::optional<XavierVariant> parse_xavier_variant(std::string_view name);

/// Parameter groups, input to output. Fine-tuning unfreezes them from the back.
inline constexpr std::array<std::string_view, 6> kLayerGroups{"stem",   "block1", "block2",
                                                              "block3", "block4", "head"};
inline constexpr int kHeadOutputs = 2;
inline constexpr int kResNet50FeatureDim = 2048;
inline constexpr int kImageNetClasses = 1000;

struct LayerGroupInfo {
  std::string name;
  int out_channels = 0;  // 0 for the head
  int out_spatial = 0;   // output side for a 224 x 224 input
};

struct BackboneSpec {
  BackboneKind kind = BackboneKind::tiny_test;
  int feature_dim = 0;
  int head_outputs = kHeadOutputs;
  std::vector<LayerGroupInfo> layer_groups;
  std::filesystem::path weights_path;  // resnet50_pretrained only
  std::string weights_sha256;          // expected file digest; empty skips the check
  XavierVariant xavier = XavierVariant::uniform;

  static BackboneSpec tiny_test();
  static BackboneSpec resnet50_pretrained(std::filesystem::path weights, std::string sha256);
};

struct FineTuneStage {
  std::size_t stage_index = 0;
  std::set<std::string, std::less<>> trainable_groups;

  bool trainable(std::string_view group) const { return trainable_groups.count(group) != 0; }
};

/// Stage 0 trains only the head; each later stage adds the next-deepest group
/// (block4, block3, block2, block1, stem). Stages past the sixth repeat the
/// full unfreeze.
std::vector<FineTuneStage> freeze_schedule(std::size_t total_stages);

FineTuneStage full_unfreeze();

double xavier_bound(int fan_in, int fan_out);

/// fan_out x fan_in row-major matrix. Uniform draws lie on [-a, a] with
/// a = sqrt(6 / (fan_in + fan_out)); the normal variant has the same variance.
std::vector<float> xavier_init(int fan_in, int fan_out, std::mt19937_64& rng,
                               XavierVariant variant = XavierVariant::uniform);

/// Fully connected output layer. Weights are stored in float, but logits and
/// gradients are accumulated in double so downstream probability math is not
/// limited by single precision.
class LinearHead {
 public:
  LinearHead(int in_features, int out_features);

  int in_features() const noexcept { return in_; }
  int out_features() const noexcept { return out_; }

  /// features: B x F x 1 x 1. Returns B x out row-major logits.
  std::vector<double> forward(const Tensor& features, bool keep_cache);
  Tensor backward(std::span<const double> grad_logits, BackwardMode mode);

  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  void visit_parameters(const std::function<void(Parameter&)>& fn);

 private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor cached_features_;
};

/// One ensemble branch: named body groups, global average pooling, and a
/// fully connected head. Maps a B x 3 x 224 x 224 batch to B x 2 logits.
class BranchNetwork {
 public:
  BranchNetwork(BackboneSpec spec, std::vector<std::pair<std::string, Sequential>> body,
                LinearHead head);

  const BackboneSpec& spec() const noexcept { return spec_; }
  int feature_dim() const noexcept { return head_.in_features(); }
  int head_outputs() const noexcept { return head_.out_features(); }
  std::vector<std::string> group_names() const;

  /// Pooled penultimate features, B x feature_dim x 1 x 1.
  Tensor features(const Tensor& input, const FineTuneStage* training_stage = nullptr);

  /// Logits (B x head_outputs, row-major). Passing a stage keeps the caches
  /// needed by backward() for the groups that stage trains.
  std::vector<double> forward(const Tensor& input, const FineTuneStage* training_stage = nullptr);

  /// Backpropagates d(loss)/d(logits). Only groups in `stage` receive
  /// parameter gradients, and the pass stops below the lowest trainable group.
  void backward(std::span<const double> grad_logits, const FineTuneStage& stage);

  /// Swaps in a fresh kHeadOutputs-way head (Xavier weights, zero bias).
  void replace_head(std::uint64_t seed);

  LinearHead& head() noexcept { return head_; }

  void visit_parameters(const std::function<void(std::string_view group, Parameter&)>& fn);
  void visit_buffers(const std::function<void(std::string_view group, Parameter&)>& fn);
  void visit_parameters(
      const std::function<void(std::string_view group, const Parameter&)>& fn) const;
  void visit_buffers(const std::function<void(std::string_view group, const Parameter&)>& fn) const;

  std::string body_digest();
  std::string head_digest();

 private:
  std::optional<std::size_t> lowest_trainable(const FineTuneStage& stage) const;

  BackboneSpec spec_;
  std::vector<std::pair<std::string, Sequential>> body_;
  LinearHead head_;
  Shape4 pooled_from_;
};

/// ResNet-50 with the original ImageNet head, parameters taken from `weights`
/// (torchvision naming). Every expected tensor must be present with the
/// expected shape.
BranchNetwork load_pretrained_resnet50(const BackboneSpec& spec, const TensorArchive& weights);

/// Reads a pretrained weight file, verifying spec.weights_sha256 when set.
TensorArchive load_pretrained_weights(const BackboneSpec& spec);

/// Builds a branch with a fresh 2-way head. For tiny_test the body is seeded
/// random; for resnet50_pretrained it comes from `pretrained` (or the file in
/// the BackboneSpec when null).
BranchNetwork build_backbone(const BackboneSpec& spec, std::uint64_t seed,
                             const TensorArchive* pretrained = nullptr);

/// Architecture with placeholder parameters (2-way head), for restoring
/// saved state.
BranchNetwork make_branch_skeleton(const BackboneSpec& spec);

/// Shape manifest of the ResNet-50 weight file: name -> dims.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> resnet50_weight_manifest();

}  // namespace mlde
