#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mlde/backbone.hpp"
#include "mlde/dataset.hpp"
#include "mlde/fusion.hpp"
#include "mlde/image.hpp"
#include "mlde/image_io.hpp"

namespace mlde {

class TensorArchive;

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr std::string_view kLossName = "binary cross-entropy over 2-way softmax";

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double fusion_lr_scale = 1.0;  // alpha learning rate = learning_rate * fusion_lr_scale
  int batch_size = 16;
  std::vector<int> epochs_per_stage{2, 2, 2};
  std::uint64_t seed = 0;
  BackboneSpec backbone = BackboneSpec::tiny_test();
  ScaleSet scales = kDefaultScales;
  ChannelStats normalization = kImageNetStats;
  bool deterministic = false;
  int branch_pretrain_epochs = 0;  // >0: train each branch alone first (ablation)
  bool hflip = false;

  std::vector<std::string> violations() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;
};

/// Thread-safe image source keyed by image_id. Images inserted directly are
/// served from memory; others are decoded from disk and, when caching is on,
/// kept as 8-bit rasters.
class ImageStore {
 public:
  explicit ImageStore(bool cache_decoded = true) : cache_decoded_(cache_decoded) {}

  void insert(const std::string& image_id, ImageTensor image);
  ImageTensor load(const std::string& image_id, const std::filesystem::path& path);

 private:
  bool cache_decoded_;
  std::mutex mutex_;
  std::unordered_map<std::string, ImageTensor> memory_;
  std::unordered_map<std::string, Rgb8Image> decoded_;
};

struct Ensemble {
  std::vector<BranchNetwork> branches;  // kBranches, branch k reads pyramid level k
  FusionParameters fusion;
};

/// Branch k seeded from derive_seed(seed, k); alpha starts at zero.
Ensemble build_ensemble(const TrainConfig& config, std::uint64_t seed,
                        const TensorArchive* pretrained = nullptr);

struct Batch {
  std::vector<RoiPyramid> pyramids;
  std::vector<int> labels;
};

struct EnsembleOutput {
  std::vector<BranchProbabilities> branch;  // positive-class probability per branch
  std::vector<double> fused;
};

/// Positive-class probability of a 2-way softmax over (z0, z1).
double positive_probability(double z0, double z1);

EnsembleOutput infer(Ensemble& ensemble, std::span<const RoiPyramid> pyramids,
                     const ChannelStats& normalization);

/// Mean of -[y log f + (1 - y) log(1 - f)] with f clamped to
/// [kProbabilityClamp, 1 - kProbabilityClamp].
double bce_loss(std::span<const double> fused, std::span<const int> labels);

double batch_loss(Ensemble& ensemble, const Batch& batch, const ChannelStats& normalization);

struct GradientResult {
  double loss = 0.0;
  std::array<double, kBranches> alpha_grad{};
};

/// Forward + backward. Fills parameter gradients of the groups `stage` trains
/// (every branch) and returns the alpha gradient. Throws TrainingError on a
/// non-finite loss.
GradientResult compute_gradients(Ensemble& ensemble, const Batch& batch, const FineTuneStage& stage,
                                 const ChannelStats& normalization);

/// SGD with momentum: v <- mu v + g, theta <- theta - lr v. Only parameters of
/// trainable groups (and alpha) are touched.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum, double fusion_lr_scale = 1.0);

  void apply(Ensemble& ensemble, const FineTuneStage& stage,
             const std::array<double, kBranches>& alpha_grad);

 private:
  double lr_, momentum_, fusion_lr_;
  std::map<std::string, std::vector<float>> velocity_;
  std::array<double, kBranches> alpha_velocity_{};
};

/// One optimization step; returns the batch loss before the update.
double step(Ensemble& ensemble, const Batch& batch, SgdMomentum& optimizer,
            const FineTuneStage& stage, const ChannelStats& normalization);

struct ImageRef {
  std::string image_id;
  std::filesystem::path path;
};

std::vector<ImageRef> image_refs(const BinaryTaskView& task);
std::vector<ImageRef> image_refs(const DatasetManifest& manifest);

/// Loads images and builds their pyramids in parallel; output order follows
/// `images`. `labels` may be empty (inference); nonzero `flips`
/// entries mark images to mirror.
Batch prepare_batch(std::span<const ImageRef> images, std::span<const int> labels,
                    const TrainConfig& config, ImageStore& store,
                    std::span<const std::uint8_t> flips = {});

/// Fused and per-branch scores for a list of images, processed in batches.
EnsembleOutput score_images(Ensemble& ensemble, std::span<const ImageRef> images,
                            const TrainConfig& config, ImageStore& store);

struct EpochRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> validation_auc;
};

struct TrainedModel {
  DiagnosisClass target;
  TrainConfig config;
  Ensemble ensemble;
  std::vector<EpochRecord> history;
  bool degenerate = false;  // untrained: the task had no positives or no negatives
};

struct TrainOptions {
  const BinaryTaskView* validation = nullptr;
  const TensorArchive* pretrained = nullptr;
};

/// Runs the staged fine-tuning schedule end to end for one binary task,
/// seeded by config.seed.
TrainedModel train_task(const BinaryTaskView& task, const TrainConfig& config, ImageStore& store,
                        const TrainOptions& options = {});

enum class TaskStatus { trained, degenerate, failed };
std::string_view to_string(TaskStatus status);

struct TaskOutcome {
  DiagnosisClass target;
  TaskStatus status = TaskStatus::trained;
  std::string message;
  std::optional<double> final_loss;
  FusionWeights weights{};
};

struct TaskBankSummary {
  std::vector<TaskOutcome> tasks;
  std::size_t count(TaskStatus status) const;
};

using ModelSink = std::function<void(TrainedModel&&)>;

/// Trains one independent model per diagnosis class, task seed = seed + class
/// index. A failing task is recorded and the remaining tasks still run.
/// Degenerate tasks still hand an (untrained, flagged) model to the sink.
TaskBankSummary run_task_bank(const DatasetManifest& manifest, const TrainConfig& config,
                              ImageStore& store, const ModelSink& sink,
                              const DatasetManifest* validation = nullptr,
                              const TensorArchive* pretrained = nullptr);

std::vector<TrainedModel> run_task_bank(const DatasetManifest& manifest, const TrainConfig& config,
                                        ImageStore& store, TaskBankSummary* summary = nullptr);

// Checkpoints are TensorArchive files of kind "checkpoint" holding every
// branch parameter and buffer (f32, "branch<k>/<name>"), alpha ("fusion.alpha",
// f64), and JSON metadata: target, config + config hash, history, and alpha
// with the derived weights for inspection.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);

/// When `expected` is given, settings that change inference (scales,
/// normalization, backbone kind) must match or ConfigMismatchError is thrown.
TrainedModel load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected = nullptr);

std::string checkpoint_filename(const DiagnosisClass& target);

}  // namespace mlde
