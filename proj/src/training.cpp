#include "mlde/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "mlde/errors.hpp"
#include "mlde/evaluation.hpp"
#include "mlde/parallel.hpp"
#include "mlde/seeding.hpp"
#include "mlde/tensor_archive.hpp"

namespace mlde {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainConfig

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    out.push_back("learning_rate must be a finite value >= 0");
  if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0)
    out.push_back("momentum must lie in [0, 1)");
  if (!std::isfinite(fusion_lr_scale) || fusion_lr_scale < 0.0)
    out.push_back("fusion_lr_scale must be a finite value >= 0");
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (epochs_per_stage.empty()) out.push_back("epochs_per_stage must list at least one stage");
  for (std::size_t i = 0; i < epochs_per_stage.size(); ++i)
    if (epochs_per_stage[i] < 1)
      out.push_back("epochs_per_stage[" + std::to_string(i) + "] must be >= 1");
  for (auto& v : scale_violations(scales)) out.push_back(std::move(v));
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(normalization.mean[c]))
      out.push_back("norm_mean[" + std::to_string(c) + "] must be finite");
    if (!std::isfinite(normalization.std[c]) || normalization.std[c] <= 0.0f)
      out.push_back("norm_std[" + std::to_string(c) + "] must be > 0");
  }
  if (backbone.kind == BackboneKind::resnet50_pretrained && backbone.weights_path.empty())
    out.push_back("backbone resnet50_pretrained requires pretrained_weights");
  if (backbone.head_outputs != kHeadOutputs)
    out.push_back("head must have exactly 2 outputs");
  if (branch_pretrain_epochs < 0) out.push_back("branch_pretrain_epochs must be >= 0");
  return out;
}

json TrainConfig::to_json() const {
  json j;
  j["learning_rate"] = learning_rate;
  j["momentum"] = momentum;
  j["fusion_lr_scale"] = fusion_lr_scale;
  j["batch_size"] = batch_size;
  j["epochs_per_stage"] = epochs_per_stage;
  j["seed"] = seed;
  j["backbone"] = {{"kind", std::string(to_string(backbone.kind))},
                   {"weights_path", backbone.weights_path.string()},
                   {"weights_sha256", backbone.weights_sha256},
                   {"xavier", std::string(to_string(backbone.xavier))}};
  j["scales"] = scales;
  j["norm_mean"] = normalization.mean;
  j["norm_std"] = normalization.std;
  j["deterministic"] = deterministic;
  j["branch_pretrain_epochs"] = branch_pretrain_epochs;
  j["hflip"] = hflip;
  j["loss"] = std::string(kLossName);
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  try {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.fusion_lr_scale = j.at("fusion_lr_scale").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs_per_stage = j.at("epochs_per_stage").get<std::vector<int>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& b = j.at("backbone");
    auto kind = parse_backbone_kind(b.at("kind").get<std::string>());
    if (!kind) throw ConfigError("unknown backbone kind " + b.at("kind").dump());
    auto xavier = parse_xavier_variant(b.at("xavier").get<std::string>());
    if (!xavier) throw ConfigError("unknown xavier variant " + b.at("xavier").dump());
    c.backbone = *kind == BackboneKind::tiny_test
                     ? BackboneSpec::tiny_test()
                     : BackboneSpec::resnet50_pretrained(b.at("weights_path").get<std::string>(),
                                                         b.at("weights_sha256").get<std::string>());
    c.backbone.xavier = *xavier;
    c.scales = j.at("scales").get<ScaleSet>();
    c.normalization.mean = j.at("norm_mean").get<std::array<float, 3>>();
    c.normalization.std = j.at("norm_std").get<std::array<float, 3>>();
    c.deterministic = j.at("deterministic").get<bool>();
    c.branch_pretrain_epochs = j.at("branch_pretrain_epochs").get<int>();
    c.hflip = j.at("hflip").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed training configuration: ") + e.what());
  }
}

std::string TrainConfig::hash() const {
  json j = to_json();
  j["backbone"].erase("weights_path");  // location of the weights is not part of the identity
  return sha256_hex(std::string_view(j.dump()));
}

// ---------------------------------------------------------------------------
// ImageStore

void ImageStore::insert(const std::string& image_id, ImageTensor image) {
  std::lock_guard lock(mutex_);
  memory_.insert_or_assign(image_id, std::move(image));
}

ImageTensor ImageStore::load(const std::string& image_id, const std::filesystem::path& path) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(image_id); it != memory_.end()) return it->second;
    if (auto it = decoded_.find(image_id); it != decoded_.end()) return it->second.to_tensor();
  }
  Rgb8Image raw;
  try {
    raw = read_rgb8(path);
  } catch (const Error& e) {
    throw DataError("image " + image_id + ": " + e.what());
  }
  ImageTensor img = raw.to_tensor();
  if (cache_decoded_) {
    std::lock_guard lock(mutex_);
    decoded_.emplace(image_id, std::move(raw));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Forward / backward

Ensemble build_ensemble(const TrainConfig& config, std::uint64_t seed,
                        const TensorArchive* pretrained) {
  std::optional<TensorArchive> owned;
  if (config.backbone.kind == BackboneKind::resnet50_pretrained && pretrained == nullptr) {
    owned = load_pretrained_weights(config.backbone);
    pretrained = &*owned;
  }
  Ensemble e;
  e.branches.reserve(kBranches);
  for (int k = 0; k < kBranches; ++k)
    e.branches.push_back(build_backbone(config.backbone, derive_seed(seed, k), pretrained));
  return e;
}

double positive_probability(double z0, double z1) {
  const double d = z1 - z0;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

namespace {

Tensor pack_level(std::span<const RoiPyramid> pyramids, int level, const ChannelStats& norm) {
  const int b = static_cast<int>(pyramids.size());
  Tensor out({b, 3, kNetworkInputSize, kNetworkInputSize});
  const std::size_t per_sample = 3 * static_cast<std::size_t>(kNetworkInputSize) * kNetworkInputSize;
  std::vector<std::exception_ptr> errors(pyramids.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    try {
      const ImageTensor& img = pyramids[i].levels.at(level);
      if (img.height() != kNetworkInputSize || img.width() != kNetworkInputSize)
        throw TrainingError("pyramid level is not 224 x 224");
      PlanarImage planar = normalize_channels(img, norm);
      std::copy_n(planar.planes.begin(), per_sample, out.sample(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct ForwardPass {
  std::vector<BranchProbabilities> p;
  std::vector<double> fused;
};

ForwardPass run_forward(Ensemble& ensemble, std::span<const RoiPyramid> pyramids,
                        const ChannelStats& norm, const FineTuneStage* stage) {
  if (ensemble.branches.size() != kBranches) throw TrainingError("ensemble must have 4 branches");
  const std::size_t b = pyramids.size();
  ForwardPass out;
  out.p.resize(b);
  out.fused.resize(b);
  for (int k = 0; k < kBranches; ++k) {
    Tensor input = pack_level(pyramids, k, norm);
    std::vector<double> logits = ensemble.branches[k].forward(input, stage);
    for (std::size_t i = 0; i < b; ++i)
      out.p[i][k] = positive_probability(logits[2 * i], logits[2 * i + 1]);
  }
  for (std::size_t i = 0; i < b; ++i) out.fused[i] = fuse(out.p[i], ensemble.fusion);
  return out;
}

}  // namespace

EnsembleOutput infer(Ensemble& ensemble, std::span<const RoiPyramid> pyramids,
                     const ChannelStats& normalization) {
  if (pyramids.empty()) return {};
  ForwardPass f = run_forward(ensemble, pyramids, normalization, nullptr);
  return {std::move(f.p), std::move(f.fused)};
}

double bce_loss(std::span<const double> fused, std::span<const int> labels) {
  if (fused.size() != labels.size() || fused.empty())
    throw TrainingError("loss needs one label per prediction");
  double sum = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const double f = std::clamp(fused[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    sum -= labels[i] == 1 ? std::log(f) : std::log1p(-f);
  }
  return sum / static_cast<double>(fused.size());
}

double batch_loss(Ensemble& ensemble, const Batch& batch, const ChannelStats& normalization) {
  EnsembleOutput out = infer(ensemble, batch.pyramids, normalization);
  return bce_loss(out.fused, batch.labels);
}

GradientResult compute_gradients(Ensemble& ensemble, const Batch& batch, const FineTuneStage& stage,
                                 const ChannelStats& normalization) {
  const std::size_t b = batch.pyramids.size();
  if (b == 0 || batch.labels.size() != b) throw TrainingError("batch needs one label per image");
  ForwardPass f = run_forward(ensemble, batch.pyramids, normalization, &stage);

  GradientResult r;
  r.loss = bce_loss(f.fused, batch.labels);
  if (!std::isfinite(r.loss)) throw TrainingError("non-finite loss");

  std::vector<std::vector<double>> grad_logits(kBranches, std::vector<double>(2 * b, 0.0));
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double fv = f.fused[i];
    const double y = batch.labels[i];
    double upstream = 0.0;
    if (fv > kProbabilityClamp && fv < 1.0 - kProbabilityClamp)
      upstream = (fv - y) / (fv * (1.0 - fv)) * inv_b;
    FusionGradients g = fuse_gradients(f.p[i], ensemble.fusion, upstream);
    for (int k = 0; k < kBranches; ++k) {
      r.alpha_grad[k] += g.alpha[k];
      const double pk = f.p[i][k];
      const double s = pk * (1.0 - pk) * g.p[k];
      grad_logits[k][2 * i] = -s;
      grad_logits[k][2 * i + 1] = s;
    }
  }
  for (int k = 0; k < kBranches; ++k) ensemble.branches[k].backward(grad_logits[k], stage);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

SgdMomentum::SgdMomentum(double learning_rate, double momentum, double fusion_lr_scale)
    : lr_(learning_rate), momentum_(momentum), fusion_lr_(learning_rate * fusion_lr_scale) {}

void SgdMomentum::apply(Ensemble& ensemble, const FineTuneStage& stage,
                        const std::array<double, kBranches>& alpha_grad) {
  const float lr = static_cast<float>(lr_);
  const float mu = static_cast<float>(momentum_);
  for (std::size_t k = 0; k < ensemble.branches.size(); ++k) {
    const std::string prefix = "branch" + std::to_string(k) + "/";
    ensemble.branches[k].visit_parameters([&](std::string_view group, Parameter& p) {
      if (!stage.trainable(group)) return;
      auto& v = velocity_[prefix + p.name];
      auto value = p.value.data();
      auto grad = p.grad.data();
      if (grad.size() != value.size()) throw TrainingError("missing gradient for " + p.name);
      if (v.size() != value.size()) v.assign(value.size(), 0.0f);
      for (std::size_t i = 0; i < value.size(); ++i) {
        v[i] = mu * v[i] + grad[i];
        value[i] -= lr * v[i];
      }
    });
  }
  for (int k = 0; k < kBranches; ++k) {
    alpha_velocity_[k] = momentum_ * alpha_velocity_[k] + alpha_grad[k];
    ensemble.fusion.alpha[k] -= fusion_lr_ * alpha_velocity_[k];
  }
}

double step(Ensemble& ensemble, const Batch& batch, SgdMomentum& optimizer,
            const FineTuneStage& stage, const ChannelStats& normalization) {
  GradientResult g = compute_gradients(ensemble, batch, stage, normalization);
  optimizer.apply(ensemble, stage, g.alpha_grad);
  return g.loss;
}

// ---------------------------------------------------------------------------
// Data preparation

std::vector<ImageRef> image_refs(const BinaryTaskView& task) {
  std::vector<ImageRef> refs;
  refs.reserve(task.entries.size());
  for (const auto& e : task.entries) refs.push_back({e.image_id, task.resolve(e)});
  return refs;
}

std::vector<ImageRef> image_refs(const DatasetManifest& manifest) {
  std::vector<ImageRef> refs;
  refs.reserve(manifest.size());
  for (const auto& e : manifest.entries()) refs.push_back({e.image_id, manifest.resolve(e)});
  return refs;
}

Batch prepare_batch(std::span<const ImageRef> images, std::span<const int> labels,
                    const TrainConfig& config, ImageStore& store,
                    std::span<const std::uint8_t> flips) {
  if (!labels.empty() && labels.size() != images.size())
    throw TrainingError("label count does not match image count");
  if (!flips.empty() && flips.size() != images.size())
    throw TrainingError("flip mask does not match image count");
  const int n = static_cast<int>(images.size());
  std::vector<std::optional<RoiPyramid>> built(images.size());
  std::vector<std::exception_ptr> errors(images.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      ImageTensor img = store.load(images[i].image_id, images[i].path);
      if (!flips.empty() && flips[i]) img = flip_horizontal(img);
      built[i] = extract_roi_pyramid(img, config.scales);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError("image " + images[i].image_id + ": " + e.what());
    }
  }
  Batch batch;
  batch.pyramids.reserve(images.size());
  for (auto& p : built) batch.pyramids.push_back(std::move(*p));
  batch.labels.assign(labels.begin(), labels.end());
  return batch;
}

EnsembleOutput score_images(Ensemble& ensemble, std::span<const ImageRef> images,
                            const TrainConfig& config, ImageStore& store) {
  EnsembleOutput out;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, config.batch_size));
  for (std::size_t start = 0; start < images.size(); start += bs) {
    auto chunk = images.subspan(start, std::min(bs, images.size() - start));
    Batch batch = prepare_batch(chunk, {}, config, store);
    EnsembleOutput part = infer(ensemble, batch.pyramids, config.normalization);
    out.branch.insert(out.branch.end(), part.branch.begin(), part.branch.end());
    out.fused.insert(out.fused.end(), part.fused.begin(), part.fused.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<int> labels_of(const BinaryTaskView& task, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(task.entries[i].label);
  return out;
}

std::vector<ImageRef> refs_of(std::span<const ImageRef> all, std::span<const std::size_t> idx) {
  std::vector<ImageRef> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

std::vector<std::uint8_t> draw_flips(std::size_t n, bool enabled, std::mt19937_64& rng) {
  std::vector<std::uint8_t> flips;
  if (!enabled) return flips;
  std::bernoulli_distribution coin(0.5);
  flips.resize(n);
  for (auto& f : flips) f = coin(rng) ? 1 : 0;
  return flips;
}

std::optional<double> validation_auc(Ensemble& ensemble, const BinaryTaskView* validation,
                                     const TrainConfig& config, ImageStore& store) {
  if (validation == nullptr || validation->degenerate() || validation->entries.empty())
    return std::nullopt;
  auto refs = image_refs(*validation);
  EnsembleOutput out = score_images(ensemble, refs, config, store);
  std::vector<int> labels;
  for (const auto& e : validation->entries) labels.push_back(e.label);
  return auc(out.fused, labels);
}

// Each branch is fitted on its own pyramid level with an independent BCE loss;
// alpha is left untouched.
void pretrain_branches(Ensemble& ensemble, const BinaryTaskView& task,
                       std::span<const ImageRef> refs, const TrainConfig& config,
                       ImageStore& store, std::mt19937_64& rng) {
  const FineTuneStage stage = full_unfreeze();
  SgdMomentum opt(config.learning_rate, config.momentum, 0.0);
  std::vector<std::size_t> order(task.entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.branch_pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      auto labels = labels_of(task, idx);
      auto chunk = refs_of(refs, idx);
      Batch batch = prepare_batch(chunk, labels, config, store);
      const std::size_t b = idx.size();
      for (int k = 0; k < kBranches; ++k) {
        Tensor input = pack_level(batch.pyramids, k, config.normalization);
        auto logits = ensemble.branches[k].forward(input, &stage);
        std::vector<double> grad(2 * b);
        std::vector<double> p(b);
        for (std::size_t i = 0; i < b; ++i) {
          p[i] = positive_probability(logits[2 * i], logits[2 * i + 1]);
          const double d = (p[i] - labels[i]) / static_cast<double>(b);
          grad[2 * i] = -d;
          grad[2 * i + 1] = d;
        }
        total += bce_loss(p, labels) * static_cast<double>(b) / kBranches;
        ensemble.branches[k].backward(grad, stage);
      }
      opt.apply(ensemble, stage, {});
    }
    spdlog::debug("{}: branch pretraining epoch {} loss {:.6f}", task.target.code, epoch,
                  total / static_cast<double>(order.size()));
  }
}

}  // namespace

TrainedModel train_task(const BinaryTaskView& task, const TrainConfig& config, ImageStore& store,
                        const TrainOptions& options) {
  if (auto bad = config.violations(); !bad.empty()) throw ConfigError(bad);
  ScopedWorkerLimit limit(config.deterministic ? 1 : 0);

  TrainedModel model{task.target, config, build_ensemble(config, config.seed, options.pretrained),
                     {}, false};
  if (task.entries.empty() || task.degenerate()) {
    spdlog::warn("{}: {}; model left untrained", task.target.code,
                 task.warning.value_or("no training images"));
    model.degenerate = true;
    return model;
  }

  const auto refs = image_refs(task);
  std::mt19937_64 rng(derive_seed(config.seed, 0x5eed));
  if (config.branch_pretrain_epochs > 0) pretrain_branches(model.ensemble, task, refs, config, store, rng);

  const auto schedule = freeze_schedule(config.epochs_per_stage.size());
  SgdMomentum opt(config.learning_rate, config.momentum, config.fusion_lr_scale);
  std::vector<std::size_t> order(task.entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  std::size_t epoch_counter = 0;

  for (const auto& stage : schedule) {
    for (int e = 0; e < config.epochs_per_stage[stage.stage_index]; ++e, ++epoch_counter) {
      std::shuffle(order.begin(), order.end(), rng);
      const auto flips = draw_flips(order.size(), config.hflip, rng);
      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t n = std::min(bs, order.size() - start);
        std::span<const std::size_t> idx(order.data() + start, n);
        auto labels = labels_of(task, idx);
        auto chunk = refs_of(refs, idx);
        auto batch_flips = flips.empty() ? std::span<const std::uint8_t>{}
                                         : std::span(flips).subspan(start, n);
        Batch batch = prepare_batch(chunk, labels, config, store, batch_flips);
        try {
          total += step(model.ensemble, batch, opt, stage, config.normalization) *
                   static_cast<double>(n);
        } catch (const TrainingError& err) {
          throw TrainingError(std::string(task.target.code) + " stage " +
                              std::to_string(stage.stage_index) + " epoch " +
                              std::to_string(epoch_counter) + " batch at image " +
                              chunk.front().image_id + ": " + err.what());
        }
      }
      EpochRecord rec{stage.stage_index, epoch_counter, total / static_cast<double>(order.size()),
                      validation_auc(model.ensemble, options.validation, config, store)};
      spdlog::info("{}: stage {} epoch {} loss {:.6f}{}", task.target.code, rec.stage, rec.epoch,
                   rec.loss,
                   rec.validation_auc ? fmt::format(" val_auc {:.4f}", *rec.validation_auc) : "");
      model.history.push_back(rec);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Task bank

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::trained: return "trained";
    case TaskStatus::degenerate: return "degenerate";
    case TaskStatus::failed: return "failed";
  }
  return "unknown";
}

std::size_t TaskBankSummary::count(TaskStatus status) const {
  return static_cast<std::size_t>(
      std::count_if(tasks.begin(), tasks.end(), [&](const auto& t) { return t.status == status; }));
}

TaskBankSummary run_task_bank(const DatasetManifest& manifest, const TrainConfig& config,
                              ImageStore& store, const ModelSink& sink,
                              const DatasetManifest* validation, const TensorArchive* pretrained) {
  if (auto bad = config.violations(); !bad.empty()) throw ConfigError(bad);
  std::optional<TensorArchive> owned;
  if (config.backbone.kind == BackboneKind::resnet50_pretrained && pretrained == nullptr) {
    owned = load_pretrained_weights(config.backbone);
    pretrained = &*owned;
  }

  TaskBankSummary summary;
  for (const auto& cls : class_taxonomy()) {
    TaskOutcome outcome{cls};
    try {
      BinaryTaskView task = derive_binary_task(manifest, cls);
      std::optional<BinaryTaskView> val;
      if (validation != nullptr && validation->labeled_count() > 0)
        val = derive_binary_task(*validation, cls);
      TrainConfig task_config = config;
      task_config.seed = config.seed + cls.index;
      TrainedModel model =
          train_task(task, task_config, store, {val ? &*val : nullptr, pretrained});
      outcome.status = model.degenerate ? TaskStatus::degenerate : TaskStatus::trained;
      outcome.message = task.warning.value_or("");
      if (!model.history.empty()) outcome.final_loss = model.history.back().loss;
      outcome.weights = model.ensemble.fusion.normalized_weights();
      sink(std::move(model));
    } catch (const std::exception& e) {
      outcome.status = TaskStatus::failed;
      outcome.message = e.what();
      spdlog::error("{}: task failed: {}", cls.code, e.what());
    }
    summary.tasks.push_back(std::move(outcome));
  }
  return summary;
}

std::vector<TrainedModel> run_task_bank(const DatasetManifest& manifest, const TrainConfig& config,
                                        ImageStore& store, TaskBankSummary* summary) {
  std::vector<TrainedModel> models;
  TaskBankSummary s =
      run_task_bank(manifest, config, store, [&](TrainedModel&& m) { models.push_back(std::move(m)); });
  if (summary != nullptr) *summary = std::move(s);
  return models;
}

}  // namespace mlde
