#include "mlde/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <spdlog/spdlog.h>

#include "mlde/errors.hpp"
#include "mlde/seeding.hpp"
#include "mlde/tensor_archive.hpp"

namespace mlde {

std::string_view to_string(BackboneKind kind) {
  return kind == BackboneKind::tiny_test ? "tiny_test" : "resnet50_pretrained";
}

std::optional<BackboneKind> parse_backbone_kind(std::string_view name) {
  if (name == "tiny_test") return BackboneKind::tiny_test;
  if (name == "resnet50_pretrained") return BackboneKind::resnet50_pretrained;
  return std::nullopt;
}

std::string_view to_string(XavierVariant v) {
  return v == XavierVariant::uniform ? "uniform" : "normal";
}

std::optional<XavierVariant> parse_xavier_variant(std::string_view name) {
  if (name == "uniform") return XavierVariant::uniform;
  if (name == "normal") return XavierVariant::normal;
  return std::nullopt;
}

BackboneSpec BackboneSpec::tiny_test() {
  BackboneSpec spec;
  spec.kind = BackboneKind::tiny_test;
  spec.feature_dim = 24;
  spec.layer_groups = {{"stem", 6, 56},   {"block1", 8, 28}, {"block2", 12, 14},
                       {"block3", 16, 7}, {"block4", 24, 4}, {"head", 0, 0}};
  return spec;
}

BackboneSpec BackboneSpec::resnet50_pretrained(std::filesystem::path weights, std::string sha256) {
  BackboneSpec spec;
  spec.kind = BackboneKind::resnet50_pretrained;
  spec.feature_dim = kResNet50FeatureDim;
  spec.layer_groups = {{"stem", 64, 56},    {"block1", 256, 56}, {"block2", 512, 28},
                       {"block3", 1024, 14}, {"block4", 2048, 7}, {"head", 0, 0}};
  spec.weights_path = std::move(weights);
  spec.weights_sha256 = std::move(sha256);
  return spec;
}

// ------------------------------------------------------------- schedule

std::vector<FineTuneStage> freeze_schedule(std::size_t total_stages) {
  if (total_stages < 1) throw ConfigError("freeze schedule needs at least one stage");
  std::vector<FineTuneStage> stages;
  stages.reserve(total_stages);
  FineTuneStage current{0, {"head"}};
  // Groups in unfreeze order: head first, then backwards towards the stem.
  std::size_t next = kLayerGroups.size() - 1;
  for (std::size_t s = 0; s < total_stages; ++s) {
    if (s > 0 && next > 0) current.trainable_groups.insert(std::string(kLayerGroups[--next]));
    current.stage_index = s;
    stages.push_back(current);
  }
  return stages;
}

FineTuneStage full_unfreeze() {
  FineTuneStage stage;
  stage.stage_index = kLayerGroups.size() - 1;
  for (auto g : kLayerGroups) stage.trainable_groups.insert(std::string(g));
  return stage;
}

// ---------------------------------------------------------------- xavier

double xavier_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

std::vector<float> xavier_init(int fan_in, int fan_out, std::mt19937_64& rng, XavierVariant variant) {
  if (fan_in < 1 || fan_out < 1) throw ConfigError("xavier_init requires positive fan-in/out");
  std::vector<float> w(static_cast<std::size_t>(fan_in) * fan_out);
  if (variant == XavierVariant::uniform) {
    const auto a = static_cast<float>(xavier_bound(fan_in, fan_out));
    std::uniform_real_distribution<float> dist(-a, a);
    for (auto& v : w) v = dist(rng);
  } else {
    std::normal_distribution<float> dist(
        0.0f, static_cast<float>(std::sqrt(2.0 / static_cast<double>(fan_in + fan_out))));
    for (auto& v : w) v = dist(rng);
  }
  return w;
}

// ------------------------------------------------------------ LinearHead

LinearHead::LinearHead(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_{"fc.weight", {out_features, in_features}, Tensor({out_features, in_features, 1, 1}),
              Tensor({out_features, in_features, 1, 1})},
      bias_{"fc.bias", {out_features}, Tensor({out_features, 1, 1, 1}),
            Tensor({out_features, 1, 1, 1})} {}

std::vector<double> LinearHead::forward(const Tensor& features, bool keep_cache) {
  const int batch = features.shape().n;
  if (features.shape().c != in_) throw TrainingError("head input width mismatch");
  std::vector<double> logits(static_cast<std::size_t>(batch) * out_);
  const float* w = weight_.value.data().data();
  const float* f = features.data().data();
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < out_; ++o) {
      double acc = bias_.value[o];
      const float* wr = w + static_cast<std::size_t>(o) * in_;
      const float* fr = f + static_cast<std::size_t>(b) * in_;
      for (int i = 0; i < in_; ++i) acc += static_cast<double>(wr[i]) * fr[i];
      logits[static_cast<std::size_t>(b) * out_ + o] = acc;
    }
  }
  if (keep_cache) cached_features_ = features;
  return logits;
}

Tensor LinearHead::backward(std::span<const double> grad_logits, BackwardMode mode) {
  const int batch = cached_features_.shape().n;
  const float* f = cached_features_.data().data();
  if (mode.param_grads) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out_; ++o) {
      for (int i = 0; i < in_; ++i) {
        double acc = 0.0;
        for (int b = 0; b < batch; ++b) {
          acc += grad_logits[static_cast<std::size_t>(b) * out_ + o] * f[static_cast<std::size_t>(b) * in_ + i];
        }
        weight_.grad[static_cast<std::size_t>(o) * in_ + i] = static_cast<float>(acc);
      }
      double acc = 0.0;
      for (int b = 0; b < batch; ++b) acc += grad_logits[static_cast<std::size_t>(b) * out_ + o];
      bias_.grad[o] = static_cast<float>(acc);
    }
  }
  if (!mode.input_grad) return {};
  Tensor gx(cached_features_.shape());
  const float* w = weight_.value.data().data();
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < in_; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out_; ++o) {
        acc += grad_logits[static_cast<std::size_t>(b) * out_ + o] * w[static_cast<std::size_t>(o) * in_ + i];
      }
      gx[static_cast<std::size_t>(b) * in_ + i] = static_cast<float>(acc);
    }
  }
  return gx;
}

void LinearHead::visit_parameters(const std::function<void(Parameter&)>& fn) {
  fn(weight_);
  fn(bias_);
}

// --------------------------------------------------------- BranchNetwork

BranchNetwork::BranchNetwork(BackboneSpec spec, std::vector<std::pair<std::string, Sequential>> body,
                             LinearHead head)
    : spec_(std::move(spec)), body_(std::move(body)), head_(std::move(head)) {}

std::vector<std::string> BranchNetwork::group_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : body_) names.push_back(name);
  names.emplace_back("head");
  return names;
}

std::optional<std::size_t> BranchNetwork::lowest_trainable(const FineTuneStage& stage) const {
  for (std::size_t g = 0; g < body_.size(); ++g) {
    if (stage.trainable(body_[g].first)) return g;
  }
  return std::nullopt;
}

Tensor BranchNetwork::features(const Tensor& input, const FineTuneStage* training_stage) {
  const auto lowest = training_stage ? lowest_trainable(*training_stage) : std::nullopt;
  Tensor h = input;
  for (std::size_t g = 0; g < body_.size(); ++g) {
    h = body_[g].second.forward(h, lowest && g >= *lowest);
  }
  const auto& sh = h.shape();
  pooled_from_ = sh;
  Tensor pooled({sh.n, sh.c, 1, 1});
  const std::size_t plane = sh.plane();
  const int planes = sh.n * sh.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const float* src = h.data().data() + p * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    pooled[p] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return pooled;
}

std::vector<double> BranchNetwork::forward(const Tensor& input, const FineTuneStage* training_stage) {
  if (head_.out_features() != kHeadOutputs) {
    throw TrainingError("branch head has " + std::to_string(head_.out_features()) +
                        " outputs; replace_head() before use");
  }
  const Tensor pooled = features(input, training_stage);
  return head_.forward(pooled, training_stage != nullptr);
}

void BranchNetwork::backward(std::span<const double> grad_logits, const FineTuneStage& stage) {
  const auto lowest = lowest_trainable(stage);
  Tensor g = head_.backward(grad_logits, {lowest.has_value(), stage.trainable("head")});
  if (!lowest) return;

  // Undo global average pooling.
  Tensor spread(pooled_from_);
  const std::size_t plane = pooled_from_.plane();
  const float inv = 1.0f / static_cast<float>(plane);
  const int planes = pooled_from_.n * pooled_from_.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    std::fill_n(spread.data().data() + p * plane, plane, g[p] * inv);
  }
  g = std::move(spread);
  for (std::size_t gi = body_.size(); gi-- > *lowest;) {
    g = body_[gi].second.backward(g, {gi > *lowest, stage.trainable(body_[gi].first)});
  }
}

void BranchNetwork::replace_head(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LinearHead fresh(feature_dim(), kHeadOutputs);
  const auto w = xavier_init(feature_dim(), kHeadOutputs, rng, spec_.xavier);
  std::copy(w.begin(), w.end(), fresh.weight().value.data().begin());
  head_ = std::move(fresh);
  spec_.head_outputs = kHeadOutputs;
}

void BranchNetwork::visit_parameters(
    const std::function<void(std::string_view group, Parameter&)>& fn) {
  for (auto& [name, seq] : body_) {
    seq.visit_parameters([&](Parameter& p) { fn(name, p); });
  }
  head_.visit_parameters([&](Parameter& p) { fn("head", p); });
}

void BranchNetwork::visit_buffers(const std::function<void(std::string_view group, Parameter&)>& fn) {
  for (auto& [name, seq] : body_) {
    seq.visit_buffers([&](Parameter& p) { fn(name, p); });
  }
}

void BranchNetwork::visit_parameters(
    const std::function<void(std::string_view group, const Parameter&)>& fn) const {
  const_cast<BranchNetwork*>(this)->visit_parameters(
      [&](std::string_view group, Parameter& p) { fn(group, p); });
}

void BranchNetwork::visit_buffers(
    const std::function<void(std::string_view group, const Parameter&)>& fn) const {
  const_cast<BranchNetwork*>(this)->visit_buffers(
      [&](std::string_view group, Parameter& p) { fn(group, p); });
}

namespace {

void hash_param(std::vector<std::uint8_t>& buf, const Parameter& p) {
  buf.insert(buf.end(), p.name.begin(), p.name.end());
  const auto data = p.value.data();
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(data.data());
  buf.insert(buf.end(), bytes, bytes + data.size_bytes());
}

}  // namespace

std::string BranchNetwork::body_digest() {
  std::vector<std::uint8_t> buf;
  for (auto& [name, seq] : body_) {
    seq.visit_parameters([&](Parameter& p) { hash_param(buf, p); });
    seq.visit_buffers([&](Parameter& p) { hash_param(buf, p); });
  }
  return sha256_hex(buf);
}

std::string BranchNetwork::head_digest() {
  std::vector<std::uint8_t> buf;
  head_.visit_parameters([&](Parameter& p) { hash_param(buf, p); });
  return sha256_hex(buf);
}

// -------------------------------------------------------- architectures

namespace {

std::vector<std::pair<std::string, Sequential>> tiny_body() {
  struct Def {
    const char* name;
    int in, out, kernel, stride, pad;
  };
  constexpr Def defs[] = {{"stem", 3, 6, 4, 4, 0},
                          {"block1", 6, 8, 3, 2, 1},
                          {"block2", 8, 12, 3, 2, 1},
                          {"block3", 12, 16, 3, 2, 1},
                          {"block4", 16, 24, 3, 2, 1}};
  std::vector<std::pair<std::string, Sequential>> body;
  for (const auto& d : defs) {
    Sequential seq;
    seq.add(std::make_unique<Conv2d>(std::string(d.name) + ".conv", d.in, d.out, d.kernel, d.stride,
                                     d.pad, true))
        .add(std::make_unique<ReLU>());
    body.emplace_back(d.name, std::move(seq));
  }
  return body;
}

std::vector<std::pair<std::string, Sequential>> resnet50_body() {
  std::vector<std::pair<std::string, Sequential>> body;
  Sequential stem;
  stem.add(std::make_unique<Conv2d>("conv1", 3, 64, 7, 2, 3, false))
      .add(std::make_unique<BatchNorm2d>("bn1", 64))
      .add(std::make_unique<ReLU>())
      .add(std::make_unique<MaxPool2d>(3, 2, 1));
  body.emplace_back("stem", std::move(stem));

  struct Stage {
    int blocks, mid, out, stride;
  };
  constexpr Stage stages[] = {{3, 64, 256, 1}, {4, 128, 512, 2}, {6, 256, 1024, 2}, {3, 512, 2048, 2}};
  int in = 64;
  for (int s = 0; s < 4; ++s) {
    Sequential layer;
    for (int b = 0; b < stages[s].blocks; ++b) {
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      layer.add(std::make_unique<Bottleneck>(name, in, stages[s].mid, stages[s].out,
                                             b == 0 ? stages[s].stride : 1));
      in = stages[s].out;
    }
    body.emplace_back("block" + std::to_string(s + 1), std::move(layer));
  }
  return body;
}

// Kaiming-uniform body init for the seeded test backbone.
void init_tiny(BranchNetwork& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  net.visit_parameters([&](std::string_view group, Parameter& p) {
    if (group == "head") return;
    if (p.dims.size() == 4) {
      const double fan_in = static_cast<double>(p.dims[1] * p.dims[2] * p.dims[3]);
      const auto bound = static_cast<float>(std::sqrt(6.0 / fan_in));
      std::uniform_real_distribution<float> dist(-bound, bound);
      for (auto& v : p.value.data()) v = dist(rng);
    } else {
      p.value.fill(0.0f);
    }
  });
}

}  // namespace

BranchNetwork make_branch_skeleton(const BackboneSpec& spec) {
  if (spec.kind == BackboneKind::tiny_test) {
    return BranchNetwork(spec, tiny_body(), LinearHead(spec.feature_dim, kHeadOutputs));
  }
  return BranchNetwork(spec, resnet50_body(), LinearHead(kResNet50FeatureDim, kHeadOutputs));
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> resnet50_weight_manifest() {
  BranchNetwork net(BackboneSpec::resnet50_pretrained({}, {}), resnet50_body(),
                    LinearHead(kResNet50FeatureDim, kImageNetClasses));
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  net.visit_parameters([&](std::string_view, Parameter& p) { out.emplace_back(p.name, p.dims); });
  net.visit_buffers([&](std::string_view, Parameter& p) { out.emplace_back(p.name, p.dims); });
  return out;
}

BranchNetwork load_pretrained_resnet50(const BackboneSpec& spec, const TensorArchive& weights) {
  const int head_out = weights.contains("fc.bias")
                           ? static_cast<int>(weights.at("fc.bias").element_count())
                           : kImageNetClasses;
  BranchNetwork net(spec, resnet50_body(), LinearHead(kResNet50FeatureDim, head_out));
  const auto assign = [&](std::string_view, Parameter& p) {
    const auto& t = weights.at(p.name);
    if (t.dims != p.dims) {
      std::string expected, got;
      for (auto d : p.dims) expected += std::to_string(d) + " ";
      for (auto d : t.dims) got += std::to_string(d) + " ";
      throw CheckpointError("pretrained tensor '" + p.name + "' has shape [ " + got +
                            "], expected [ " + expected + "]");
    }
    const auto values = t.as_f32();
    std::copy(values.begin(), values.end(), p.value.data().begin());
  };
  net.visit_parameters(assign);
  net.visit_buffers(assign);
  return net;
}

TensorArchive load_pretrained_weights(const BackboneSpec& spec) {
  if (spec.weights_path.empty()) throw CheckpointError("no pretrained weight file configured");
  if (!std::filesystem::exists(spec.weights_path)) {
    throw CheckpointError("pretrained weight file not found: " + spec.weights_path.string());
  }
  if (spec.weights_sha256.empty()) {
    spdlog::warn("no checksum configured for {}; skipping verification", spec.weights_path.string());
  } else {
    const auto actual = file_sha256(spec.weights_path);
    if (actual != spec.weights_sha256) {
      throw CheckpointError("checksum mismatch for " + spec.weights_path.string() + ": expected " +
                            spec.weights_sha256 + ", got " + actual);
    }
  }
  return TensorArchive::load(spec.weights_path, "weights");
}

BranchNetwork build_backbone(const BackboneSpec& spec, std::uint64_t seed,
                             const TensorArchive* pretrained) {
  if (spec.head_outputs != kHeadOutputs) throw ConfigError("branch heads must have 2 outputs");
  if (spec.kind == BackboneKind::tiny_test) {
    BranchNetwork net(spec, tiny_body(), LinearHead(spec.feature_dim, kHeadOutputs));
    init_tiny(net, derive_seed(seed, 0));
    net.replace_head(derive_seed(seed, 1));
    return net;
  }
  std::optional<TensorArchive> owned;
  if (!pretrained) {
    owned = load_pretrained_weights(spec);
    pretrained = &*owned;
  }
  BranchNetwork net = load_pretrained_resnet50(spec, *pretrained);
  net.replace_head(derive_seed(seed, 1));
  return net;
}

}  // namespace mlde
