#include <cstdio>
#include <system_error>

#include "mlde/errors.hpp"
#include "mlde/tensor_archive.hpp"
#include "mlde/training.hpp"

namespace mlde {

using nlohmann::json;

namespace {

std::string tensor_key(std::size_t branch, std::string_view name) {
  return "branch" + std::to_string(branch) + "/" + std::string(name);
}

json history_json(const std::vector<EpochRecord>& history) {
  json out = json::array();
  for (const auto& r : history) {
    json rec{{"stage", r.stage}, {"epoch", r.epoch}, {"loss", r.loss}};
    rec["validation_auc"] = r.validation_auc ? json(*r.validation_auc) : json(nullptr);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<EpochRecord> history_from(const json& j) {
  std::vector<EpochRecord> out;
  for (const auto& r : j) {
    EpochRecord rec{r.at("stage").get<std::size_t>(), r.at("epoch").get<std::size_t>(),
                    r.at("loss").get<double>(), std::nullopt};
    if (!r.at("validation_auc").is_null()) rec.validation_auc = r.at("validation_auc").get<double>();
    out.push_back(rec);
  }
  return out;
}

void restore(Parameter& p, const TensorArchive& archive, const std::string& key) {
  if (!archive.contains(key)) throw CheckpointError("checkpoint is missing tensor " + key);
  const ArchiveTensor& t = archive.at(key);
  if (t.dims != p.dims) throw CheckpointError("checkpoint tensor " + key + " has the wrong shape");
  auto values = t.as_f32();
  std::copy(values.begin(), values.end(), p.value.data().begin());
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  TensorArchive archive;
  auto& meta = archive.meta();
  meta["checkpoint_version"] = kCheckpointVersion;
  meta["target"] = std::string(model.target.code);
  meta["degenerate"] = model.degenerate;
  meta["config"] = model.config.to_json();
  meta["config_hash"] = model.config.hash();
  meta["history"] = history_json(model.history);
  meta["fusion"] = {{"alpha", model.ensemble.fusion.alpha},
                    {"weights", model.ensemble.fusion.normalized_weights()}};
  meta["branches"] = model.ensemble.branches.size();

  for (std::size_t k = 0; k < model.ensemble.branches.size(); ++k) {
    const BranchNetwork& branch = model.ensemble.branches[k];
    auto add = [&](std::string_view, const Parameter& p) {
      archive.add(tensor_key(k, p.name), p.dims, p.value.data());
    };
    branch.visit_parameters(add);
    branch.visit_buffers(add);
  }
  archive.add("fusion.alpha", {kBranches}, std::span<const double>(model.ensemble.fusion.alpha));

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  // Write beside the target and rename so an interrupted save never leaves a
  // half-written checkpoint under the final name.
  auto tmp = path;
  tmp += ".partial";
  archive.save(tmp, "checkpoint");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw CheckpointError("cannot write checkpoint " + path.string());
  }
}

TrainedModel load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  TensorArchive archive = TensorArchive::load(path, "checkpoint");
  const json& meta = archive.meta();
  try {
    const int version = meta.at("checkpoint_version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " +
                            path.string());
    auto target = find_class(meta.at("target").get<std::string>());
    if (!target) throw CheckpointError("unknown target class in " + path.string());

    TrainConfig config = TrainConfig::from_json(meta.at("config"));
    if (config.hash() != meta.at("config_hash").get<std::string>())
      throw CheckpointError("configuration hash mismatch in " + path.string());

    if (expected != nullptr) {
      std::vector<std::string> diffs;
      if (expected->scales != config.scales) diffs.push_back("scales");
      if (expected->normalization.mean != config.normalization.mean ||
          expected->normalization.std != config.normalization.std)
        diffs.push_back("normalization");
      if (expected->backbone.kind != config.backbone.kind) diffs.push_back("backbone");
      if (!diffs.empty()) {
        std::string list;
        for (const auto& d : diffs) list += (list.empty() ? "" : ", ") + d;
        throw ConfigMismatchError("checkpoint " + path.string() +
                                  " was trained with different " + list);
      }
    }

    Ensemble ensemble;
    const auto branches = meta.at("branches").get<std::size_t>();
    if (branches != kBranches) throw CheckpointError("checkpoint must hold 4 branches");
    for (std::size_t k = 0; k < branches; ++k) {
      BranchNetwork net = make_branch_skeleton(config.backbone);
      auto fill = [&](std::string_view, Parameter& p) { restore(p, archive, tensor_key(k, p.name)); };
      net.visit_parameters(fill);
      net.visit_buffers(fill);
      ensemble.branches.push_back(std::move(net));
    }
    if (!archive.contains("fusion.alpha")) throw CheckpointError("checkpoint is missing fusion.alpha");
    auto alpha = archive.at("fusion.alpha").as_f64();
    if (alpha.size() != kBranches) throw CheckpointError("fusion.alpha must have 4 entries");
    std::copy(alpha.begin(), alpha.end(), ensemble.fusion.alpha.begin());

    return TrainedModel{*target, std::move(config), std::move(ensemble),
                        history_from(meta.at("history")), meta.at("degenerate").get<bool>()};
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  }
}

std::string checkpoint_filename(const DiagnosisClass& target) {
  return std::string(target.code) + ".ckpt";
}

}  // namespace mlde
