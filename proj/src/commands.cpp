#include "mlde/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include <spdlog/spdlog.h>

#include "mlde/errors.hpp"
#include "mlde/parallel.hpp"

namespace mlde {

using nlohmann::json;

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << j.dump(2) << '\n')) throw DataError("cannot write " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw DataError("cannot write " + path.string());
}

DatasetPredictions predict_eval_manifest(const RunConfig& config, const DatasetManifest& manifest) {
  auto models = load_task_models(config);
  ImageStore store(config.cache_images);
  return predict_dataset(models, manifest, store);
}

void write_prediction_files(const RunConfig& config, const DatasetPredictions& p) {
  write_predictions_csv(p.ensemble, config.out_dir / "predictions.csv");
  for (int k = 0; k < kBranches; ++k)
    write_predictions_csv(p.branches[k],
                          config.out_dir / ("predictions_branch" + std::to_string(k + 1) + ".csv"));
}

}  // namespace

void write_run_metadata(const RunConfig& config, std::string_view command) {
  json j;
  j["tool"] = "mlde";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["config_hash"] = config.train.hash();
  j["seed"] = config.train.seed;
  j["compiler"] = __VERSION__;
#ifdef _OPENMP
  j["openmp"] = _OPENMP;
#endif
  j["workers"] = worker_count();
  j["config"] = config.to_json();
  write_json(config.out_dir / "run_metadata.json", j);
}

int cmd_synth(const synth::Options& options) {
  const auto summary = synth::generate(options);
  spdlog::info("synthetic dataset written to {} ({} / {})", options.out_dir.string(),
               summary.train_manifest.filename().string(), summary.test_manifest.filename().string());
  return 0;
}

int cmd_train(const RunConfig& config) {
  require_keys(config, {"train_manifest"});
  const DatasetManifest manifest = load_manifest(config.train_manifest, Split::train);
  std::optional<DatasetManifest> validation;
  if (!config.validation_manifest.empty())
    validation = load_manifest(config.validation_manifest, Split::validation);

  const auto ckdir = config.checkpoints();
  std::filesystem::create_directories(ckdir);
  ImageStore store(config.cache_images);
  const TaskBankSummary summary = run_task_bank(
      manifest, config.train, store,
      [&](TrainedModel&& model) { save_checkpoint(model, ckdir / checkpoint_filename(model.target)); },
      validation ? &*validation : nullptr);

  json tasks = json::array();
  for (const auto& t : summary.tasks) {
    json row{{"class", std::string(t.target.code)},
             {"status", std::string(to_string(t.status))},
             {"message", t.message},
             {"final_loss", t.final_loss ? json(*t.final_loss) : json(nullptr)},
             {"fusion_weights", t.weights}};
    if (t.status != TaskStatus::failed)
      row["checkpoint"] = (ckdir / checkpoint_filename(t.target)).string();
    tasks.push_back(std::move(row));
  }
  write_json(config.out_dir / "train_summary.json",
             {{"tasks", tasks},
              {"trained", summary.count(TaskStatus::trained)},
              {"degenerate", summary.count(TaskStatus::degenerate)},
              {"failed", summary.count(TaskStatus::failed)}});
  write_run_metadata(config, "train");

  for (const auto& t : summary.tasks)
    std::cout << fmt::format("{:<6} {:<10} {}\n", t.target.code, to_string(t.status),
                             t.final_loss ? fmt::format("loss {:.6f}", *t.final_loss) : t.message);
  return summary.count(TaskStatus::failed) > 0 ? static_cast<int>(ErrorKind::training) : 0;
}

std::vector<TrainedModel> load_task_models(const RunConfig& config) {
  const auto ckdir = config.checkpoints();
  std::vector<std::string> missing;
  for (const auto& cls : class_taxonomy())
    if (!std::filesystem::exists(ckdir / checkpoint_filename(cls))) missing.emplace_back(cls.code);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw EvaluationError("missing checkpoint for class " + list + " in " + ckdir.string());
  }
  std::vector<TrainedModel> models;
  for (const auto& cls : class_taxonomy()) {
    models.push_back(load_checkpoint(ckdir / checkpoint_filename(cls), &config.train));
    if (models.back().target != cls)
      throw EvaluationError("checkpoint " + checkpoint_filename(cls) + " holds the model for " +
                            std::string(models.back().target.code));
  }
  return models;
}

int cmd_predict(const RunConfig& config) {
  require_keys(config, {"eval_manifest"});
  const DatasetManifest manifest = load_manifest(config.eval_manifest, Split::test);
  write_prediction_files(config, predict_eval_manifest(config, manifest));
  write_run_metadata(config, "predict");
  std::cout << "predictions: " << (config.out_dir / "predictions.csv").string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& config, EvaluationReport* report_out) {
  require_keys(config, {"eval_manifest"});
  const DatasetManifest manifest = load_manifest(config.eval_manifest, Split::test);
  if (manifest.labeled_count() != manifest.size())
    throw EvaluationError("evaluation needs a fully labeled manifest: " + config.eval_manifest.string());
  const DatasetPredictions predictions = predict_eval_manifest(config, manifest);
  write_prediction_files(config, predictions);
  EvaluationReport report = evaluate_predictions(predictions, manifest);
  write_json(config.out_dir / "evaluation.json", report.to_json());
  if (!config.roc_svg.empty()) write_roc_svg(predictions.ensemble, manifest, config.roc_svg);
  write_run_metadata(config, "evaluate");
  std::cout << report.render_table(false);
  if (report_out != nullptr) *report_out = std::move(report);
  return 0;
}

int cmd_report(const RunConfig& config) {
  EvaluationReport report;
  const auto cached = config.out_dir / "evaluation.json";
  if (std::filesystem::exists(cached)) {
    std::ifstream in(cached);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw EvaluationError("cannot parse " + cached.string() + ": " + e.what());
    }
    report = EvaluationReport::from_json(j);
  } else {
    cmd_evaluate(config, &report);
  }
  const std::string table = "Comparison of ensemble and single-branch classifiers (AUC)\n\n" +
                            report.render_table(true);
  write_text(config.out_dir / "report.txt", table);
  write_json(config.out_dir / "report.json", report.to_json());
  std::cout << table;
  return 0;
}

}  // namespace mlde
