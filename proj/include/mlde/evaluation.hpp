#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlde/dataset.hpp"
#include "mlde/fusion.hpp"

namespace mlde {

struct TrainedModel;
class ImageStore;

/// Mann-Whitney AUC: P(score_pos > score_neg) with ties counting one half.
/// Throws EvaluationError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Thresholds at each distinct score, highest first; tied scores move both
/// coordinates in one step. Starts at (0,0) and ends at (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double trapezoid_area(std::span<const RocPoint> curve);

/// Arithmetic mean of exactly seven per-task values in [0, 1].
double mean_auc(std::span<const double> per_task);

/// One row per image, one column per class in canonical order.
struct PredictionTable {
  std::vector<std::string> image_ids;
  std::vector<std::array<double, kNumClasses>> rows;
};

struct DatasetPredictions {
  PredictionTable ensemble;
  std::array<PredictionTable, kBranches> branches;
};

/// Scores every manifest image with the model for each class. `models` must
/// hold exactly one model per class (any order).
DatasetPredictions predict_dataset(std::span<TrainedModel> models, const DatasetManifest& manifest,
                                   ImageStore& store);

inline constexpr std::string_view kPredictionHeader = "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC";

void write_predictions_csv(const PredictionTable& table, const std::filesystem::path& path);
PredictionTable read_predictions_csv(const std::filesystem::path& path);

/// Published mean AUC (%) for the full-scale system, kept for reference in reports.
struct PublishedScores {
  double ensemble = 86.5;
  std::array<double, kBranches> branches{83.1, 85.2, 84.1, 83.0};
  double prose_online_score = 90.2;
};

inline constexpr std::array<std::string_view, kBranches + 1> kReportColumns{
    "MLDE", "branch1", "branch2", "branch3", "branch4"};

struct EvaluationReport {
  std::vector<std::string> task_names;    // class codes when there are seven tasks
  std::vector<double> per_task_auc;       // ensemble
  std::array<std::vector<double>, kBranches> branch_task_auc;
  double mean_auc = 0.0;                  // ensemble mean over tasks
  std::array<double, kBranches> per_branch_auc{};  // per-branch mean over tasks
  bool ensemble_beats_every_branch = false;

  double ensemble_mean_auc() const noexcept { return mean_auc; }
  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
  /// Aligned console table: one column for the ensemble and one per branch.
  std::string render_table(bool include_published = true) const;
};

/// Builds the comparison from per-task AUCs. All five sequences must have the
/// same nonzero length (they must come from the same evaluation set).
EvaluationReport compare_report(std::span<const double> ensemble_auc,
                                const std::array<std::vector<double>, kBranches>& branch_auc);

/// Per-task AUCs against a labeled manifest. The prediction rows must follow
/// the manifest order.
EvaluationReport evaluate_predictions(const DatasetPredictions& predictions,
                                      const DatasetManifest& labeled);

/// Writes ROC curves of the seven ensemble tasks as an SVG plot.
void write_roc_svg(const PredictionTable& ensemble, const DatasetManifest& labeled,
                   const std::filesystem::path& path);

}  // namespace mlde
