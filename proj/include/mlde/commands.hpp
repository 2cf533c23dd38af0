#pragma once

#include <filesystem>
#include <vector>

#include "mlde/config.hpp"
#include "mlde/evaluation.hpp"
#include "mlde/synth.hpp"
#include "mlde/training.hpp"

namespace mlde {

inline constexpr std::string_view kToolVersion = "1.0.0";

// Each command returns the process exit code; failures that stop the command
// outright are thrown as mlde::Error and mapped by the caller.

/// Synthetic multiscale dataset.
int cmd_synth(const synth::Options& options);

/// Trains the seven one-vs-rest models and writes <CODE>.ckpt per class,
/// train_summary.json and run_metadata.json. Returns 4 if any task failed.
int cmd_train(const RunConfig& config);

/// Loads all seven checkpoints from the checkpoint directory.
std::vector<TrainedModel> load_task_models(const RunConfig& config);

/// Writes predictions.csv (ensemble) and predictions_branch<k>.csv.
int cmd_predict(const RunConfig& config);

/// Scores the labeled eval manifest and writes evaluation.json; prints the
/// comparison table.
int cmd_evaluate(const RunConfig& config, EvaluationReport* report = nullptr);

/// Writes report.txt and report.json in the comparison-table layout, reusing
/// evaluation.json when present.
int cmd_report(const RunConfig& config);

/// run_metadata.json: command, config hash, seed, versions, resolved config.
void write_run_metadata(const RunConfig& config, std::string_view command);

}  // namespace mlde
