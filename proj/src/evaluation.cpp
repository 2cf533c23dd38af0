#include "mlde/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mlde/errors.hpp"
#include "mlde/training.hpp"

namespace mlde {

namespace {

void check_scored_set(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw EvaluationError("scores and labels differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw EvaluationError("non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw EvaluationError("labels must be 0 or 1");
  }
}

std::pair<std::size_t, std::size_t> class_sizes(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {pos, labels.size() - pos};
}

void require_both_classes(std::size_t pos, std::size_t neg) {
  if (pos == 0 || neg == 0)
    throw EvaluationError(pos == 0 ? "AUC undefined: no positive examples"
                                   : "AUC undefined: no negative examples");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  return idx;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_scored_set(scores, labels);
  const auto [pos, neg] = class_sizes(labels);
  require_both_classes(pos, neg);

  // Twice the Mann-Whitney U, counted exactly in integers.
  const auto idx = order_by_score(scores);
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? p : n) += 1;
      ++j;
    }
    twice_u += 2 * p * neg_below + p * n;
    neg_below += n;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_scored_set(scores, labels);
  const auto [pos, neg] = class_sizes(labels);
  require_both_classes(pos, neg);

  auto idx = order_by_score(scores);
  std::reverse(idx.begin(), idx.end());
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  return area;
}

double mean_auc(std::span<const double> per_task) {
  if (per_task.size() != kNumClasses)
    throw EvaluationError("mean AUC needs exactly 7 task values, got " +
                          std::to_string(per_task.size()));
  double sum = 0.0;
  for (double v : per_task) {
    if (!(v >= 0.0 && v <= 1.0)) throw EvaluationError("AUC values must lie in [0, 1]");
    sum += v;
  }
  return sum / static_cast<double>(kNumClasses);
}

// ---------------------------------------------------------------------------
// Prediction tables

DatasetPredictions predict_dataset(std::span<TrainedModel> models, const DatasetManifest& manifest,
                                   ImageStore& store) {
  std::array<TrainedModel*, kNumClasses> by_class{};
  for (auto& m : models) {
    if (by_class[m.target.index] != nullptr)
      throw EvaluationError("two models for class " + std::string(m.target.code));
    by_class[m.target.index] = &m;
  }
  for (const auto& cls : class_taxonomy())
    if (by_class[cls.index] == nullptr)
      throw EvaluationError("no model for class " + std::string(cls.code));

  const auto refs = image_refs(manifest);
  DatasetPredictions out;
  auto init = [&](PredictionTable& t) {
    t.image_ids.clear();
    for (const auto& r : refs) t.image_ids.push_back(r.image_id);
    t.rows.assign(refs.size(), {});
  };
  init(out.ensemble);
  for (auto& b : out.branches) init(b);

  for (const auto& cls : class_taxonomy()) {
    TrainedModel& model = *by_class[cls.index];
    EnsembleOutput scores = score_images(model.ensemble, refs, model.config, store);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      out.ensemble.rows[i][cls.index] = scores.fused[i];
      for (int k = 0; k < kBranches; ++k) out.branches[k].rows[i][cls.index] = scores.branch[i][k];
    }
  }
  return out;
}

void write_predictions_csv(const PredictionTable& table, const std::filesystem::path& path) {
  if (table.image_ids.size() != table.rows.size())
    throw EvaluationError("prediction table has mismatched ids and rows");
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EvaluationError("cannot write " + path.string());
  out << kPredictionHeader << '\n';
  char cell[32];
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    out << table.image_ids[i];
    for (double v : table.rows[i]) {
      if (!std::isfinite(v)) throw EvaluationError("non-finite score for " + table.image_ids[i]);
      std::snprintf(cell, sizeof cell, ",%.6f", v);
      out << cell;
    }
    out << '\n';
  }
  if (!out) throw EvaluationError("failed writing " + path.string());
}

PredictionTable read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvaluationError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw EvaluationError("empty prediction file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPredictionHeader)
    throw EvaluationError("unexpected prediction header in " + path.string());

  PredictionTable t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != kNumClasses + 1)
      throw EvaluationError(fmt::format("{}:{}: expected 8 fields", path.string(), line_no));
    std::array<double, kNumClasses> row{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      char* end = nullptr;
      row[c] = std::strtod(fields[c + 1].c_str(), &end);
      if (end == fields[c + 1].c_str() || *end != '\0' || !std::isfinite(row[c]))
        throw EvaluationError(fmt::format("{}:{}: bad number '{}'", path.string(), line_no,
                                          fields[c + 1]));
    }
    t.image_ids.push_back(fields[0]);
    t.rows.push_back(row);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

double plain_mean(std::span<const double> v) {
  return v.size() == kNumClasses ? mean_auc(v)
                                 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> column(const PredictionTable& t, std::size_t c) {
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back(r[c]);
  return out;
}

std::vector<int> binary_labels(const DatasetManifest& m, std::size_t c) {
  std::vector<int> out;
  out.reserve(m.size());
  for (const auto& e : m.entries()) {
    if (!e.label) throw EvaluationError("evaluation manifest entry " + e.image_id + " has no label");
    out.push_back(*e.label == c ? 1 : 0);
  }
  return out;
}

void check_alignment(const PredictionTable& t, const DatasetManifest& m) {
  if (t.rows.size() != m.size() || t.image_ids.size() != m.size())
    throw EvaluationError("predictions and evaluation manifest differ in length");
  for (std::size_t i = 0; i < m.size(); ++i)
    if (t.image_ids[i] != m.entries()[i].image_id)
      throw EvaluationError("prediction row " + std::to_string(i) + " is " + t.image_ids[i] +
                            ", manifest has " + m.entries()[i].image_id);
}

double task_auc(std::span<const double> scores, std::span<const int> labels, std::string_view code) {
  try {
    return auc(scores, labels);
  } catch (const EvaluationError& e) {
    throw EvaluationError(std::string(code) + ": " + e.what());
  }
}

}  // namespace

EvaluationReport compare_report(std::span<const double> ensemble_auc,
                                const std::array<std::vector<double>, kBranches>& branch_auc) {
  if (ensemble_auc.empty()) throw EvaluationError("no AUC values to compare");
  for (const auto& b : branch_auc)
    if (b.size() != ensemble_auc.size())
      throw EvaluationError("ensemble and branch AUCs come from different evaluation sets");
  auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!std::all_of(ensemble_auc.begin(), ensemble_auc.end(), in_range))
    throw EvaluationError("AUC values must lie in [0, 1]");

  EvaluationReport r;
  r.per_task_auc.assign(ensemble_auc.begin(), ensemble_auc.end());
  if (ensemble_auc.size() == kNumClasses)
    for (const auto& cls : class_taxonomy()) r.task_names.emplace_back(cls.code);
  else
    for (std::size_t i = 0; i < ensemble_auc.size(); ++i) r.task_names.push_back("task" + std::to_string(i + 1));
  r.branch_task_auc = branch_auc;
  r.mean_auc = plain_mean(r.per_task_auc);
  r.ensemble_beats_every_branch = true;
  for (int k = 0; k < kBranches; ++k) {
    if (!std::all_of(branch_auc[k].begin(), branch_auc[k].end(), in_range))
      throw EvaluationError("AUC values must lie in [0, 1]");
    r.per_branch_auc[k] = plain_mean(branch_auc[k]);
    if (r.mean_auc < r.per_branch_auc[k]) r.ensemble_beats_every_branch = false;
  }
  return r;
}

EvaluationReport evaluate_predictions(const DatasetPredictions& predictions,
                                      const DatasetManifest& labeled) {
  check_alignment(predictions.ensemble, labeled);
  for (const auto& b : predictions.branches) check_alignment(b, labeled);

  std::vector<double> ensemble;
  std::array<std::vector<double>, kBranches> branches;
  for (const auto& cls : class_taxonomy()) {
    const auto labels = binary_labels(labeled, cls.index);
    ensemble.push_back(task_auc(column(predictions.ensemble, cls.index), labels, cls.code));
    for (int k = 0; k < kBranches; ++k)
      branches[k].push_back(task_auc(column(predictions.branches[k], cls.index), labels, cls.code));
  }
  return compare_report(ensemble, branches);
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["columns"] = kReportColumns;
  auto& tasks = j["tasks"] = nlohmann::json::array();
  for (std::size_t i = 0; i < per_task_auc.size(); ++i) {
    nlohmann::json row{{"task", task_names[i]}, {"MLDE", per_task_auc[i]}};
    for (int k = 0; k < kBranches; ++k) row[std::string(kReportColumns[k + 1])] = branch_task_auc[k][i];
    tasks.push_back(std::move(row));
  }
  j["mean_auc"] = mean_auc;
  j["ensemble_mean_auc"] = mean_auc;
  j["per_branch_mean_auc"] = per_branch_auc;
  j["ensemble_beats_every_branch"] = ensemble_beats_every_branch;
  const PublishedScores pub;
  j["published_reference_percent"] = {{"MLDE", pub.ensemble},
                                      {"branches", pub.branches},
                                      {"online_score_in_text", pub.prose_online_score}};
  return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  try {
    std::vector<double> ensemble;
    std::array<std::vector<double>, kBranches> branches;
    std::vector<std::string> names;
    for (const auto& row : j.at("tasks")) {
      names.push_back(row.at("task").get<std::string>());
      ensemble.push_back(row.at("MLDE").get<double>());
      for (int k = 0; k < kBranches; ++k)
        branches[k].push_back(row.at(std::string(kReportColumns[k + 1])).get<double>());
    }
    EvaluationReport r = compare_report(ensemble, branches);
    r.task_names = std::move(names);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw EvaluationError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string EvaluationReport::render_table(bool include_published) const {
  std::string out;
  auto row = [&](std::string_view label, const std::array<std::string, kBranches + 1>& cells) {
    out += fmt::format("{:<18}", label);
    for (const auto& c : cells) out += fmt::format("{:>10}", c);
    out += '\n';
  };
  std::array<std::string, kBranches + 1> head;
  for (int i = 0; i <= kBranches; ++i) head[i] = std::string(kReportColumns[i]);
  row("Methods", head);
  for (std::size_t t = 0; t < per_task_auc.size(); ++t) {
    std::array<std::string, kBranches + 1> cells{fmt::format("{:.4f}", per_task_auc[t])};
    for (int k = 0; k < kBranches; ++k) cells[k + 1] = fmt::format("{:.4f}", branch_task_auc[k][t]);
    row(task_names[t], cells);
  }
  std::array<std::string, kBranches + 1> avg{fmt::format("{:.1f}", 100.0 * mean_auc)};
  for (int k = 0; k < kBranches; ++k) avg[k + 1] = fmt::format("{:.1f}", 100.0 * per_branch_auc[k]);
  row("Average AUC (%)", avg);
  if (include_published) {
    const PublishedScores pub;
    std::array<std::string, kBranches + 1> ref{fmt::format("{:.1f}", pub.ensemble)};
    for (int k = 0; k < kBranches; ++k) ref[k + 1] = fmt::format("{:.1f}", pub.branches[k]);
    row("Published (%)", ref);
  }
  out += fmt::format("ensemble >= every branch: {}\n", ensemble_beats_every_branch ? "yes" : "no");
  return out;
}

void write_roc_svg(const PredictionTable& ensemble, const DatasetManifest& labeled,
                   const std::filesystem::path& path) {
  check_alignment(ensemble, labeled);
  constexpr std::array<std::string_view, kNumClasses> colors{
      "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  constexpr double size = 400.0, margin = 50.0;
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\">\n"
      "<rect x=\"{1}\" y=\"{1}\" width=\"{2}\" height=\"{2}\" fill=\"none\" stroke=\"black\"/>\n"
      "<line x1=\"{1}\" y1=\"{3}\" x2=\"{3}\" y2=\"{1}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n"
      "<text x=\"{4}\" y=\"{5}\" text-anchor=\"middle\">false positive rate</text>\n"
      "<text x=\"15\" y=\"{4}\" transform=\"rotate(-90 15 {4})\" text-anchor=\"middle\">true positive rate</text>\n",
      size + 2 * margin + 120, margin, size, margin + size, margin + size / 2, size + margin + 35);
  for (const auto& cls : class_taxonomy()) {
    const auto labels = binary_labels(labeled, cls.index);
    const auto scores = column(ensemble, cls.index);
    const auto curve = roc_curve(scores, labels);
    std::string pts;
    for (const auto& p : curve)
      pts += fmt::format("{:.2f},{:.2f} ", margin + p.fpr * size, margin + (1.0 - p.tpr) * size);
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       colors[cls.index], pts);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{} {:.3f}</text>\n", margin + size + 10,
                       margin + 15 + 18.0 * static_cast<double>(cls.index), colors[cls.index], cls.code,
                       auc(scores, labels));
  }
  svg += "</svg>\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << svg)) throw EvaluationError("cannot write " + path.string());
}

}  // namespace mlde
