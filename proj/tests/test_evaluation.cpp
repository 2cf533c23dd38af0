#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mlde/errors.hpp"
#include "mlde/evaluation.hpp"
#include "mlde/training.hpp"
#include "test_support.hpp"

namespace mlde {
namespace {

using testing::TempDir;

// Pair counting straight from the definition.
double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

ScoredSet random_set(std::mt19937_64& rng, bool with_ties) {
  std::uniform_int_distribution<int> size(2, 200);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = size(rng);
  ScoredSet s;
  for (int i = 0; i < n; ++i) {
    s.labels.push_back(u(rng) < 0.4 ? 1 : 0);
    double v = u(rng);
    if (with_ties) v = std::round(v * 8) / 8;
    s.scores.push_back(v);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

TEST(Auc, PerfectSeparation) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8}, std::vector<int>{1, 0}), 1.0);
}

TEST(Auc, AllTiesGiveHalf) {
  EXPECT_EQ(auc(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 0, 1, 1, 0}), 0.5);
}

TEST(Auc, WorkedExample) {
  const std::vector<double> s{0.9, 0.4, 0.35, 0.8};
  const std::vector<int> y{1, 0, 1, 0};
  EXPECT_EQ(auc(s, y), 0.5);
  EXPECT_EQ(brute_force_auc(s, y), 0.5);
}

TEST(Auc, SingleClassIsAnError) {
  try {
    auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
    FAIL();
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("undefined"), std::string::npos);
  }
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), EvaluationError);
  EXPECT_THROW(auc(std::vector<double>{}, std::vector<int>{}), EvaluationError);
  EXPECT_THROW(auc(std::vector<double>{0.1, NAN}, std::vector<int>{0, 1}), EvaluationError);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 2}), EvaluationError);
}

TEST(Auc, EqualsBruteForceAndTrapezoid) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = random_set(rng, trial % 2 == 0);
    const double a = auc(s.scores, s.labels);
    EXPECT_EQ(a, brute_force_auc(s.scores, s.labels));
    const auto curve = roc_curve(s.scores, s.labels);
    EXPECT_NEAR(trapezoid_area(curve), a, 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(rng, true);
    const double a = auc(s.scores, s.labels);
    for (auto& v : s.scores) v = std::exp(3.0 * v) - 7.0;
    EXPECT_EQ(auc(s.scores, s.labels), a);
  }
}

TEST(Auc, ReversedLabelsComplementWithoutTies) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(rng, false);
    const double a = auc(s.scores, s.labels);
    for (auto& y : s.labels) y = 1 - y;
    EXPECT_NEAR(auc(s.scores, s.labels), 1.0 - a, 1e-15);
  }
}

TEST(RocCurve, PerfectSeparationPoints) {
  const auto c = roc_curve(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].fpr, 0.0);
  EXPECT_EQ(c[0].tpr, 0.0);
  EXPECT_EQ(c[1].fpr, 0.0);
  EXPECT_EQ(c[1].tpr, 1.0);
  EXPECT_EQ(c[2].fpr, 1.0);
  EXPECT_EQ(c[2].tpr, 1.0);
}

TEST(RocCurve, AllTiesIsDiagonal) {
  const auto c = roc_curve(std::vector<double>(4, 0.5), std::vector<int>{0, 1, 1, 0});
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(trapezoid_area(c), 0.5);
}

TEST(RocCurve, MonotoneFromOriginToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_set(rng, true);
    const auto c = roc_curve(s.scores, s.labels);
    EXPECT_EQ(c.front().fpr, 0.0);
    EXPECT_EQ(c.front().tpr, 0.0);
    EXPECT_EQ(c.back().fpr, 1.0);
    EXPECT_EQ(c.back().tpr, 1.0);
    for (std::size_t i = 1; i < c.size(); ++i) {
      EXPECT_GE(c[i].fpr, c[i - 1].fpr);
      EXPECT_GE(c[i].tpr, c[i - 1].tpr);
    }
  }
}

TEST(MeanAuc, ArithmeticMeanOfSeven) {
  EXPECT_NEAR(mean_auc(std::vector<double>(7, 0.9)), 0.9, 1e-15);
  EXPECT_NEAR(mean_auc(std::vector<double>{1, 1, 1, 1, 1, 1, 0}), 6.0 / 7.0, 1e-12);
  EXPECT_THROW(mean_auc(std::vector<double>(6, 0.9)), EvaluationError);
  EXPECT_THROW(mean_auc(std::vector<double>{1, 1, 1, 1, 1, 1, 1.5}), EvaluationError);
}

TEST(MeanAuc, PermutationInvariant) {
  std::vector<double> v{0.61, 0.73, 0.99, 0.5, 0.82, 0.77, 0.64};
  const double m = mean_auc(v);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_NEAR(mean_auc(v), m, 1e-12);
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(PredictionCsv, EmptyTableIsHeaderOnly) {
  TempDir dir;
  write_predictions_csv({}, dir / "p.csv");
  EXPECT_EQ(slurp(dir / "p.csv"), "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n");
  EXPECT_TRUE(read_predictions_csv(dir / "p.csv").rows.empty());
}

TEST(PredictionCsv, SixDecimalFormat) {
  TempDir dir;
  PredictionTable t;
  t.image_ids = {"img001"};
  t.rows.push_back({});
  t.rows[0].fill(0.5);
  write_predictions_csv(t, dir / "p.csv");
  EXPECT_EQ(slurp(dir / "p.csv"),
            "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n"
            "img001,0.500000,0.500000,0.500000,0.500000,0.500000,0.500000,0.500000\n");
}

TEST(PredictionCsv, RoundTripWithinHalfMicro) {
  TempDir dir;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PredictionTable t;
  for (int i = 0; i < 50; ++i) {
    t.image_ids.push_back(fmt::format("ISIC_{:07d}", i));
    std::array<double, kNumClasses> row;
    for (auto& v : row) v = u(rng);
    t.rows.push_back(row);
  }
  write_predictions_csv(t, dir / "p.csv");
  const auto back = read_predictions_csv(dir / "p.csv");
  EXPECT_EQ(back.image_ids, t.image_ids);
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_NEAR(back.rows[i][c], t.rows[i][c], 5e-7);
}

TEST(PredictionCsv, MalformedFilesRejected) {
  TempDir dir;
  testing::write_file(dir / "a.csv", "image,MEL\nx,0.1\n");
  EXPECT_THROW(read_predictions_csv(dir / "a.csv"), EvaluationError);
  testing::write_file(dir / "b.csv", "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\nx,0.1,0.2\n");
  EXPECT_THROW(read_predictions_csv(dir / "b.csv"), EvaluationError);
  testing::write_file(dir / "c.csv", "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\nx,a,0,0,0,0,0,0\n");
  EXPECT_THROW(read_predictions_csv(dir / "c.csv"), EvaluationError);
  EXPECT_THROW(read_predictions_csv(dir / "none.csv"), EvaluationError);
}

TEST(CompareReport, EnsembleBeatsBranches) {
  const auto r = compare_report(std::vector<double>{0.9}, {{{0.8}, {0.85}, {0.7}, {0.75}}});
  EXPECT_TRUE(r.ensemble_beats_every_branch);
  EXPECT_DOUBLE_EQ(r.ensemble_mean_auc(), 0.9);
}

TEST(CompareReport, OneBranchAheadClearsFlag) {
  const auto r = compare_report(std::vector<double>{0.8}, {{{0.7}, {0.85}, {0.7}, {0.7}}});
  EXPECT_FALSE(r.ensemble_beats_every_branch);
}

TEST(CompareReport, MismatchedSetsRejected) {
  EXPECT_THROW(compare_report(std::vector<double>{0.8, 0.9}, {{{0.7}, {0.85}, {0.7}, {0.7}}}),
               EvaluationError);
  EXPECT_THROW(compare_report(std::vector<double>{}, {}), EvaluationError);
}

TEST(CompareReport, TableLayoutFollowsPublishedColumns) {
  EXPECT_EQ(kReportColumns[0], "MLDE");
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(kReportColumns[k], fmt::format("branch{}", k));
  const PublishedScores pub;
  EXPECT_EQ(pub.ensemble, 86.5);
  EXPECT_EQ(pub.branches, (std::array<double, 4>{83.1, 85.2, 84.1, 83.0}));
  EXPECT_EQ(pub.prose_online_score, 90.2);

  std::vector<double> e(7, 0.9);
  std::array<std::vector<double>, kBranches> b;
  for (auto& v : b) v.assign(7, 0.8);
  const auto r = compare_report(e, b);
  EXPECT_EQ(r.task_names.front(), "MEL");
  const std::string table = r.render_table(true);
  std::istringstream lines(table);
  std::string first;
  std::getline(lines, first);
  EXPECT_LT(first.find("MLDE"), first.find("branch1"));
  EXPECT_LT(first.find("branch3"), first.find("branch4"));
  EXPECT_NE(table.find("Average AUC (%)"), std::string::npos);
  EXPECT_NE(table.find("86.5"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 1 + 7 + 1 + 1 + 1);

  const auto back = EvaluationReport::from_json(r.to_json());
  EXPECT_EQ(back.per_task_auc, r.per_task_auc);
  EXPECT_EQ(back.task_names, r.task_names);
  EXPECT_EQ(back.render_table(false), r.render_table(false));
}

// ------------------------------------------------------------ predictions

std::vector<TrainedModel> equal_models(std::uint64_t seed) {
  std::vector<TrainedModel> models;
  const auto config = testing::tiny_config(seed);
  for (const auto& cls : class_taxonomy())
    models.push_back({cls, config, build_ensemble(config, seed), {}, true});
  return models;
}

DatasetManifest memory_manifest(ImageStore& store, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < n; ++i) {
    const std::string id = fmt::format("m{}_{}", seed, i);
    store.insert(id, testing::random_image(20, 20, rng));
    entries.push_back({id, id, static_cast<std::size_t>(i % 7)});
  }
  return DatasetManifest(Split::test, entries);
}

TEST(PredictDataset, EqualModelsGiveEqualScores) {
  ImageStore store;
  auto models = equal_models(3);
  const auto m = memory_manifest(store, 1, 1);
  const auto p = predict_dataset(models, m, store);
  ASSERT_EQ(p.ensemble.rows.size(), 1u);
  for (double v : p.ensemble.rows[0]) {
    EXPECT_EQ(v, p.ensemble.rows[0][0]);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(PredictDataset, OneRowPerManifestImage) {
  ImageStore store;
  auto models = equal_models(4);
  const auto m = memory_manifest(store, kIsicValidationImages, 2);
  const auto p = predict_dataset(models, m, store);
  EXPECT_EQ(p.ensemble.rows.size(), 193u);
  EXPECT_EQ(p.ensemble.image_ids.front(), m.entries().front().image_id);
  EXPECT_EQ(p.branches[3].rows.size(), 193u);
}

TEST(PredictDataset, ScoresMatchIndependentRecomputation) {
  ImageStore store;
  std::vector<TrainedModel> models;
  for (const auto& cls : class_taxonomy()) {
    const auto config = testing::tiny_config(20 + cls.index);
    models.push_back({cls, config, build_ensemble(config, config.seed), {}, false});
    models.back().ensemble.fusion.alpha[cls.index % kBranches] = 1.0;
  }
  const auto m = memory_manifest(store, 5, 3);
  const auto p = predict_dataset(models, m, store);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto pyramid = extract_roi_pyramid(store.load(m.entries()[i].image_id, {}));
    for (auto& model : models) {
      const auto out = infer(model.ensemble, std::span(&pyramid, 1), model.config.normalization);
      EXPECT_EQ(p.ensemble.rows[i][model.target.index], out.fused[0]);
      EXPECT_EQ(p.branches[1].rows[i][model.target.index], out.branch[0][1]);
      EXPECT_EQ(out.fused[0], fuse(out.branch[0], model.ensemble.fusion));
    }
  }
}

TEST(PredictDataset, MissingOrDuplicateModelRejected) {
  ImageStore store;
  const auto m = memory_manifest(store, 1, 4);
  auto models = equal_models(1);
  models.pop_back();
  try {
    predict_dataset(models, m, store);
    FAIL();
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("VASC"), std::string::npos);
  }
  models = equal_models(1);
  models[6].target = class_at(0);
  EXPECT_THROW(predict_dataset(models, m, store), EvaluationError);
}

TEST(EvaluatePredictions, PerfectScoresAndAlignmentChecks) {
  ImageStore store;
  const auto m = memory_manifest(store, 14, 5);
  DatasetPredictions p;
  auto fill = [&](PredictionTable& t, double noise) {
    for (const auto& e : m.entries()) {
      t.image_ids.push_back(e.image_id);
      std::array<double, kNumClasses> row;
      for (std::size_t c = 0; c < kNumClasses; ++c) row[c] = (c == *e.label ? 0.9 : 0.1) + noise * c;
      t.rows.push_back(row);
    }
  };
  fill(p.ensemble, 0.0);
  for (auto& b : p.branches) fill(b, 0.0);
  const auto r = evaluate_predictions(p, m);
  EXPECT_EQ(r.mean_auc, 1.0);
  EXPECT_TRUE(r.ensemble_beats_every_branch);

  std::swap(p.ensemble.image_ids[0], p.ensemble.image_ids[1]);
  EXPECT_THROW(evaluate_predictions(p, m), EvaluationError);
}

TEST(EvaluatePredictions, SingleClassTaskNamesTheClass) {
  ImageStore store;
  std::vector<ManifestEntry> entries{{"a", "a", 0}, {"b", "b", 1}};
  const DatasetManifest m(Split::test, entries);
  DatasetPredictions p;
  for (auto* t : {&p.ensemble, &p.branches[0], &p.branches[1], &p.branches[2], &p.branches[3]}) {
    t->image_ids = {"a", "b"};
    t->rows.assign(2, {});
  }
  try {
    evaluate_predictions(p, m);
    FAIL();
  } catch (const EvaluationError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("BCC", 0), 0u) << e.what();
  }
}

TEST(RocSvg, WritesOneCurvePerClass) {
  TempDir dir;
  ImageStore store;
  const auto m = memory_manifest(store, 14, 6);
  PredictionTable t;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& e : m.entries()) {
    t.image_ids.push_back(e.image_id);
    std::array<double, kNumClasses> row;
    for (auto& v : row) v = u(rng);
    t.rows.push_back(row);
  }
  write_roc_svg(t, m, dir / "roc.svg");
  const auto svg = slurp(dir / "roc.svg");
  std::size_t count = 0;
  for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++count;
  EXPECT_EQ(count, 7u);
}

}  // namespace
}  // namespace mlde
