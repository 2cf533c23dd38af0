#include <gtest/gtest.h>

#include <random>
#include <set>

#include <fmt/format.h>

#include "mlde/dataset.hpp"
#include "mlde/errors.hpp"
#include "test_support.hpp"

namespace mlde {
namespace {

using testing::TempDir;
using testing::write_file;

DatasetManifest toy_manifest(Split split = Split::train) {
  return DatasetManifest(split, {{"a", "a.png", 0}, {"b", "b.png", 1}, {"c", "c.png", 1}});
}

TEST(Taxonomy, SevenClassesInCanonicalOrder) {
  const auto classes = class_taxonomy();
  ASSERT_EQ(classes.size(), 7u);
  const char* expected[] = {"MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"};
  std::set<std::string_view> codes;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    EXPECT_EQ(classes[i].code, expected[i]);
    EXPECT_EQ(classes[i].index, i);
    codes.insert(classes[i].code);
  }
  EXPECT_EQ(codes.size(), 7u);
  EXPECT_EQ(classes[0].display_name, "melanoma");
}

TEST(Taxonomy, LookupByCode) {
  EXPECT_EQ(find_class("DF")->index, 5u);
  EXPECT_FALSE(find_class("mel").has_value());
  EXPECT_THROW(class_at(7), DataError);
}

TEST(Taxonomy, PublishedSplitSizes) {
  EXPECT_EQ(kIsicTrainImages, 10015u);
  EXPECT_EQ(kIsicValidationImages, 193u);
  EXPECT_EQ(kIsicTestImages, 1512u);
}

TEST(Manifest, LoadsToyFile) {
  TempDir dir;
  write_file(dir / "m.csv", "image_id,path,label\nimg1,images/1.png,MEL\nimg2,images/2.png,NV\n"
                            "img3,images/3.png,NV\n");
  const auto m = load_manifest(dir / "m.csv", Split::train);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.labeled_count(), 3u);
  EXPECT_EQ(m.distinct_class_count(), 2u);
  EXPECT_EQ(m.class_counts()[1], 2u);
  EXPECT_EQ(m.resolve(m.entries()[0]), dir.path() / "images/1.png");
}

TEST(Manifest, ToleratesBomCrlfAndBlankLines) {
  TempDir dir;
  write_file(dir / "m.csv", "\xEF\xBB\xBFimage_id,path,label\r\nimg1,1.png,MEL\r\n\r\nimg2,2.png,\r\n");
  const auto m = load_manifest(dir / "m.csv", Split::test);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.entries()[0].label, 0u);
  EXPECT_FALSE(m.entries()[1].label.has_value());
  EXPECT_EQ(m.entries()[1].path, "2.png");
}

TEST(Manifest, FullSizeIsicTrainManifest) {
  TempDir dir;
  std::string text = "image_id,path,label\n";
  for (std::size_t i = 0; i < kIsicTrainImages; ++i)
    text += fmt::format("ISIC_{:07d},ISIC_{:07d}.jpg,{}\n", i, i, class_at(i % 7).code);
  write_file(dir / "train.csv", text);
  EXPECT_EQ(load_manifest(dir / "train.csv", Split::train).size(), 10015u);
}

struct BadManifest {
  const char* name;
  std::string body;
  std::string message;
};

class ManifestErrors : public ::testing::TestWithParam<BadManifest> {};

TEST_P(ManifestErrors, Rejected) {
  TempDir dir;
  write_file(dir / "m.csv", GetParam().body);
  try {
    load_manifest(dir / "m.csv", Split::train);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(GetParam().message), std::string::npos) << e.what();
    EXPECT_EQ(e.exit_code(), 3);
  }
}

INSTANTIATE_TEST_SUITE_P(
    Cases, ManifestErrors,
    ::testing::Values(BadManifest{"empty", "", "empty manifest"},
                      BadManifest{"header_only", "image_id,path,label\n", "empty manifest"},
                      BadManifest{"bad_header", "id,file,label\na,a.png,MEL\n", "expected header"},
                      BadManifest{"duplicate", "image_id,path,label\na,a.png,MEL\na,b.png,NV\n",
                                  "duplicate image_id: a"},
                      BadManifest{"unknown_code", "image_id,path,label\na,a.png,SCC\n",
                                  "unknown class code 'SCC'"},
                      BadManifest{"unlabeled_train", "image_id,path,label\na,a.png,\n",
                                  "train entry without label: a"},
                      BadManifest{"field_count", "image_id,path,label\na,a.png\n",
                                  "expected 3 fields"}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Manifest, MissingFile) {
  TempDir dir;
  EXPECT_THROW(load_manifest(dir / "nope.csv", Split::train), DataError);
}

TEST(Manifest, UnlabeledValidationAllowed) {
  DatasetManifest m(Split::validation, {{"a", "a.png", std::nullopt}});
  EXPECT_EQ(m.labeled_count(), 0u);
}

TEST(Manifest, WriteLoadRoundTripIsDeterministic) {
  TempDir dir;
  DatasetManifest m(Split::test, {{"a", "x/a.png", 3}, {"b", "x/b.png", std::nullopt}});
  write_manifest(m, dir / "m.csv");
  const auto first = load_manifest(dir / "m.csv", Split::test);
  const auto second = load_manifest(dir / "m.csv", Split::test);
  ASSERT_EQ(first.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(first.entries()[i].image_id, m.entries()[i].image_id);
    EXPECT_EQ(first.entries()[i].path, m.entries()[i].path);
    EXPECT_EQ(first.entries()[i].label, m.entries()[i].label);
    EXPECT_EQ(first.entries()[i].label, second.entries()[i].label);
  }
}

TEST(BinaryTask, RelabelsOneVsRest) {
  const auto task = derive_binary_task(toy_manifest(), *find_class("MEL"));
  ASSERT_EQ(task.entries.size(), 3u);
  EXPECT_EQ(task.entries[0].label, 1);
  EXPECT_EQ(task.entries[1].label, 0);
  EXPECT_EQ(task.entries[2].label, 0);
  EXPECT_FALSE(task.degenerate());
}

TEST(BinaryTask, AbsentClassIsDegenerateNotAnError) {
  const auto task = derive_binary_task(toy_manifest(), *find_class("BCC"));
  EXPECT_EQ(task.positives(), 0u);
  EXPECT_TRUE(task.degenerate());
  EXPECT_NE(task.warning->find("BCC"), std::string::npos);
}

TEST(BinaryTask, AllPositiveIsDegenerate) {
  DatasetManifest m(Split::train, {{"a", "a", 1}, {"b", "b", 1}});
  EXPECT_TRUE(derive_binary_task(m, class_at(1)).degenerate());
}

TEST(BinaryTask, NoLabelsIsAnError) {
  DatasetManifest m(Split::test, {{"a", "a", std::nullopt}});
  EXPECT_THROW(derive_binary_task(m, class_at(0)), DataError);
}

TEST(BinaryTask, SkipsUnlabeledEntries) {
  DatasetManifest m(Split::test, {{"a", "a", 0}, {"b", "b", std::nullopt}, {"c", "c", 2}});
  EXPECT_EQ(derive_binary_task(m, class_at(0)).entries.size(), m.labeled_count());
}

// Random manifests: every labeled entry is positive in exactly one task, and
// each task's positive count matches a linear scan of the labels.
TEST(BinaryTask, PositivesPartitionLabeledEntries) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ManifestEntry> entries;
    std::uniform_int_distribution<int> cls(-1, 6);
    for (int i = 0; i < 200; ++i) {
      const int c = cls(rng);
      entries.push_back({fmt::format("id{}", i), "p",
                         c < 0 ? std::nullopt : std::optional<std::size_t>(c)});
    }
    const DatasetManifest m(Split::test, entries);
    std::vector<int> positive_in(entries.size(), 0);
    std::size_t total = 0;
    for (const auto& c : class_taxonomy()) {
      const auto task = derive_binary_task(m, c);
      std::size_t brute = 0;
      for (const auto& e : entries) brute += e.label == c.index ? 1 : 0;
      EXPECT_EQ(task.positives(), brute);
      EXPECT_EQ(task.positives() + task.negatives(), m.labeled_count());
      total += task.positives();
      for (std::size_t i = 0, j = 0; i < entries.size(); ++i) {
        if (!entries[i].label) continue;
        positive_in[i] += task.entries[j++].label;
      }
    }
    EXPECT_EQ(total, m.labeled_count());
    for (std::size_t i = 0; i < entries.size(); ++i)
      EXPECT_EQ(positive_in[i], entries[i].label ? 1 : 0);
  }
}

}  // namespace
}  // namespace mlde
