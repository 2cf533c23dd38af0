#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlde {

inline constexpr std::size_t kNumClasses = 7;

// Published ISIC 2018 split sizes.
inline constexpr std::size_t kIsicTrainImages = 10015;
inline constexpr std::size_t kIsicValidationImages = 193;
inline constexpr std::size_t kIsicTestImages = 1512;

struct DiagnosisClass {
  std::size_t index;
  std::string_view code;
  std::string_view display_name;

  friend bool operator==(const DiagnosisClass& a, const DiagnosisClass& b) {
    return a.index == b.index;
  }
};

/// The seven diagnosis classes in canonical order (MEL, NV, BCC, AKIEC, BKL,
/// DF, VASC). This order fixes every per-class column in files and reports.
std::span<const DiagnosisClass, kNumClasses> class_taxonomy();

const DiagnosisClass& class_at(std::size_t index);
std::optional<DiagnosisClass> find_class(std::string_view code);

enum class Split { train, validation, test };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view name);

struct ManifestEntry {
  std::string image_id;
  std::string path;
  std::optional<std::size_t> label;  // index into class_taxonomy()
};

/// Validated, immutable list of images for one split. Relative image paths
/// resolve against base_dir (the manifest's directory when loaded from disk).
class DatasetManifest {
 public:
  DatasetManifest(Split split, std::vector<ManifestEntry> entries,
                  std::filesystem::path base_dir = {});

  Split split() const noexcept { return split_; }
  std::span<const ManifestEntry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

  std::size_t labeled_count() const noexcept { return labeled_count_; }
  const std::array<std::size_t, kNumClasses>& class_counts() const noexcept {
    return class_counts_;
  }
  std::size_t distinct_class_count() const noexcept;

  std::filesystem::path resolve(const ManifestEntry& entry) const;

 private:
  Split split_;
  std::vector<ManifestEntry> entries_;
  std::filesystem::path base_dir_;
  std::size_t labeled_count_ = 0;
  std::array<std::size_t, kNumClasses> class_counts_{};
};

/// Reads a `image_id,path,label` CSV manifest. Throws DataError on a missing
/// or empty file, bad header, duplicate id, unknown class code, or an
/// unlabeled train row.
DatasetManifest load_manifest(const std::filesystem::path& path, Split split);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct BinaryEntry {
  std::string image_id;
  std::string path;
  int label;  // 1 iff the source label equals the target class
};

/// One-vs-rest view of the labeled entries of a manifest.
struct BinaryTaskView {
  DiagnosisClass target;
  std::vector<BinaryEntry> entries;
  std::filesystem::path base_dir;
  std::optional<std::string> warning;  // set when positives are 0 or all

  std::size_t positives() const noexcept;
  std::size_t negatives() const noexcept { return entries.size() - positives(); }
  bool degenerate() const noexcept { return warning.has_value(); }
  std::filesystem::path resolve(const BinaryEntry& entry) const;
};

BinaryTaskView derive_binary_task(const DatasetManifest& manifest, const DiagnosisClass& target);

}  // namespace mlde
