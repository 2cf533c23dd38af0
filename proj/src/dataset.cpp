#include "mlde/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "mlde/errors.hpp"

namespace mlde {

namespace {

constexpr std::array<DiagnosisClass, kNumClasses> kTaxonomy{{
    {0, "MEL", "melanoma"},
    {1, "NV", "melanocytic nevus"},
    {2, "BCC", "basal cell carcinoma"},
    {3, "AKIEC", "actinic keratosis"},
    {4, "BKL", "benign keratosis"},
    {5, "DF", "dermatofibroma"},
    {6, "VASC", "vascular lesion"},
}};

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

}  // namespace

std::span<const DiagnosisClass, kNumClasses> class_taxonomy() { return kTaxonomy; }

const DiagnosisClass& class_at(std::size_t index) {
  if (index >= kNumClasses) throw DataError("class index out of range: " + std::to_string(index));
  return kTaxonomy[index];
}

std::optional<DiagnosisClass> find_class(std::string_view code) {
  for (const auto& c : kTaxonomy) {
    if (c.code == code) return c;
  }
  return std::nullopt;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "unknown";
}

std::optional<Split> parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  return std::nullopt;
}

DatasetManifest::DatasetManifest(Split split, std::vector<ManifestEntry> entries,
                                 std::filesystem::path base_dir)
    : split_(split), entries_(std::move(entries)), base_dir_(std::move(base_dir)) {
  std::unordered_set<std::string> seen;
  seen.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (e.image_id.empty()) throw DataError("manifest entry with empty image_id");
    if (!seen.insert(e.image_id).second) throw DataError("duplicate image_id: " + e.image_id);
    if (e.label) {
      if (*e.label >= kNumClasses) throw DataError("label index out of range for " + e.image_id);
      ++labeled_count_;
      ++class_counts_[*e.label];
    } else if (split_ == Split::train) {
      throw DataError("train entry without label: " + e.image_id);
    }
  }
}

std::size_t DatasetManifest::distinct_class_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(class_counts_.begin(), class_counts_.end(), [](std::size_t n) { return n > 0; }));
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& entry) const {
  std::filesystem::path p(entry.path);
  return p.is_absolute() ? p : base_dir_ / p;
}

DatasetManifest load_manifest(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("manifest not found: " + path.string());

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    if (trim(view).empty()) continue;
    const auto fields = split_fields(view);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "image_id" || fields[1] != "path" ||
          fields[2] != "label") {
        throw DataError(path.string() + ": expected header 'image_id,path,label'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields, got " +
                      std::to_string(fields.size()));
    }
    ManifestEntry entry{std::string(fields[0]), std::string(fields[1]), std::nullopt};
    if (!fields[2].empty()) {
      const auto cls = find_class(fields[2]);
      if (!cls) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown class code '" +
                        std::string(fields[2]) + "'");
      }
      entry.label = cls->index;
    }
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) throw DataError("empty manifest: " + path.string());
  return DatasetManifest(split, std::move(entries), path.parent_path());
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << "image_id,path,label\n";
  for (const auto& e : manifest.entries()) {
    out << e.image_id << ',' << e.path << ',';
    if (e.label) out << class_at(*e.label).code;
    out << '\n';
  }
  if (!out) throw DataError("failed writing manifest: " + path.string());
}

std::size_t BinaryTaskView::positives() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const BinaryEntry& e) { return e.label == 1; }));
}

std::filesystem::path BinaryTaskView::resolve(const BinaryEntry& entry) const {
  std::filesystem::path p(entry.path);
  return p.is_absolute() ? p : base_dir / p;
}

BinaryTaskView derive_binary_task(const DatasetManifest& manifest, const DiagnosisClass& target) {
  if (manifest.labeled_count() == 0) {
    throw DataError("cannot derive a binary task from a manifest without labels");
  }
  BinaryTaskView view{target, {}, manifest.base_dir(), std::nullopt};
  view.entries.reserve(manifest.labeled_count());
  for (const auto& e : manifest.entries()) {
    if (!e.label) continue;
    view.entries.push_back({e.image_id, e.path, *e.label == target.index ? 1 : 0});
  }
  const auto pos = view.positives();
  if (pos == 0 || pos == view.entries.size()) {
    std::ostringstream msg;
    msg << "degenerate binary task for " << target.code << ": " << pos << " positives out of "
        << view.entries.size() << " (AUC undefined)";
    view.warning = msg.str();
    spdlog::warn("{}", *view.warning);
  }
  return view;
}

}  // namespace mlde
