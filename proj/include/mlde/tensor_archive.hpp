#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mlde {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string file_sha256(const std::filesystem::path& path);

enum class DType { f32, f64 };

struct ArchiveTensor {
  DType dtype = DType::f32;
  std::vector<std::int64_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  std::size_t element_count() const;
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
};

/// Named tensors plus a JSON metadata object, serialized as
///
///   "MLDEARC1" | u32 version | u64 header_len | header JSON | payload | SHA-256
///
/// The trailing digest covers every preceding byte, so truncation and bit rot
/// are both detected on load. Header JSON holds {kind, meta, tensors:[{name,
/// dtype, shape, offset, nbytes}]} with offsets relative to the payload start.
class TensorArchive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json& meta() noexcept { return meta_; }
  const nlohmann::json& meta() const noexcept { return meta_; }

  void add(const std::string& name, std::vector<std::int64_t> dims, std::span<const float> values);
  void add(const std::string& name, std::vector<std::int64_t> dims, std::span<const double> values);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const ArchiveTensor& at(const std::string& name) const;
  const std::map<std::string, ArchiveTensor>& tensors() const noexcept { return tensors_; }

  std::vector<std::uint8_t> serialize(std::string_view kind) const;
  static TensorArchive parse(std::span<const std::uint8_t> bytes, std::string_view expected_kind);

  void save(const std::filesystem::path& path, std::string_view kind) const;
  static TensorArchive load(const std::filesystem::path& path, std::string_view expected_kind);

 private:
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, ArchiveTensor> tensors_;
};

}  // namespace mlde
