#include "mlde/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>

#include "mlde/errors.hpp"

static_assert(std::endian::native == std::endian::little, "archive payloads are little-endian");

namespace mlde {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'D', 'E', 'A', 'R', 'C', '1'};
constexpr std::size_t kDigestSize = 32;
constexpr std::size_t kPreambleSize = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);

template <typename T>
void append_pod(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

std::string to_hex(const unsigned char* digest, std::size_t n) {
  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return out.str();
}

void sha256(std::span<const std::uint8_t> bytes, unsigned char* digest) {
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1 ||
      len != kDigestSize) {
    throw DataError("SHA-256 computation failed");
  }
}

std::string_view dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }
std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[kDigestSize];
  sha256(bytes, digest);
  return to_hex(digest, kDigestSize);
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return sha256_hex(bytes);
}

std::size_t ArchiveTensor::element_count() const { return bytes.size() / dtype_size(dtype); }

std::vector<float> ArchiveTensor::as_f32() const {
  if (dtype != DType::f32) throw CheckpointError("archive tensor is not f32");
  std::vector<float> out(element_count());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<double> ArchiveTensor::as_f64() const {
  if (dtype != DType::f64) throw CheckpointError("archive tensor is not f64");
  std::vector<double> out(element_count());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void TensorArchive::add(const std::string& name, std::vector<std::int64_t> dims,
                        std::span<const float> values) {
  ArchiveTensor t{DType::f32, std::move(dims), {}};
  t.bytes.resize(values.size_bytes());
  std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
  tensors_[name] = std::move(t);
}

void TensorArchive::add(const std::string& name, std::vector<std::int64_t> dims,
                        std::span<const double> values) {
  ArchiveTensor t{DType::f64, std::move(dims), {}};
  t.bytes.resize(values.size_bytes());
  std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
  tensors_[name] = std::move(t);
}

const ArchiveTensor& TensorArchive::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw CheckpointError("archive is missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> TensorArchive::serialize(std::string_view kind) const {
  nlohmann::json header;
  header["kind"] = kind;
  header["meta"] = meta_;
  auto& list = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    list.push_back({{"name", name},
                    {"dtype", dtype_name(t.dtype)},
                    {"shape", t.dims},
                    {"offset", offset},
                    {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleSize + text.size() + offset + kDigestSize);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  append_pod<std::uint32_t>(out, kFormatVersion);
  append_pod<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : tensors_) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  unsigned char digest[kDigestSize];
  sha256(out, digest);
  out.insert(out.end(), digest, digest + kDigestSize);
  return out;
}

TensorArchive TensorArchive::parse(std::span<const std::uint8_t> bytes,
                                   std::string_view expected_kind) {
  if (bytes.size() < kPreambleSize + kDigestSize ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not an MLDE archive (bad magic or truncated)");
  }
  const auto body = bytes.first(bytes.size() - kDigestSize);
  unsigned char digest[kDigestSize];
  sha256(body, digest);
  if (std::memcmp(digest, bytes.data() + body.size(), kDigestSize) != 0) {
    throw CheckpointError("archive checksum mismatch (file truncated or corrupted)");
  }
  const auto version = read_pod<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kFormatVersion) {
    throw CheckpointError("unsupported archive version " + std::to_string(version) +
                          " (expected " + std::to_string(kFormatVersion) + ")");
  }
  const auto header_len = read_pod<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (kPreambleSize + header_len > body.size()) throw CheckpointError("archive header overruns file");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.begin() + kPreambleSize,
                                   body.begin() + kPreambleSize + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (header.value("kind", "") != expected_kind) {
    throw CheckpointError("archive kind is '" + header.value("kind", "") + "', expected '" +
                          std::string(expected_kind) + "'");
  }
  TensorArchive archive;
  archive.meta_ = header.value("meta", nlohmann::json::object());
  const std::size_t payload = kPreambleSize + header_len;
  for (const auto& entry : header.at("tensors")) {
    ArchiveTensor t;
    const auto dtype = entry.at("dtype").get<std::string>();
    if (dtype == "f32") {
      t.dtype = DType::f32;
    } else if (dtype == "f64") {
      t.dtype = DType::f64;
    } else {
      throw CheckpointError("unsupported tensor dtype " + dtype);
    }
    t.dims = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (payload + offset + nbytes > body.size()) throw CheckpointError("tensor payload overruns file");
    std::int64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (static_cast<std::uint64_t>(count) * dtype_size(t.dtype) != nbytes) {
      throw CheckpointError("tensor '" + entry.at("name").get<std::string>() +
                            "' size does not match its shape");
    }
    t.bytes.assign(body.begin() + payload + offset, body.begin() + payload + offset + nbytes);
    archive.tensors_[entry.at("name").get<std::string>()] = std::move(t);
  }
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path, std::string_view kind) const {
  const auto bytes = serialize(kind);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return parse(bytes, expected_kind);
}

}  // namespace mlde
