#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "mlde/image.hpp"
#include "mlde/training.hpp"

namespace mlde::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mlde_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageTensor img(h, w);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

// Small tiny_test training setup used by the training tests.
inline TrainConfig tiny_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.seed = seed;
  c.batch_size = 4;
  c.epochs_per_stage = {1};
  c.learning_rate = 0.01;
  return c;
}

inline Batch random_batch(int size, std::mt19937_64& rng, int image_side = 64) {
  Batch batch;
  for (int i = 0; i < size; ++i) {
    batch.pyramids.push_back(extract_roi_pyramid(random_image(image_side, image_side, rng)));
    batch.labels.push_back(i % 2);
  }
  return batch;
}

// Flat copy of every parameter value of one ensemble, keyed by position.
inline std::vector<std::vector<float>> snapshot(Ensemble& e, bool include_alpha_as_float = false) {
  std::vector<std::vector<float>> out;
  for (auto& b : e.branches)
    b.visit_parameters([&](std::string_view, Parameter& p) {
      out.emplace_back(p.value.data().begin(), p.value.data().end());
    });
  if (include_alpha_as_float) {
    std::vector<float> a;
    for (double x : e.fusion.alpha) a.push_back(static_cast<float>(x));
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace mlde::testing
