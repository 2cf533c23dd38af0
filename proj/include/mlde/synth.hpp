#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "mlde/dataset.hpp"

namespace mlde::synth {

// Fine-scale classes carry a period-2 texture inside a small central blob.
// A 2x downsample averages that texture away, so only tight crops resolve it.
// Every image also has a square clutter ring between the 0.4 and 0.6 center
// crops whose four sides carry independent random textures; it drowns the
// blob's signal in the wider views.
// Coarse-scale classes differ by a global color tint visible at every scale.
enum class Texture { none, horizontal_stripes, vertical_stripes, checkerboard };

struct ClassPattern {
  Texture texture = Texture::none;
  float tint[3] = {0.0f, 0.0f, 0.0f};
};

ClassPattern pattern_for(const DiagnosisClass& cls);
bool is_fine_scale(const DiagnosisClass& cls);
std::string_view to_string(Texture t);

inline constexpr int kImageSize = 448;
inline constexpr int kBlobRadiusMin = 36;
inline constexpr int kBlobRadiusMax = 44;
inline constexpr int kBlobCenterJitter = 12;
inline constexpr float kBackground = 0.5f;
inline constexpr float kBackgroundJitter = 0.04f;
inline constexpr float kTextureAmplitude = 0.22f;
inline constexpr float kNoiseSigma = 0.015f;
// Clutter ring: inside [kRingOuterLo, kRingOuterHi)^2, outside
// [kRingInnerLo, kRingInnerHi)^2. Even bounds keep 2x2 cells whole.
inline constexpr int kRingOuterLo = 92;
inline constexpr int kRingOuterHi = 356;
inline constexpr int kRingInnerLo = 132;
inline constexpr int kRingInnerHi = 316;

struct Options {
  std::filesystem::path out_dir;
  int n_images = 350;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
};

struct Summary {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::array<int, kNumClasses> train_counts{};
  std::array<int, kNumClasses> test_counts{};
};

/// Writes images/, train.csv, test.csv (both labeled) and synth_meta.json.
/// Class c receives images c, c + 7, ...; the last test_fraction of each
/// class (at least one) goes to the test split.
Summary generate(const Options& options);

}  // namespace mlde::synth
