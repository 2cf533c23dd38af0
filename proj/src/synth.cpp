#include "mlde/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <cmath>
#include <exception>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <json.hpp>

#include "mlde/errors.hpp"
#include "mlde/image.hpp"
#include "mlde/image_io.hpp"
#include "mlde/seeding.hpp"

namespace mlde::synth {

ClassPattern pattern_for(const DiagnosisClass& cls) {
  switch (cls.index) {
    case 0: return {Texture::horizontal_stripes, {0, 0, 0}};  // MEL
    case 1: return {Texture::none, {0.12f, -0.04f, -0.04f}};  // NV
    case 2: return {Texture::vertical_stripes, {0, 0, 0}};    // BCC
    case 3: return {Texture::none, {-0.04f, 0.12f, -0.04f}};  // AKIEC
    case 4: return {Texture::none, {-0.04f, -0.04f, 0.12f}};  // BKL
    case 5: return {Texture::checkerboard, {0, 0, 0}};        // DF
    default: return {Texture::none, {0.08f, 0.08f, -0.1f}};   // VASC
  }
}

bool is_fine_scale(const DiagnosisClass& cls) { return pattern_for(cls).texture != Texture::none; }

std::string_view to_string(Texture t) {
  switch (t) {
    case Texture::none: return "none";
    case Texture::horizontal_stripes: return "horizontal_stripes";
    case Texture::vertical_stripes: return "vertical_stripes";
    case Texture::checkerboard: return "checkerboard";
  }
  return "none";
}

namespace {

float texture_sign(Texture t, int x, int y) {
  switch (t) {
    case Texture::horizontal_stripes: return (y & 1) ? -1.0f : 1.0f;
    case Texture::vertical_stripes: return (x & 1) ? -1.0f : 1.0f;
    case Texture::checkerboard: return ((x + y) & 1) ? -1.0f : 1.0f;
    case Texture::none: break;
  }
  return 0.0f;
}

Rgb8Image render(const DiagnosisClass& cls, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> jitter(-kBackgroundJitter, kBackgroundJitter);
  std::uniform_int_distribution<int> radius_dist(kBlobRadiusMin, kBlobRadiusMax);
  std::uniform_int_distribution<int> offset(-kBlobCenterJitter, kBlobCenterJitter);
  std::normal_distribution<float> noise(0.0f, kNoiseSigma);

  const ClassPattern pat = pattern_for(cls);
  float base[3];
  const float shared = jitter(rng);
  for (int c = 0; c < 3; ++c) base[c] = kBackground + shared + pat.tint[c] + 0.25f * jitter(rng);
  const int radius = radius_dist(rng);
  const double cx = kImageSize / 2.0 + offset(rng);
  const double cy = kImageSize / 2.0 + offset(rng);
  std::array<Texture, 4> ring{};  // one texture per side: top, right, bottom, left
  for (auto& t : ring) t = static_cast<Texture>(std::uniform_int_distribution<int>(0, 3)(rng));
  // Side of the clutter ring that (x, y) belongs to, or -1. The ring is split
  // along its diagonals.
  auto ring_side = [](int x, int y) {
    auto within = [](int v, int lo, int hi) { return v >= lo && v < hi; };
    if (!within(x, kRingOuterLo, kRingOuterHi) || !within(y, kRingOuterLo, kRingOuterHi)) return -1;
    if (within(x, kRingInnerLo, kRingInnerHi) && within(y, kRingInnerLo, kRingInnerHi)) return -1;
    const int dx = (x / 2) * 2 + 1 - kImageSize / 2;
    const int dy = (y / 2) * 2 + 1 - kImageSize / 2;
    if (std::abs(dy) >= std::abs(dx)) return dy < 0 ? 0 : 2;
    return dx > 0 ? 1 : 3;
  };

  Rgb8Image img{kImageSize, kImageSize, std::vector<std::uint8_t>(3 * kImageSize * kImageSize)};
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      // Membership is decided per 2x2 cell so every cell holds a full period
      // of the texture and a 2x box average cancels it exactly.
      const double dx = (x / 2) * 2 + 1.0 - cx;
      const double dy = (y / 2) * 2 + 1.0 - cy;
      const bool inside = pat.texture != Texture::none && dx * dx + dy * dy <= double(radius) * radius;
      float tex = inside ? kTextureAmplitude * texture_sign(pat.texture, x, y) : 0.0f;
      if (const int side = ring_side(x, y); side >= 0)
        tex = kTextureAmplitude * texture_sign(ring[side], x, y);
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(base[c] + tex + noise(rng), 0.0f, 1.0f);
        img.pixels[(static_cast<std::size_t>(y) * kImageSize + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return img;
}

std::string image_id(int i) { return fmt::format("synth_{:05d}", i); }

}  // namespace

Summary generate(const Options& options) {
  if (options.n_images < 2 * kNumClasses)
    throw ConfigError("synthetic dataset needs n >= 14 (one image per class per split)");
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");

  const auto images_dir = options.out_dir / "images";
  std::error_code ec;
  std::filesystem::create_directories(images_dir, ec);
  if (ec) throw DataError("cannot create " + images_dir.string() + ": " + ec.message());

  const int n = options.n_images;
  std::array<int, kNumClasses> per_class{};
  for (int i = 0; i < n; ++i) ++per_class[i % kNumClasses];
  std::array<int, kNumClasses> test_quota{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    test_quota[c] = std::clamp(static_cast<int>(std::lround(per_class[c] * options.test_fraction)), 1,
                               per_class[c] - 1);
  }

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const auto& cls = class_at(static_cast<std::size_t>(i % kNumClasses));
      const auto id = image_id(i);
      write_png(images_dir / (id + ".png"), render(cls, derive_seed(options.seed, static_cast<std::uint64_t>(i))));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<ManifestEntry> train, test;
  Summary summary;
  std::array<int, kNumClasses> seen{};
  for (int i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(i % kNumClasses);
    const auto id = image_id(i);
    ManifestEntry entry{id, "images/" + id + ".png", c};
    const bool to_test = seen[c]++ >= per_class[c] - test_quota[c];
    (to_test ? test : train).push_back(std::move(entry));
    ++(to_test ? summary.test_counts : summary.train_counts)[c];
  }
  summary.train_manifest = options.out_dir / "train.csv";
  summary.test_manifest = options.out_dir / "test.csv";
  write_manifest(DatasetManifest(Split::train, train), summary.train_manifest);
  write_manifest(DatasetManifest(Split::test, test), summary.test_manifest);

  const PixelRegion smallest = center_square_crop(kImageSize, kImageSize, kDefaultScales.back());
  nlohmann::json meta;
  meta["n_images"] = n;
  meta["seed"] = options.seed;
  meta["test_fraction"] = options.test_fraction;
  meta["image_size"] = kImageSize;
  meta["blob"] = {{"radius_min", kBlobRadiusMin},
                  {"radius_max", kBlobRadiusMax},
                  {"center_jitter", kBlobCenterJitter},
                  {"texture_amplitude", kTextureAmplitude}};
  meta["clutter_ring"] = {{"outer", {kRingOuterLo, kRingOuterHi}}, {"inner", {kRingInnerLo, kRingInnerHi}}};
  meta["smallest_crop"] = {{"scale", kDefaultScales.back()},
                           {"top", smallest.top},
                           {"left", smallest.left},
                           {"side", smallest.height}};
  for (const auto& cls : class_taxonomy()) {
    const auto p = pattern_for(cls);
    meta["classes"][std::string(cls.code)] = {
        {"scale", is_fine_scale(cls) ? "fine" : "coarse"},
        {"texture", std::string(to_string(p.texture))},
        {"tint", {p.tint[0], p.tint[1], p.tint[2]}},
        {"train", summary.train_counts[cls.index]},
        {"test", summary.test_counts[cls.index]}};
  }
  std::ofstream(options.out_dir / "synth_meta.json", std::ios::trunc) << meta.dump(2) << '\n';
  return summary;
}

}  // namespace mlde::synth
