#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mlde/errors.hpp"
#include "mlde/image.hpp"
#include "mlde/image_io.hpp"
#include "test_support.hpp"

namespace mlde {
namespace {

using testing::random_image;
using testing::TempDir;

// Independent closed-form bilinear sample of a single-channel grid.
double bilinear_oracle(const std::vector<std::vector<double>>& g, int out_h, int out_w, int i, int j) {
  const int in_h = static_cast<int>(g.size());
  const int in_w = static_cast<int>(g[0].size());
  auto coord = [](int o, int in, int out) {
    return std::clamp((o + 0.5) * in / out - 0.5, 0.0, static_cast<double>(in - 1));
  };
  const double y = coord(i, in_h, out_h);
  const double x = coord(j, in_w, out_w);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, in_h - 1);
  const int x1 = std::min(x0 + 1, in_w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  return (1 - fy) * ((1 - fx) * g[y0][x0] + fx * g[y0][x1]) +
         fy * ((1 - fx) * g[y1][x0] + fx * g[y1][x1]);
}

TEST(BilinearResize, TwoByTwoToFourByFour) {
  ImageTensor img(2, 2);
  const std::vector<std::vector<double>> grid{{0, 1}, {0, 1}};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(grid[y][x]);
  const auto out = bilinear_resize(img, 4, 4);
  ASSERT_EQ(out.height(), 4);
  ASSERT_EQ(out.width(), 4);
  const double row[] = {0.0, 0.25, 0.75, 1.0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c) {
        EXPECT_DOUBLE_EQ(out.at(i, j, c), bilinear_oracle(grid, 4, 4, i, j));
        EXPECT_DOUBLE_EQ(out.at(i, j, c), row[j]);
      }
}

TEST(BilinearResize, MatchesOracleOnRandomGrids) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> dim(1, 13);
    const int ih = dim(rng), iw = dim(rng), oh = dim(rng), ow = dim(rng);
    const auto img = random_image(ih, iw, rng);
    const auto out = bilinear_resize(img, oh, ow);
    for (int c = 0; c < 3; ++c) {
      std::vector<std::vector<double>> g(ih, std::vector<double>(iw));
      for (int y = 0; y < ih; ++y)
        for (int x = 0; x < iw; ++x) g[y][x] = img.at(y, x, c);
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) EXPECT_NEAR(out.at(i, j, c), bilinear_oracle(g, oh, ow, i, j), 1e-6);
    }
  }
}

TEST(BilinearResize, ConstantStaysConstant) {
  const auto out = bilinear_resize(ImageTensor::filled(17, 31, 0.5f), 224, 224);
  for (float v : out.values()) EXPECT_EQ(v, 0.5f);
}

TEST(BilinearResize, SameSizeIsIdentity) {
  std::mt19937_64 rng(1);
  const auto img = random_image(224, 224, rng);
  EXPECT_EQ(bilinear_resize(img, 224, 224), img);
}

TEST(BilinearResize, StaysWithinChannelRange) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = random_image(40 + trial, 23, rng);
    const auto range = img.channel_range();
    const auto out = bilinear_resize(img, 224, 224);
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        for (int c = 0; c < 3; ++c) {
          EXPECT_GE(out.at(y, x, c), range[c].first);
          EXPECT_LE(out.at(y, x, c), range[c].second);
        }
  }
}

TEST(BilinearResize, RejectsNonPositiveTarget) {
  const auto img = ImageTensor::filled(4, 4, 0.1f);
  EXPECT_THROW(bilinear_resize(img, 0, 4), DataError);
  EXPECT_THROW(bilinear_resize(img, 4, -1), DataError);
}

TEST(ResizeRegion, EqualsResizeOfCrop) {
  std::mt19937_64 rng(3);
  const auto img = random_image(50, 70, rng);
  const PixelRegion r{7, 11, 30, 30};
  EXPECT_EQ(resize_region(img, r, 224, 224), bilinear_resize(crop(img, r), 224, 224));
  EXPECT_THROW(resize_region(img, {40, 0, 30, 30}, 8, 8), DataError);
}

TEST(CenterCrop, SquareImageLevelOne) {
  const auto r = center_square_crop(448, 448, 0.8);
  EXPECT_EQ(r, (PixelRegion{45, 45, 358, 358}));
}

TEST(CenterCrop, NonSquareImage) {
  const auto r = center_square_crop(300, 500, 0.5);
  EXPECT_EQ(r, (PixelRegion{75, 175, 150, 150}));
}

TEST(CenterCrop, TooSmallSideRejected) {
  EXPECT_THROW(center_square_crop(19, 30, 0.4), DataError);  // floor(7.6) = 7
  EXPECT_NO_THROW(center_square_crop(20, 30, 0.4));
}

TEST(Scales, DefaultsAreValid) { EXPECT_TRUE(scale_violations(kDefaultScales).empty()); }

TEST(Scales, EveryProblemReported) {
  const auto bad = scale_violations({0.9, 0.95, 1.2, 0.0});
  EXPECT_GE(bad.size(), 4u);
  EXPECT_FALSE(scale_violations({1.0, NAN, 0.5, 0.4}).empty());
  EXPECT_FALSE(scale_violations({1.0, 0.6, 0.6, 0.4}).empty());
}

TEST(Pyramid, LevelZeroIsWholeImageResize) {
  std::mt19937_64 rng(4);
  const auto img = random_image(96, 80, rng);
  const auto p = extract_roi_pyramid(img);
  ASSERT_EQ(p.levels.size(), 4u);
  EXPECT_EQ(p.levels[0], bilinear_resize(img, 224, 224));
  for (int k = 1; k < 4; ++k) {
    EXPECT_EQ(p.levels[k].height(), 224);
    EXPECT_EQ(p.levels[k].width(), 224);
    EXPECT_EQ(p.levels[k],
              bilinear_resize(crop(img, center_square_crop(96, 80, kDefaultScales[k])), 224, 224));
  }
}

TEST(Pyramid, ConstantImageGivesConstantLevels) {
  const auto p = extract_roi_pyramid(ImageTensor::filled(64, 64, 0.25f));
  for (const auto& level : p.levels)
    for (float v : level.values()) EXPECT_EQ(v, 0.25f);
}

// Cropping a 0.5 crop at 0.5 picks the same pixels as a 0.25 crop of the
// original when the sides divide evenly.
TEST(Pyramid, ComposedCropsAgree) {
  std::mt19937_64 rng(6);
  const auto img = random_image(400, 400, rng);
  const auto outer = center_square_crop(400, 400, 0.5);
  const auto inner_of_outer = crop(crop(img, outer), center_square_crop(outer.height, outer.width, 0.5));
  const auto direct = crop(img, center_square_crop(400, 400, 0.25));
  const auto a = bilinear_resize(inner_of_outer, 224, 224);
  const auto b = bilinear_resize(direct, 224, 224);
  for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-5);
}

TEST(Pyramid, MalformedScalesRejected) {
  const auto img = ImageTensor::filled(64, 64, 0.5f);
  EXPECT_THROW(extract_roi_pyramid(img, {1.0, 0.4, 0.6, 0.8}), DataError);
  EXPECT_THROW(extract_roi_pyramid(ImageTensor::filled(16, 16, 0.5f)), DataError);
}

TEST(Normalize, IdentityStats) {
  std::mt19937_64 rng(7);
  const auto img = random_image(5, 6, rng);
  const auto n = normalize_channels(img, {{0, 0, 0}, {1, 1, 1}});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) EXPECT_EQ(n.at(c, y, x), img.at(y, x, c));
}

TEST(Normalize, ConstantHalfBecomesZero) {
  const auto n = normalize_channels(ImageTensor::filled(3, 3, 0.5f), {{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}});
  for (float v : n.planes) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, InverseRecoversInput) {
  std::mt19937_64 rng(8);
  const auto img = random_image(20, 30, rng);
  const auto n = normalize_channels(img, kImageNetStats);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x)
        EXPECT_NEAR(n.at(c, y, x) * kImageNetStats.std[c] + kImageNetStats.mean[c], img.at(y, x, c), 1e-6);
}

TEST(Normalize, NonPositiveStdRejected) {
  const auto img = ImageTensor::filled(2, 2, 0.5f);
  EXPECT_THROW(normalize_channels(img, {{0, 0, 0}, {1, 0, 1}}), DataError);
  EXPECT_THROW(normalize_channels(img, {{0, 0, 0}, {1, 1, -1}}), DataError);
}

TEST(Flip, MirrorsColumnsAndIsAnInvolution) {
  std::mt19937_64 rng(9);
  const auto img = random_image(4, 5, rng);
  const auto f = flip_horizontal(img);
  EXPECT_EQ(f.at(2, 0, 1), img.at(2, 4, 1));
  EXPECT_EQ(flip_horizontal(f), img);
}

TEST(ImageTensorCtor, RejectsBadInput) {
  EXPECT_THROW(ImageTensor(0, 3), DataError);
  EXPECT_THROW(ImageTensor(1, 1, std::vector<float>{0, 0}), DataError);
  EXPECT_THROW(ImageTensor(1, 1, std::vector<float>{0, NAN, 0}), DataError);
}

TEST(ImageIo, PngRoundTripIsExactAfterQuantization) {
  TempDir dir;
  std::mt19937_64 rng(10);
  const auto raw = quantize(random_image(13, 21, rng));
  write_png(dir / "x.png", raw);
  const auto back = read_rgb8(dir / "x.png");
  EXPECT_EQ(back.height, 13);
  EXPECT_EQ(back.width, 21);
  EXPECT_EQ(back.pixels, raw.pixels);
  const auto t = read_image(dir / "x.png");
  EXPECT_TRUE(t.in_unit_range());
  EXPECT_FLOAT_EQ(t.values()[0], raw.pixels[0] / 255.0f);
}

TEST(ImageIo, QuantizeRoundsToNearestLevel) {
  ImageTensor img(1, 1, {0.0f, 0.5f, 1.0f});
  const auto q = quantize(img);
  EXPECT_EQ(q.pixels, (std::vector<std::uint8_t>{0, 128, 255}));
}

TEST(ImageIo, PpmIsDecoded) {
  TempDir dir;
  std::string ppm = "P6\n2 1\n255\n";
  ppm += std::string{'\x01', '\x02', '\x03', '\x04', '\x05', '\x06'};
  testing::write_file(dir / "x.ppm", ppm);
  const auto img = read_rgb8(dir / "x.ppm");
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.pixels[5], 6);
}

TEST(ImageIo, GarbageAndMissingFilesAreDataErrors) {
  TempDir dir;
  testing::write_file(dir / "bad.png", "not an image");
  EXPECT_THROW(read_rgb8(dir / "bad.png"), DataError);
  EXPECT_THROW(read_rgb8(dir / "missing.png"), DataError);
}

}  // namespace
}  // namespace mlde
