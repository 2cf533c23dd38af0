#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mlde {

/// H x W x 3 raster of 32-bit intensities, interleaved (HWC) storage.
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor(int height, int width);
  ImageTensor(int height, int width, std::vector<float> values);

  static ImageTensor filled(int height, int width, float value);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }

  float at(int y, int x, int c) const noexcept {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  float& at(int y, int x, int c) noexcept {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values() noexcept { return values_; }

  /// Per-channel (min, max).
  std::array<std::pair<float, float>, kChannels> channel_range() const;
  bool in_unit_range() const noexcept;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  int height_;
  int width_;
  std::vector<float> values_;
};

struct PixelRegion {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  friend bool operator==(const PixelRegion&, const PixelRegion&) = default;
};

inline constexpr int kNetworkInputSize = 224;
inline constexpr int kPyramidLevels = 4;
inline constexpr int kMinCropSide = 8;

using ScaleSet = std::array<double, kPyramidLevels>;
inline constexpr ScaleSet kDefaultScales{1.0, 0.8, 0.6, 0.4};

/// Bilinear resampling with pixel-center alignment: output pixel i samples the
/// source at (i + 0.5) * in/out - 0.5, clamped to the border.
ImageTensor bilinear_resize(const ImageTensor& img, int out_h, int out_w);

/// Same as bilinear_resize(crop(img, region), ...) without materializing the crop.
ImageTensor resize_region(const ImageTensor& img, const PixelRegion& region, int out_h, int out_w);

ImageTensor crop(const ImageTensor& img, const PixelRegion& region);

/// Centered square of side floor(scale * min(h, w)).
PixelRegion center_square_crop(int height, int width, double scale);

/// Structural problems with a scale set (independent of any image).
std::vector<std::string> scale_violations(const ScaleSet& scales);

struct RoiPyramid {
  std::vector<ImageTensor> levels;  // kPyramidLevels entries, each 224 x 224
  ScaleSet scales{};
};

/// Source regions used for each level: level 0 is the whole image, level k a
/// center square crop at scales[k].
std::array<PixelRegion, kPyramidLevels> pyramid_regions(int height, int width,
                                                        const ScaleSet& scales);

RoiPyramid extract_roi_pyramid(const ImageTensor& img, const ScaleSet& scales = kDefaultScales);

struct ChannelStats {
  std::array<float, 3> mean;
  std::array<float, 3> std;
};

inline constexpr ChannelStats kImageNetStats{{0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}};

/// Planar (CHW) normalized image; values are unbounded.
struct PlanarImage {
  int height = 0;
  int width = 0;
  std::vector<float> planes;

  float at(int c, int y, int x) const noexcept {
    return planes[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// out[c] = (img[c] - mean[c]) / std[c], written channel-planar.
PlanarImage normalize_channels(const ImageTensor& img, const ChannelStats& stats);

ImageTensor flip_horizontal(const ImageTensor& img);

}  // namespace mlde
