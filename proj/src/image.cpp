#include "mlde/image.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mlde/errors.hpp"
#include "mlde/kernels.hpp"

namespace mlde {

ImageTensor::ImageTensor(int height, int width)
    : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw DataError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  values_.assign(static_cast<std::size_t>(height) * width * kChannels, 0.0f);
}

ImageTensor::ImageTensor(int height, int width, std::vector<float> values)
    : ImageTensor(height, width) {
  if (values.size() != values_.size()) throw DataError("image value count does not match HxWx3");
  for (float v : values) {
    if (!std::isfinite(v)) throw DataError("image contains non-finite values");
  }
  values_ = std::move(values);
}

ImageTensor ImageTensor::filled(int height, int width, float value) {
  ImageTensor img(height, width);
  std::fill(img.values_.begin(), img.values_.end(), value);
  return img;
}

std::array<std::pair<float, float>, ImageTensor::kChannels> ImageTensor::channel_range() const {
  std::array<std::pair<float, float>, kChannels> range;
  for (int c = 0; c < kChannels; ++c) range[c] = {values_[c], values_[c]};
  for (std::size_t i = 0; i < values_.size(); ++i) {
    auto& r = range[i % kChannels];
    r.first = std::min(r.first, values_[i]);
    r.second = std::max(r.second, values_[i]);
  }
  return range;
}

bool ImageTensor::in_unit_range() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

ImageTensor resize_region(const ImageTensor& img, const PixelRegion& region, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw DataError("resize target must be positive, got " + std::to_string(out_h) + "x" +
                    std::to_string(out_w));
  }
  if (region.height < 1 || region.width < 1 || region.top < 0 || region.left < 0 ||
      region.top + region.height > img.height() || region.left + region.width > img.width()) {
    throw DataError("resize region lies outside the image");
  }
  ImageTensor out(out_h, out_w);
  kernels::parallel::bilinear_resize_region(img, region, out);
  return out;
}

ImageTensor bilinear_resize(const ImageTensor& img, int out_h, int out_w) {
  return resize_region(img, {0, 0, img.height(), img.width()}, out_h, out_w);
}

ImageTensor crop(const ImageTensor& img, const PixelRegion& region) {
  if (region.height < 1 || region.width < 1 || region.top < 0 || region.left < 0 ||
      region.top + region.height > img.height() || region.left + region.width > img.width()) {
    throw DataError("crop region lies outside the image");
  }
  ImageTensor out(region.height, region.width);
  for (int y = 0; y < region.height; ++y) {
    const float* src = &img.values()[(static_cast<std::size_t>(region.top + y) * img.width() +
                                      region.left) * ImageTensor::kChannels];
    std::copy_n(src, static_cast<std::size_t>(region.width) * ImageTensor::kChannels,
                &out.values()[static_cast<std::size_t>(y) * region.width * ImageTensor::kChannels]);
  }
  return out;
}

PixelRegion center_square_crop(int height, int width, double scale) {
  const int shorter = std::min(height, width);
  const int side = static_cast<int>(std::floor(scale * shorter));
  if (side < kMinCropSide) {
    throw DataError("crop side " + std::to_string(side) + " is below the minimum of " +
                    std::to_string(kMinCropSide) + " pixels");
  }
  return {(height - side) / 2, (width - side) / 2, side, side};
}

std::vector<std::string> scale_violations(const ScaleSet& scales) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < scales.size(); ++k) {
    if (!std::isfinite(scales[k])) out.push_back("scale " + std::to_string(k) + " is not finite");
  }
  if (!out.empty()) return out;
  if (scales[0] != 1.0) out.push_back("scales[0] must be exactly 1.0");
  for (std::size_t k = 1; k < scales.size(); ++k) {
    if (!(scales[k] > 0.0 && scales[k] < 1.0)) {
      std::ostringstream msg;
      msg << "scales[" << k << "] = " << scales[k] << " must lie in (0, 1)";
      out.push_back(msg.str());
    }
    if (!(scales[k] < scales[k - 1])) {
      out.push_back("scales must be strictly decreasing at index " + std::to_string(k));
    }
  }
  return out;
}

std::array<PixelRegion, kPyramidLevels> pyramid_regions(int height, int width,
                                                        const ScaleSet& scales) {
  if (auto bad = scale_violations(scales); !bad.empty()) {
    throw DataError("malformed scales: " + bad.front());
  }
  std::array<PixelRegion, kPyramidLevels> regions;
  regions[0] = {0, 0, height, width};
  for (int k = 1; k < kPyramidLevels; ++k) regions[k] = center_square_crop(height, width, scales[k]);
  return regions;
}

RoiPyramid extract_roi_pyramid(const ImageTensor& img, const ScaleSet& scales) {
  const auto regions = pyramid_regions(img.height(), img.width(), scales);
  RoiPyramid pyramid;
  pyramid.scales = scales;
  pyramid.levels.reserve(kPyramidLevels);
  for (const auto& region : regions) {
    pyramid.levels.push_back(resize_region(img, region, kNetworkInputSize, kNetworkInputSize));
  }
  return pyramid;
}

PlanarImage normalize_channels(const ImageTensor& img, const ChannelStats& stats) {
  for (float s : stats.std) {
    if (!(s > 0.0f)) throw DataError("normalization std must be positive");
  }
  PlanarImage out{img.height(), img.width(), {}};
  const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
  out.planes.resize(plane * ImageTensor::kChannels);
  const auto src = img.values();
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    float* dst = out.planes.data() + c * plane;
    const float mean = stats.mean[c];
    const float sd = stats.std[c];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i * ImageTensor::kChannels + c] - mean) / sd;
  }
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& img) {
  ImageTensor out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < ImageTensor::kChannels; ++c) {
        out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
      }
    }
  }
  return out;
}

}  // namespace mlde
