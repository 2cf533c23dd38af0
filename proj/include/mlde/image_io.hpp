#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mlde/image.hpp"

namespace mlde {

/// 8-bit interleaved RGB raster, the decoded form of an image file.
struct Rgb8Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  /// Maps byte v to v / 255.
  ImageTensor to_tensor() const;
};

/// Rounds each value of a [0,1] image to the nearest of 256 levels.
Rgb8Image quantize(const ImageTensor& img);

/// Decodes PNG (any bit depth / color type, flattened to RGB) or binary PPM.
Rgb8Image read_rgb8(const std::filesystem::path& path);

ImageTensor read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Rgb8Image& image);

}  // namespace mlde
