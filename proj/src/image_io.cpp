#include "mlde/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <png.h>

#include "mlde/errors.hpp"

namespace mlde {

ImageTensor Rgb8Image::to_tensor() const {
  std::vector<float> values(pixels.size());
  std::transform(pixels.begin(), pixels.end(), values.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return ImageTensor(height, width, std::move(values));
}

Rgb8Image quantize(const ImageTensor& img) {
  Rgb8Image out{img.height(), img.width(), {}};
  out.pixels.resize(img.values().size());
  std::transform(img.values().begin(), img.values().end(), out.pixels.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  return out;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Rgb8Image decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError("PNG decode failed for " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Rgb8Image out{static_cast<int>(image.height), static_cast<int>(image.width), {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw DataError("PNG decode failed for " + path.string() + ": " + message);
  }
  return out;
}

Rgb8Image decode_ppm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  const auto next_int = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      any = true;
      if (value > 1'000'000) break;
    }
    if (!any) throw DataError("malformed PPM header: " + path.string());
    return value;
  };
  const long width = next_int();
  const long height = next_int();
  const long maxval = next_int();
  ++pos;  // single whitespace before raster
  if (maxval != 255 || width < 1 || height < 1) {
    throw DataError("unsupported PPM (need 8-bit P6): " + path.string());
  }
  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() < pos + need) throw DataError("truncated PPM: " + path.string());
  Rgb8Image out{static_cast<int>(height), static_cast<int>(width), {}};
  out.pixels.assign(bytes.begin() + pos, bytes.begin() + pos + need);
  return out;
}

}  // namespace

Rgb8Image read_rgb8(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
  throw DataError("unrecognized image format: " + path.string());
}

ImageTensor read_image(const std::filesystem::path& path) { return read_rgb8(path).to_tensor(); }

void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw DataError("PNG write failed for " + path.string() + ": " + image.message);
  }
}

}  // namespace mlde
