#include "adrn/render.hpp"

#include "adrn/config.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace adrn {

RgbImage render_pseudocolor(const HsiCube& cube, std::array<int, 3> bands) {
  for (int b : bands) {
    if (b < 0 || b >= cube.bands()) {
      throw ParameterError("render: band " + std::to_string(b) + " outside [0, " + std::to_string(cube.bands()) + ")");
    }
  }
  RgbImage img{cube.cols(), cube.rows(), {}};
  img.pixels.resize(cube.band_size() * 3);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto src = cube.band(bands[ch]);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
      img.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  RgbImage img{static_cast<int>(png.width), static_cast<int>(png.height), {}};
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return img;
}

}  // namespace adrn
