#pragma once

#include "adrn/hsi.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace adrn {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triplets
};

/// Default pseudo-color band triple (zero-based band indices).
inline constexpr std::array<int, 3> kDefaultRenderBands{57, 27, 17};

/// Maps three bands to R, G, B: clip to [0,1], scale by 255, round.
RgbImage render_pseudocolor(const HsiCube& cube, std::array<int, 3> bands = kDefaultRenderBands);

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace adrn
