#pragma once

#include "adrn/hsi.hpp"
#include "adrn/model.hpp"

namespace adrn {

struct Tiling {
  /// Tile edge in pixels; <= 0 runs each band as a single tile.
  int tile = 64;
  int overlap = 10;
};

/// Runs the network band by band: builds each band's spectral window, tiles
/// the band, predicts the residual per tile, subtracts it and averages
/// overlapping tiles uniformly.
template <typename T>
HsiCube denoise_cube(const AdrnModel<T>& model, const HsiCube& noisy, Tiling tiling = {});

/// Band predicted as one tile (used as the reference for tiled inference).
template <typename T>
std::vector<float> denoise_band_whole(const AdrnModel<T>& model, const HsiCube& noisy, int band);

}  // namespace adrn
