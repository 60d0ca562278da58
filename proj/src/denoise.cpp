#include "adrn/denoise.hpp"

#include "adrn/config.hpp"

#include <algorithm>

namespace adrn {

namespace {

// Predicts X̂ for every tile of `band` (all tiles share one size) and adds
// the results into `sum` / `count`.
template <typename T>
void denoise_tiles(const AdrnModel<T>& model, const HsiCube& noisy, int band, const std::vector<int>& window,
                   const std::vector<PatchOrigin>& origins, int tile_rows, int tile_cols, std::vector<double>& sum,
                   std::vector<int>& count) {
  const int n = static_cast<int>(origins.size());
  const int k = static_cast<int>(window.size());
  Tensor4<T> y_spatial(Shape4{n, 1, tile_rows, tile_cols});
  Tensor4<T> y_spectral(Shape4{n, k, tile_rows, tile_cols});
  const int cols = noisy.cols();
  auto copy = [&](int src_band, PatchOrigin o, std::span<T> dst) {
    const auto src = noisy.band(src_band);
    for (int r = 0; r < tile_rows; ++r) {
      const float* row = src.data() + static_cast<std::size_t>(o.row + r) * cols + o.col;
      std::transform(row, row + tile_cols, dst.begin() + static_cast<std::size_t>(r) * tile_cols,
                     [](float v) { return static_cast<T>(v); });
    }
  };
  for (int s = 0; s < n; ++s) {
    const PatchOrigin o = origins[static_cast<std::size_t>(s)];
    copy(band, o, y_spatial.plane(s, 0));
    for (int j = 0; j < k; ++j) copy(window[static_cast<std::size_t>(j)], o, y_spectral.plane(s, j));
  }
  const Tensor4<T> x_hat = reconstruct(y_spatial, adrn_forward(model, y_spatial, y_spectral));
  for (int s = 0; s < n; ++s) {
    const PatchOrigin o = origins[static_cast<std::size_t>(s)];
    const auto est = x_hat.plane(s, 0);
    for (int r = 0; r < tile_rows; ++r) {
      for (int c = 0; c < tile_cols; ++c) {
        const std::size_t dst = static_cast<std::size_t>(o.row + r) * cols + (o.col + c);
        sum[dst] += static_cast<double>(est[static_cast<std::size_t>(r) * tile_cols + c]);
        count[dst] += 1;
      }
    }
  }
}

void check_compatible(const ModelConfig& config, const HsiCube& noisy) {
  if (config.spectral_bands > noisy.bands() - 1) {
    throw ParameterError("denoise: model needs K=" + std::to_string(config.spectral_bands) +
                         " adjacent bands but the cube has only " + std::to_string(noisy.bands()) + " bands");
  }
}

}  // namespace

template <typename T>
HsiCube denoise_cube(const AdrnModel<T>& model, const HsiCube& noisy, Tiling tiling) {
  check_compatible(model.config, noisy);
  const int tile_rows = tiling.tile > 0 ? std::min(tiling.tile, noisy.rows()) : noisy.rows();
  const int tile_cols = tiling.tile > 0 ? std::min(tiling.tile, noisy.cols()) : noisy.cols();
  if (tiling.tile > 0 && (tiling.overlap < 0 || tiling.overlap >= tiling.tile)) {
    throw ParameterError("denoise: overlap must be in [0, tile)");
  }
  const int stride = tiling.tile > 0 ? tiling.tile - tiling.overlap : 1;
  const auto rows = patch_positions(noisy.rows(), tile_rows, std::max(stride, 1));
  const auto cols = patch_positions(noisy.cols(), tile_cols, std::max(stride, 1));
  std::vector<PatchOrigin> origins;
  for (int r : rows)
    for (int c : cols) origins.push_back({r, c});

  HsiCube out(noisy.rows(), noisy.cols(), noisy.bands());
  out.band_names = noisy.band_names;
  std::vector<double> sum(noisy.band_size());
  std::vector<int> count(noisy.band_size());
  for (int b = 0; b < noisy.bands(); ++b) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    const auto window = spectral_window_bands(noisy.bands(), b, model.config.spectral_bands);
    denoise_tiles(model, noisy, b, window, origins, tile_rows, tile_cols, sum, count);
    auto dst = out.band(b);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(sum[i] / count[i]);
  }
  return out;
}

template <typename T>
std::vector<float> denoise_band_whole(const AdrnModel<T>& model, const HsiCube& noisy, int band) {
  check_compatible(model.config, noisy);
  std::vector<double> sum(noisy.band_size());
  std::vector<int> count(noisy.band_size());
  const auto window = spectral_window_bands(noisy.bands(), band, model.config.spectral_bands);
  denoise_tiles(model, noisy, band, window, {PatchOrigin{0, 0}}, noisy.rows(), noisy.cols(), sum, count);
  return std::vector<float>(sum.begin(), sum.end());
}

template HsiCube denoise_cube(const AdrnModel<float>&, const HsiCube&, Tiling);
template HsiCube denoise_cube(const AdrnModel<double>&, const HsiCube&, Tiling);
template std::vector<float> denoise_band_whole(const AdrnModel<float>&, const HsiCube&, int);
template std::vector<float> denoise_band_whole(const AdrnModel<double>&, const HsiCube&, int);

}  // namespace adrn
