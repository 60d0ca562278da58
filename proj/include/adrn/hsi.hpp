#pragma once

#include "adrn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adrn {

/// Malformed or inconsistent file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Interleave { bsq, bil, bip };

std::string to_string(Interleave interleave);
Interleave parse_interleave(const std::string& text);

/// Half-open index range [begin, end).
struct Range {
  int begin = 0;
  int end = 0;
  [[nodiscard]] int extent() const { return end - begin; }
  [[nodiscard]] bool overlaps(const Range& o) const { return begin < o.end && o.begin < end; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct Region {
  Range rows;
  Range cols;
  [[nodiscard]] bool overlaps(const Region& o) const { return rows.overlaps(o.rows) && cols.overlaps(o.cols); }
  [[nodiscard]] bool empty() const { return rows.extent() <= 0 || cols.extent() <= 0; }
  /// "r0:r1,c0:c1"
  [[nodiscard]] std::string str() const;
  static Region parse(const std::string& text);
  friend bool operator==(const Region&, const Region&) = default;
};

struct SplitSpec {
  Region train;
  Region test;

  /// 200×200 test crop in the top-left corner, the remaining 1080 rows for training.
  static SplitSpec dc_mall();
  /// Throws ParameterError if the regions overlap or leave the cube bounds.
  void validate(int rows, int cols) const;
};

/// Rows × cols × bands cube, stored band-sequential in memory.
class HsiCube {
 public:
  HsiCube() = default;
  HsiCube(int rows, int cols, int bands, float fill = 0.0f);

  [[nodiscard]] int rows() const { return rows_; }
  [[nodiscard]] int cols() const { return cols_; }
  [[nodiscard]] int bands() const { return bands_; }
  [[nodiscard]] std::size_t band_size() const { return static_cast<std::size_t>(rows_) * cols_; }
  [[nodiscard]] bool same_dims(const HsiCube& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && bands_ == o.bands_;
  }

  float& at(int row, int col, int band) { return values_[offset(row, col, band)]; }
  [[nodiscard]] float at(int row, int col, int band) const { return values_[offset(row, col, band)]; }

  /// Row-major rows×cols plane of one band.
  [[nodiscard]] std::span<float> band(int b) {
    return std::span<float>(values_).subspan(static_cast<std::size_t>(b) * band_size(), band_size());
  }
  [[nodiscard]] std::span<const float> band(int b) const {
    return std::span<const float>(values_).subspan(static_cast<std::size_t>(b) * band_size(), band_size());
  }

  [[nodiscard]] std::span<float> values() { return values_; }
  [[nodiscard]] std::span<const float> values() const { return values_; }

  std::vector<std::string> band_names;

 private:
  [[nodiscard]] std::size_t offset(int row, int col, int band) const {
    return (static_cast<std::size_t>(band) * rows_ + row) * cols_ + col;
  }

  int rows_ = 0;
  int cols_ = 0;
  int bands_ = 0;
  std::vector<float> values_;
};

/// Per-band min-max scaling to [0,1]. Constant bands become all zeros; their
/// indices are appended to `constant_bands` when given and a warning is logged.
HsiCube normalize_per_band(const HsiCube& cube, std::vector<int>* constant_bands = nullptr);

/// Largest deviation of any value outside [0,1] (0 when the cube is in range).
double range_violation(const HsiCube& cube);

/// Indices of the K bands nearest to `band`, excluding it, in ascending
/// order. Split evenly below/above (the extra band of an odd K goes above);
/// the window is shifted inward at the ends of the spectrum.
std::vector<int> spectral_window_bands(int bands, int band, int window);

/// The K-band neighborhood of `band` as a (1, K, rows, cols) tensor.
Tensor4<float> spectral_window(const HsiCube& cube, int band, int window);

struct PatchOrigin {
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

enum class PatchEdge {
  /// Add a last origin flush with the region edge when the stride overshoots.
  flush,
  /// Plain stride grid; the trailing strip may stay uncovered.
  grid,
};

/// Patch origins (absolute cube coordinates) tiling `region`, row-major.
std::vector<PatchOrigin> extract_patches(const Region& region, int patch, int stride,
                                         PatchEdge edge = PatchEdge::flush);

/// Grid positions along one axis, same policy as extract_patches.
std::vector<int> patch_positions(int extent, int patch, int stride, PatchEdge edge = PatchEdge::flush);

HsiCube crop(const HsiCube& cube, const Region& region);

/// Header path that pairs with a payload path (`cube.raw` -> `cube.hdr`).
std::filesystem::path header_path_for(const std::filesystem::path& payload);

/// Writes little-endian float32 payload plus text header.
void save_cube(const HsiCube& cube, const std::filesystem::path& payload, Interleave interleave = Interleave::bsq);
HsiCube load_cube(const std::filesystem::path& payload, const std::filesystem::path& header);
HsiCube load_cube(const std::filesystem::path& payload);

/// Smooth Gaussian blobs whose amplitudes drift slowly across bands, scaled per band to [0,1].
HsiCube synthetic_cube(int rows, int cols, int bands, std::uint64_t seed, int blobs = 12);

}  // namespace adrn
