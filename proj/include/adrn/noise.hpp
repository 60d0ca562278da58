#pragma once

#include "adrn/config.hpp"
#include "adrn/hsi.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace adrn {

enum class NoiseKind {
  /// Same σ_n on every band.
  constant,
  /// Each band draws σ_b ~ Uniform(0, σ_max].
  rand_per_band,
  /// σ follows a Gaussian bell over the band index.
  gauss_profile,
};

/// Additive white Gaussian noise description. Sigmas are on the 0-255 gray
/// scale and divided by 255 when applied to [0,1] data.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::constant;
  double sigma = 25.0;  // σ_n for constant, σ_max for rand_per_band
  double beta = 200.0;
  double eta = 30.0;
  std::uint64_t seed = 0;

  static NoiseSpec constant(double sigma, std::uint64_t seed = 0) {
    return {NoiseKind::constant, sigma, 200.0, 30.0, seed};
  }
  static NoiseSpec rand_per_band(double sigma_max, std::uint64_t seed = 0) {
    return {NoiseKind::rand_per_band, sigma_max, 200.0, 30.0, seed};
  }
  static NoiseSpec gauss_profile(double beta, double eta, std::uint64_t seed = 0) {
    return {NoiseKind::gauss_profile, 0.0, beta, eta, seed};
  }

  /// Throws ParameterError unless every parameter of the active kind is > 0.
  void validate() const;

  /// Row label in reports, e.g. "25", "rand(25)", "Gau(200, 30)".
  [[nodiscard]] std::string label() const;

  /// `key = value` lines (kind, parameters, seed); reals use the shortest
  /// round-tripping representation.
  [[nodiscard]] std::string serialize() const;
  static NoiseSpec from_config(const KeyValueConfig& cfg, const std::string& prefix = "");
  static NoiseSpec parse(const std::string& text);

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

/// σ(k) = β·sqrt(g(k) / Σ_j g(j)) with g(k) = exp(-(k - B/2)² / (2η²)) and
/// k = 1..B; element i of the result is σ(i+1). Σ σ(k)² = β².
std::vector<double> band_sigma_profile(double beta, double eta, int bands);

/// Realized per-band σ (0-255 scale) for `spec` on a cube with `bands` bands.
std::vector<double> band_sigmas(const NoiseSpec& spec, int bands);

/// y = x + v, no clipping. Deterministic given spec.seed; each band uses its
/// own derived random stream.
HsiCube apply_noise(const HsiCube& clean, const NoiseSpec& spec);

}  // namespace adrn
