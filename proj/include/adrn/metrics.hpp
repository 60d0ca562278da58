#pragma once

#include "adrn/hsi.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adrn {

/// PSNR reported when the MSE is exactly zero.
inline constexpr double kPsnrCap = 100.0;

/// 10·log10(peak² / MSE) in dB; kPsnrCap when MSE == 0.
double psnr_band(std::span<const float> estimate, std::span<const float> reference, double peak = 1.0);
double psnr_band(std::span<const double> estimate, std::span<const double> reference, double peak = 1.0);

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03)
/// over window positions fully inside the band. Bands smaller than the
/// window fall back to a single global-statistics SSIM with a warning.
double ssim_band(std::span<const float> estimate, std::span<const float> reference, int rows, int cols,
                 double peak = 1.0);

/// SSIM from global means/variances/covariance of the whole band.
double ssim_global(std::span<const float> estimate, std::span<const float> reference, double peak = 1.0);

/// Mean and sample (n-1) standard deviation.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

struct RunStats {
  int runs = 0;
  MeanStd mpsnr;
  MeanStd mssim;
  std::vector<double> run_mpsnr;
  std::vector<double> run_mssim;
};

struct QualityReport {
  std::vector<double> psnr_per_band;
  std::vector<double> ssim_per_band;
  double mpsnr = 0.0;
  double mssim = 0.0;
  /// Present only when more than one run was evaluated.
  std::optional<RunStats> run_stats;
};

/// Per-band metrics of one denoised cube against the clean cube.
QualityReport evaluate(const HsiCube& clean, const HsiCube& denoised);

/// Per-band metrics of the first run plus across-run statistics of MPSNR
/// and MSSIM when runs.size() > 1.
QualityReport evaluate(const HsiCube& clean, std::span<const HsiCube> runs);

/// "35.527±0.0104" style cell.
std::string format_mean_std(double mean, double std, int mean_decimals, int std_decimals);

/// `band,psnr_db,ssim` rows followed by summary rows.
std::string report_csv(const QualityReport& report);

/// Two-row text table (MPSNR / MSSIM) for one noise level, laid out like
/// the usual comparison table with a single method column.
std::string report_table(const QualityReport& report, const std::string& noise_label,
                         const std::string& method = "ADRN");

}  // namespace adrn
