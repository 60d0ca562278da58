#include "adrn/metrics.hpp"

#include "adrn/config.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <array>
#include <cmath>
#include <numeric>

namespace adrn {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  const int half = kWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - half;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable 'valid' Gaussian filtering of a rows×cols image.
std::vector<double> filter_valid(const std::vector<double>& img, int rows, int cols,
                                 const std::array<double, kWindow>& taps) {
  const int out_rows = rows - kWindow + 1;
  const int out_cols = cols - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(rows) * out_cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(r) * cols + c + k];
      tmp[static_cast<std::size_t>(r) * out_cols + c] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(out_rows) * out_cols);
  for (int r = 0; r < out_rows; ++r) {
    for (int c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(r + k) * out_cols + c];
      out[static_cast<std::size_t>(r) * out_cols + c] = acc;
    }
  }
  return out;
}

template <typename T>
void require_same_size(std::span<const T> a, std::span<const T> b, const char* what) {
  if (a.size() != b.size() || a.empty()) throw ShapeError(std::string(what) + ": bands differ in size or are empty");
}

template <typename T>
double psnr_impl(std::span<const T> estimate, std::span<const T> reference, double peak) {
  require_same_size(estimate, reference, "psnr_band");
  double sum = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = static_cast<double>(estimate[i]) - static_cast<double>(reference[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(estimate.size());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace

double psnr_band(std::span<const float> estimate, std::span<const float> reference, double peak) {
  return psnr_impl(estimate, reference, peak);
}

double psnr_band(std::span<const double> estimate, std::span<const double> reference, double peak) {
  return psnr_impl(estimate, reference, peak);
}

double ssim_global(std::span<const float> estimate, std::span<const float> reference, double peak) {
  require_same_size(estimate, reference, "ssim_global");
  const double n = static_cast<double>(estimate.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    mx += estimate[i];
    my += reference[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double dx = estimate[i] - mx;
    const double dy = reference[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  const double c1 = (kK1 * peak) * (kK1 * peak);
  const double c2 = (kK2 * peak) * (kK2 * peak);
  return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim_band(std::span<const float> estimate, std::span<const float> reference, int rows, int cols, double peak) {
  require_same_size(estimate, reference, "ssim_band");
  if (static_cast<std::size_t>(rows) * cols != estimate.size()) throw ShapeError("ssim_band: rows*cols != band size");
  if (rows < kWindow || cols < kWindow) {
    spdlog::warn("ssim_band: {}x{} band is smaller than the {}x{} window; using global statistics", rows, cols,
                 kWindow, kWindow);
    return ssim_global(estimate, reference, peak);
  }
  const auto taps = gaussian_taps();
  const std::size_t n = estimate.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = estimate[i];
    y[i] = reference[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, rows, cols, taps);
  const auto my = filter_valid(y, rows, cols, taps);
  const auto sxx = filter_valid(xx, rows, cols, taps);
  const auto syy = filter_valid(yy, rows, cols, taps);
  const auto sxy = filter_valid(xy, rows, cols, taps);
  const double c1 = (kK1 * peak) * (kK1 * peak);
  const double c2 = (kK2 * peak) * (kK2 * peak);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

QualityReport evaluate(const HsiCube& clean, const HsiCube& denoised) {
  if (!clean.same_dims(denoised)) {
    throw ShapeError(fmt::format("evaluate: clean cube {}x{}x{} vs denoised {}x{}x{}", clean.rows(), clean.cols(),
                                 clean.bands(), denoised.rows(), denoised.cols(), denoised.bands()));
  }
  QualityReport report;
  for (int b = 0; b < clean.bands(); ++b) {
    report.psnr_per_band.push_back(psnr_band(denoised.band(b), clean.band(b)));
    report.ssim_per_band.push_back(ssim_band(denoised.band(b), clean.band(b), clean.rows(), clean.cols()));
  }
  report.mpsnr = mean_std(report.psnr_per_band).mean;
  report.mssim = mean_std(report.ssim_per_band).mean;
  return report;
}

QualityReport evaluate(const HsiCube& clean, std::span<const HsiCube> runs) {
  if (runs.empty()) throw ParameterError("evaluate: no denoised runs");
  QualityReport first = evaluate(clean, runs.front());
  if (runs.size() == 1) return first;
  RunStats stats;
  stats.runs = static_cast<int>(runs.size());
  stats.run_mpsnr.push_back(first.mpsnr);
  stats.run_mssim.push_back(first.mssim);
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const QualityReport r = evaluate(clean, runs[i]);
    stats.run_mpsnr.push_back(r.mpsnr);
    stats.run_mssim.push_back(r.mssim);
  }
  stats.mpsnr = mean_std(stats.run_mpsnr);
  stats.mssim = mean_std(stats.run_mssim);
  first.run_stats = std::move(stats);
  return first;
}

std::string format_mean_std(double mean, double std, int mean_decimals, int std_decimals) {
  return fmt::format("{:.{}f}±{:.{}f}", mean, mean_decimals, std, std_decimals);
}

std::string report_csv(const QualityReport& report) {
  std::string out = "band,psnr_db,ssim\n";
  for (std::size_t b = 0; b < report.psnr_per_band.size(); ++b) {
    out += fmt::format("{},{:.6f},{:.6f}\n", b, report.psnr_per_band[b], report.ssim_per_band[b]);
  }
  out += fmt::format("mean,{:.6f},{:.6f}\n", report.mpsnr, report.mssim);
  if (report.run_stats) {
    const auto& s = *report.run_stats;
    for (int i = 0; i < s.runs; ++i) {
      out += fmt::format("run{},{:.6f},{:.6f}\n", i, s.run_mpsnr[static_cast<std::size_t>(i)],
                         s.run_mssim[static_cast<std::size_t>(i)]);
    }
    out += fmt::format("runs_mean,{:.6f},{:.6f}\n", s.mpsnr.mean, s.mssim.mean);
    out += fmt::format("runs_sample_std,{:.6f},{:.6f}\n", s.mpsnr.std, s.mssim.std);
  }
  return out;
}

std::string report_table(const QualityReport& report, const std::string& noise_label, const std::string& method) {
  std::string mpsnr, mssim;
  if (report.run_stats) {
    mpsnr = format_mean_std(report.run_stats->mpsnr.mean, report.run_stats->mpsnr.std, 3, 4);
    mssim = format_mean_std(report.run_stats->mssim.mean, report.run_stats->mssim.std, 4, 4);
  } else {
    mpsnr = fmt::format("{:.3f}", report.mpsnr);
    mssim = fmt::format("{:.4f}", report.mssim);
  }
  const std::string level = "sigma=" + noise_label;
  const std::size_t col0 = std::max<std::size_t>(level.size(), 11);
  // The ± sign is two bytes in UTF-8 but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  const std::size_t col2 = std::max({width(mpsnr), width(mssim), method.size()});
  auto pad = [&](const std::string& s, std::size_t w) { return s + std::string(w - width(s), ' '); };
  std::string out;
  out += pad("Noise Level", col0) + "  " + pad("Criterion", 9) + "  " + pad(method, col2) + '\n';
  out += std::string(col0 + 2 + 9 + 2 + col2, '-') + '\n';
  out += pad(level, col0) + "  " + pad("MPSNR", 9) + "  " + pad(mpsnr, col2) + '\n';
  out += pad("", col0) + "  " + pad("MSSIM", 9) + "  " + pad(mssim, col2) + '\n';
  if (report.run_stats) out += fmt::format("({} runs; mean±sample std)\n", report.run_stats->runs);
  return out;
}

}  // namespace adrn
