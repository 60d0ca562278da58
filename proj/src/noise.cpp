#include "adrn/noise.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

namespace adrn {

namespace {

std::string real_str(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

const char* kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::constant: return "constant";
    case NoiseKind::rand_per_band: return "rand_per_band";
    case NoiseKind::gauss_profile: return "gauss_profile";
  }
  return "constant";
}

std::mt19937_64 band_stream(std::uint64_t seed, int band) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(band), 0x6e6f6973u};
  return std::mt19937_64(seq);
}

}  // namespace

void NoiseSpec::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ParameterError(std::string("noise spec: ") + what + " must be > 0, got " + real_str(v));
    }
  };
  switch (kind) {
    case NoiseKind::constant: positive(sigma, "sigma"); break;
    case NoiseKind::rand_per_band: positive(sigma, "sigma_max"); break;
    case NoiseKind::gauss_profile:
      positive(beta, "beta");
      positive(eta, "eta");
      break;
  }
}

std::string NoiseSpec::label() const {
  switch (kind) {
    case NoiseKind::constant: return real_str(sigma);
    case NoiseKind::rand_per_band: return "rand(" + real_str(sigma) + ")";
    case NoiseKind::gauss_profile: return "Gau(" + real_str(beta) + ", " + real_str(eta) + ")";
  }
  return {};
}

std::string NoiseSpec::serialize() const {
  std::ostringstream os;
  os << "kind = " << kind_name(kind) << '\n';
  switch (kind) {
    case NoiseKind::constant: os << "sigma = " << real_str(sigma) << '\n'; break;
    case NoiseKind::rand_per_band: os << "sigma_max = " << real_str(sigma) << '\n'; break;
    case NoiseKind::gauss_profile:
      os << "beta = " << real_str(beta) << '\n' << "eta = " << real_str(eta) << '\n';
      break;
  }
  os << "seed = " << seed << '\n';
  return os.str();
}

NoiseSpec NoiseSpec::from_config(const KeyValueConfig& cfg, const std::string& prefix) {
  cfg.reject_unknown(prefix, {"kind", "sigma", "sigma_max", "beta", "eta", "seed"});
  const std::string kind = cfg.get(prefix + "kind");
  NoiseSpec spec;
  if (kind == "constant") {
    spec = constant(cfg.get_real(prefix + "sigma"));
  } else if (kind == "rand_per_band") {
    spec = rand_per_band(cfg.get_real(prefix + "sigma_max"));
  } else if (kind == "gauss_profile") {
    spec = gauss_profile(cfg.get_real_or(prefix + "beta", 200.0), cfg.get_real_or(prefix + "eta", 30.0));
  } else {
    throw ParameterError("noise spec: unknown kind '" + kind + "'");
  }
  const long seed = cfg.get_int_or(prefix + "seed", 0);
  if (seed < 0) throw ParameterError("noise spec: seed must be non-negative");
  spec.seed = static_cast<std::uint64_t>(seed);
  spec.validate();
  return spec;
}

NoiseSpec NoiseSpec::parse(const std::string& text) { return from_config(KeyValueConfig::parse(text, "noise spec")); }

std::vector<double> band_sigma_profile(double beta, double eta, int bands) {
  if (bands < 1) throw ParameterError("band_sigma_profile: need at least one band");
  const double center = bands / 2.0;
  std::vector<double> g(static_cast<std::size_t>(bands));
  double total = 0.0;
  for (int k = 1; k <= bands; ++k) {
    const double d = k - center;
    g[static_cast<std::size_t>(k - 1)] = std::exp(-d * d / (2.0 * eta * eta));
    total += g[static_cast<std::size_t>(k - 1)];
  }
  for (double& v : g) v = beta * std::sqrt(v / total);
  return g;
}

std::vector<double> band_sigmas(const NoiseSpec& spec, int bands) {
  spec.validate();
  switch (spec.kind) {
    case NoiseKind::constant: return std::vector<double>(static_cast<std::size_t>(bands), spec.sigma);
    case NoiseKind::rand_per_band: {
      std::vector<double> out(static_cast<std::size_t>(bands));
      for (int b = 0; b < bands; ++b) {
        auto rng = band_stream(spec.seed, b);
        // uniform_real_distribution covers [0, σ_max); reflect it onto (0, σ_max].
        out[static_cast<std::size_t>(b)] = spec.sigma - std::uniform_real_distribution<double>(0.0, spec.sigma)(rng);
      }
      return out;
    }
    case NoiseKind::gauss_profile: return band_sigma_profile(spec.beta, spec.eta, bands);
  }
  return {};
}

HsiCube apply_noise(const HsiCube& clean, const NoiseSpec& spec) {
  const auto sigmas = band_sigmas(spec, clean.bands());
  if (const double off = range_violation(clean); off > 1e-6) {
    spdlog::warn("apply_noise: input exceeds [0,1] by {:.3g}; expected a normalized cube", off);
  }
  HsiCube noisy = clean;
  for (int b = 0; b < clean.bands(); ++b) {
    auto rng = band_stream(spec.seed, b);
    if (spec.kind == NoiseKind::rand_per_band) {
      std::uniform_real_distribution<double>(0.0, spec.sigma)(rng);  // the σ_b draw
    }
    std::normal_distribution<double> normal(0.0, sigmas[static_cast<std::size_t>(b)] / 255.0);
    for (float& v : noisy.band(b)) v = static_cast<float>(v + normal(rng));
  }
  return noisy;
}

}  // namespace adrn
