#include "adrn/hsi.hpp"

#include "adrn/config.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace adrn {

std::string to_string(Interleave interleave) {
  switch (interleave) {
    case Interleave::bsq: return "bsq";
    case Interleave::bil: return "bil";
    case Interleave::bip: return "bip";
  }
  return "bsq";
}

Interleave parse_interleave(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "bsq") return Interleave::bsq;
  if (lower == "bil") return Interleave::bil;
  if (lower == "bip") return Interleave::bip;
  throw FormatError("unknown interleave '" + text + "' (expected bsq, bil or bip)");
}

std::string Region::str() const {
  std::ostringstream os;
  os << rows.begin << ':' << rows.end << ',' << cols.begin << ':' << cols.end;
  return os.str();
}

Region Region::parse(const std::string& text) {
  const auto parts = split_list(text, ',');
  if (parts.size() != 2) throw ParameterError("region '" + text + "': expected 'r0:r1,c0:c1'");
  auto range = [&](const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ParameterError("region '" + text + "': expected 'a:b'");
    try {
      return Range{std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    } catch (const std::exception&) {
      throw ParameterError("region '" + text + "': bad integer");
    }
  };
  return Region{range(parts[0]), range(parts[1])};
}

SplitSpec SplitSpec::dc_mall() { return SplitSpec{Region{{200, 1280}, {0, 303}}, Region{{0, 200}, {0, 200}}}; }

void SplitSpec::validate(int rows, int cols) const {
  auto inside = [&](const Region& r, const char* name) {
    if (r.empty()) throw ParameterError(std::string(name) + " region " + r.str() + " is empty");
    if (r.rows.begin < 0 || r.cols.begin < 0 || r.rows.end > rows || r.cols.end > cols) {
      throw ParameterError(std::string(name) + " region " + r.str() + " exceeds cube bounds " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
  };
  inside(train, "train");
  inside(test, "test");
  if (train.overlaps(test)) {
    throw ParameterError("train region " + train.str() + " overlaps test region " + test.str());
  }
}

HsiCube::HsiCube(int rows, int cols, int bands, float fill) : rows_(rows), cols_(cols), bands_(bands) {
  if (rows < 1 || cols < 1 || bands < 1) throw ParameterError("HsiCube: dimensions must be >= 1");
  values_.assign(static_cast<std::size_t>(rows) * cols * bands, fill);
}

HsiCube normalize_per_band(const HsiCube& cube, std::vector<int>* constant_bands) {
  HsiCube out = cube;
  for (int b = 0; b < cube.bands(); ++b) {
    auto band = out.band(b);
    const auto [lo_it, hi_it] = std::minmax_element(band.begin(), band.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
      throw ParameterError("normalize_per_band: band " + std::to_string(b) + " has non-finite values");
    }
    if (hi == lo) {
      spdlog::warn("band {} is constant ({}); mapped to zeros", b, lo);
      std::fill(band.begin(), band.end(), 0.0f);
      if (constant_bands) constant_bands->push_back(b);
      continue;
    }
    const double scale = 1.0 / (hi - lo);
    for (float& v : band) v = static_cast<float>(std::clamp((v - lo) * scale, 0.0, 1.0));
  }
  return out;
}

double range_violation(const HsiCube& cube) {
  double worst = 0.0;
  for (float v : cube.values()) {
    worst = std::max({worst, -static_cast<double>(v), static_cast<double>(v) - 1.0});
  }
  return worst;
}

std::vector<int> spectral_window_bands(int bands, int band, int window) {
  if (band < 0 || band >= bands) {
    throw ParameterError("spectral window: band " + std::to_string(band) + " outside [0, " +
                         std::to_string(bands) + ")");
  }
  if (window < 1 || window > bands - 1) {
    throw ParameterError("spectral window: K=" + std::to_string(window) + " needs 1 <= K <= B-1 = " +
                         std::to_string(bands - 1));
  }
  int below = window / 2;
  int above = window - below;
  if (band - below < 0) {
    above += below - band;
    below = band;
  } else if (band + above > bands - 1) {
    below += band + above - (bands - 1);
    above = bands - 1 - band;
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(window));
  for (int b = band - below; b <= band + above; ++b) {
    if (b != band) out.push_back(b);
  }
  return out;
}

Tensor4<float> spectral_window(const HsiCube& cube, int band, int window) {
  const auto idx = spectral_window_bands(cube.bands(), band, window);
  Tensor4<float> out(Shape4{1, window, cube.rows(), cube.cols()});
  for (int k = 0; k < window; ++k) {
    const auto src = cube.band(idx[static_cast<std::size_t>(k)]);
    std::copy(src.begin(), src.end(), out.plane(0, k).begin());
  }
  return out;
}

std::vector<int> patch_positions(int extent, int patch, int stride, PatchEdge edge) {
  if (extent < 1) throw ParameterError("patch grid: empty extent");
  if (patch < 1 || stride < 1) throw ParameterError("patch grid: patch and stride must be >= 1");
  if (patch > extent) {
    throw ParameterError("patch grid: patch " + std::to_string(patch) + " exceeds extent " + std::to_string(extent));
  }
  std::vector<int> pos;
  for (int p = 0; p + patch <= extent; p += stride) pos.push_back(p);
  if (edge == PatchEdge::flush && pos.back() + patch < extent) pos.push_back(extent - patch);
  return pos;
}

std::vector<PatchOrigin> extract_patches(const Region& region, int patch, int stride, PatchEdge edge) {
  if (region.empty()) throw ParameterError("extract_patches: empty region " + region.str());
  const auto rows = patch_positions(region.rows.extent(), patch, stride, edge);
  const auto cols = patch_positions(region.cols.extent(), patch, stride, edge);
  std::vector<PatchOrigin> out;
  out.reserve(rows.size() * cols.size());
  for (int r : rows) {
    for (int c : cols) out.push_back({region.rows.begin + r, region.cols.begin + c});
  }
  return out;
}

HsiCube crop(const HsiCube& cube, const Region& region) {
  if (region.empty() || region.rows.begin < 0 || region.cols.begin < 0 || region.rows.end > cube.rows() ||
      region.cols.end > cube.cols()) {
    throw ParameterError("crop: region " + region.str() + " outside cube");
  }
  HsiCube out(region.rows.extent(), region.cols.extent(), cube.bands());
  out.band_names = cube.band_names;
  for (int b = 0; b < cube.bands(); ++b) {
    for (int r = 0; r < out.rows(); ++r) {
      for (int c = 0; c < out.cols(); ++c) out.at(r, c, b) = cube.at(region.rows.begin + r, region.cols.begin + c, b);
    }
  }
  return out;
}

std::filesystem::path header_path_for(const std::filesystem::path& payload) {
  auto p = payload;
  p.replace_extension(".hdr");
  if (p == payload) p += ".hdr";
  return p;
}

namespace {

// Payload element order for each interleave.
template <typename Fn>
void for_each_in_file_order(int rows, int cols, int bands, Interleave interleave, Fn&& fn) {
  switch (interleave) {
    case Interleave::bsq:
      for (int b = 0; b < bands; ++b)
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) fn(r, c, b);
      break;
    case Interleave::bil:
      for (int r = 0; r < rows; ++r)
        for (int b = 0; b < bands; ++b)
          for (int c = 0; c < cols; ++c) fn(r, c, b);
      break;
    case Interleave::bip:
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          for (int b = 0; b < bands; ++b) fn(r, c, b);
      break;
  }
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_cube(const HsiCube& cube, const std::filesystem::path& payload, Interleave interleave) {
  std::vector<std::uint32_t> words;
  words.reserve(cube.values().size());
  for_each_in_file_order(cube.rows(), cube.cols(), cube.bands(), interleave, [&](int r, int c, int b) {
    words.push_back(to_little(std::bit_cast<std::uint32_t>(cube.at(r, c, b))));
  });
  {
    std::ofstream out(payload, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + payload.string());
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
    if (!out) throw std::runtime_error("short write to " + payload.string());
  }
  KeyValueConfig header;
  header.set("rows", std::to_string(cube.rows()));
  header.set("cols", std::to_string(cube.cols()));
  header.set("bands", std::to_string(cube.bands()));
  header.set("dtype", "float32");
  header.set("interleave", to_string(interleave));
  header.set("byte_order", "little");
  if (!cube.band_names.empty()) {
    std::string names;
    for (std::size_t i = 0; i < cube.band_names.size(); ++i) names += (i ? "," : "") + cube.band_names[i];
    header.set("band_names", names);
  }
  std::ofstream hdr(header_path_for(payload), std::ios::trunc);
  if (!hdr) throw std::runtime_error("cannot write header for " + payload.string());
  hdr << header.dump();
}

HsiCube load_cube(const std::filesystem::path& payload, const std::filesystem::path& header) {
  if (!std::filesystem::is_regular_file(payload)) throw FormatError("cube payload not found: " + payload.string());
  if (!std::filesystem::is_regular_file(header)) throw FormatError("cube header not found: " + header.string());
  KeyValueConfig h;
  try {
    h = KeyValueConfig::load(header);
  } catch (const ParameterError& e) {
    throw FormatError(e.what());
  }
  auto dim = [&](const char* key) {
    long v = 0;
    try {
      v = h.get_int(key);
    } catch (const ParameterError& e) {
      throw FormatError(header.string() + ": " + e.what());
    }
    if (v < 1 || v > std::numeric_limits<int>::max()) throw FormatError(header.string() + ": bad " + key);
    return static_cast<int>(v);
  };
  const int rows = dim("rows");
  const int cols = dim("cols");
  const int bands = dim("bands");
  if (h.get_or("dtype", "float32") != "float32") {
    throw FormatError(header.string() + ": unsupported dtype '" + h.get("dtype") + "'");
  }
  if (h.get_or("byte_order", "little") != "little") {
    throw FormatError(header.string() + ": unsupported byte_order '" + h.get("byte_order") + "'");
  }
  const Interleave interleave = parse_interleave(h.get_or("interleave", "bsq"));

  std::ifstream in(payload, std::ios::binary);
  if (!in) throw FormatError("cannot open cube payload " + payload.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  const std::size_t expected = static_cast<std::size_t>(rows) * cols * bands;
  if (bytes != expected * sizeof(float)) {
    throw FormatError(payload.string() + ": header declares " + std::to_string(rows) + "x" + std::to_string(cols) +
                      "x" + std::to_string(bands) + " (" + std::to_string(expected) + " floats) but payload has " +
                      std::to_string(bytes) + " bytes");
  }
  std::vector<std::uint32_t> words(expected);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError("short read from " + payload.string());

  HsiCube cube(rows, cols, bands);
  std::size_t i = 0;
  for_each_in_file_order(rows, cols, bands, interleave,
                         [&](int r, int c, int b) { cube.at(r, c, b) = std::bit_cast<float>(to_little(words[i++])); });
  if (h.has("band_names")) cube.band_names = split_list(h.get("band_names"));
  return cube;
}

HsiCube load_cube(const std::filesystem::path& payload) { return load_cube(payload, header_path_for(payload)); }

HsiCube synthetic_cube(int rows, int cols, int bands, std::uint64_t seed, int blobs) {
  struct Blob {
    double row, col, width, base, drift, phase;
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Blob> shapes;
  const double scale = std::min(rows, cols);
  for (int i = 0; i < blobs; ++i) {
    shapes.push_back({unit(rng) * rows, unit(rng) * cols, (0.05 + 0.2 * unit(rng)) * scale, 0.3 + unit(rng),
                      0.5 * unit(rng), 6.283185307179586 * unit(rng)});
  }
  HsiCube cube(rows, cols, bands);
  for (int b = 0; b < bands; ++b) {
    const double t = bands > 1 ? static_cast<double>(b) / (bands - 1) : 0.0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        double v = 0.0;
        for (const auto& s : shapes) {
          const double d2 = (r - s.row) * (r - s.row) + (c - s.col) * (c - s.col);
          const double amp = s.base + s.drift * std::sin(3.0 * t + s.phase);
          v += amp * std::exp(-d2 / (2.0 * s.width * s.width));
        }
        cube.at(r, c, b) = static_cast<float>(v);
      }
    }
  }
  return normalize_per_band(cube);
}

}  // namespace adrn
