#pragma once

#include "adrn/denoise.hpp"
#include "adrn/hsi.hpp"
#include "adrn/metrics.hpp"
#include "adrn/noise.hpp"
#include "adrn/render.hpp"
#include "adrn/training.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace adrn::cli {

enum ExitCode : int {
  kSuccess = 0,
  kValidationError = 2,
  kRuntimeError = 3,
};

/// Everything one experiment needs, read from a `key = value` file. Relative
/// paths are resolved against the manifest's directory.
struct ExperimentManifest {
  std::filesystem::path cube;
  bool normalize = true;
  SplitSpec split = SplitSpec::dc_mall();
  NoiseSpec noise;
  TrainConfig train;
  std::filesystem::path output_dir = ".";
  std::array<int, 3> render_bands = kDefaultRenderBands;
  Tiling tiling;

  static ExperimentManifest load(const std::filesystem::path& path);
  static ExperimentManifest from_config(const KeyValueConfig& cfg, const std::filesystem::path& base_dir);

  /// Checks split bounds and render bands against the cube dimensions.
  void validate(int rows, int cols, int bands) const;
};

/// Paths written by `simulate` inside the output directory.
struct SimulationOutputs {
  std::filesystem::path clean;
  std::filesystem::path noisy;
  std::filesystem::path sidecar;
};
SimulationOutputs simulation_outputs(const std::filesystem::path& output_dir);

/// Noise-spec sidecar that accompanies a noisy cube payload (`x.raw` -> `x.noise`).
std::filesystem::path noise_sidecar_for(const std::filesystem::path& payload);

/// Loads the manifest cube, normalized when the manifest asks for it.
HsiCube load_manifest_cube(const ExperimentManifest& manifest);

void cmd_simulate(const ExperimentManifest& manifest, std::ostream& log);

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
};
TrainOutputs train_outputs(const std::filesystem::path& output_dir);

/// `resume`: checkpoint with optimizer state to continue from.
TrainResult cmd_train(const ExperimentManifest& manifest, const std::filesystem::path* resume, std::ostream& log);

void cmd_denoise(const std::filesystem::path& checkpoint, const std::filesystem::path& noisy,
                 const std::filesystem::path& output, Tiling tiling, std::ostream& log);

QualityReport cmd_evaluate(const std::filesystem::path& clean, const std::vector<std::filesystem::path>& runs,
                           const std::filesystem::path& csv, const std::filesystem::path& table,
                           const std::string& noise_label, std::ostream& log);

void cmd_render(const std::filesystem::path& cube, std::array<int, 3> bands, const std::filesystem::path& png);

/// Entry point; maps errors to exit codes (2 validation, 3 runtime/divergence).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adrn::cli
