#include "adrn/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <ostream>

namespace adrn::cli {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

std::array<int, 3> parse_bands(const std::vector<long>& values) {
  if (values.size() != 3) throw ParameterError("render bands: expected exactly three band indices");
  return {static_cast<int>(values[0]), static_cast<int>(values[1]), static_cast<int>(values[2])};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

ExperimentManifest ExperimentManifest::from_config(const KeyValueConfig& cfg, const fs::path& base_dir) {
  cfg.reject_unknown("", {"cube", "normalize", "split.train", "split.test", "output_dir", "render.bands",
                          "denoise.tile", "denoise.overlap"},
                     {"noise.", "train."});
  ExperimentManifest m;
  m.cube = resolve(base_dir, cfg.get("cube"));
  m.normalize = cfg.get_bool_or("normalize", true);
  if (cfg.has("split.train")) m.split.train = Region::parse(cfg.get("split.train"));
  if (cfg.has("split.test")) m.split.test = Region::parse(cfg.get("split.test"));
  if (cfg.has("noise.kind")) m.noise = NoiseSpec::from_config(cfg, "noise.");
  m.train = TrainConfig::from_config(cfg, "train.");
  m.output_dir = resolve(base_dir, cfg.get_or("output_dir", "."));
  if (cfg.has("render.bands")) m.render_bands = parse_bands(cfg.get_ints("render.bands"));
  m.tiling.tile = static_cast<int>(cfg.get_int_or("denoise.tile", m.tiling.tile));
  m.tiling.overlap = static_cast<int>(cfg.get_int_or("denoise.overlap", m.tiling.overlap));
  return m;
}

ExperimentManifest ExperimentManifest::load(const fs::path& path) {
  return from_config(KeyValueConfig::load(path), path.parent_path());
}

void ExperimentManifest::validate(int rows, int cols, int bands) const {
  split.validate(rows, cols);
  for (int b : render_bands) {
    if (b < 0 || b >= bands) {
      throw ParameterError("manifest: render band " + std::to_string(b) + " outside [0, " + std::to_string(bands) + ")");
    }
  }
  if (train.spectral_bands > bands - 1) {
    throw ParameterError("manifest: K=" + std::to_string(train.spectral_bands) + " needs at least K+1 bands, cube has " +
                         std::to_string(bands));
  }
}

SimulationOutputs simulation_outputs(const fs::path& output_dir) {
  return {output_dir / "clean_test.raw", output_dir / "noisy_test.raw", noise_sidecar_for(output_dir / "noisy_test.raw")};
}

fs::path noise_sidecar_for(const fs::path& payload) {
  auto p = payload;
  p.replace_extension(".noise");
  return p;
}

TrainOutputs train_outputs(const fs::path& output_dir) {
  return {output_dir / "model.ckpt", output_dir / "loss.csv"};
}

HsiCube load_manifest_cube(const ExperimentManifest& manifest) {
  HsiCube cube = load_cube(manifest.cube);
  if (manifest.normalize) cube = normalize_per_band(cube);
  manifest.validate(cube.rows(), cube.cols(), cube.bands());
  return cube;
}

void cmd_simulate(const ExperimentManifest& manifest, std::ostream& log) {
  manifest.noise.validate();
  const HsiCube cube = load_manifest_cube(manifest);
  const HsiCube clean = crop(cube, manifest.split.test);
  const HsiCube noisy = apply_noise(clean, manifest.noise);
  ensure_dir(manifest.output_dir);
  const auto out = simulation_outputs(manifest.output_dir);
  save_cube(clean, out.clean);
  save_cube(noisy, out.noisy);
  write_text(out.sidecar, manifest.noise.serialize());
  log << fmt::format("simulate: test region {} ({}x{}x{}), noise {} seed {} -> {}\n", manifest.split.test.str(),
                     clean.rows(), clean.cols(), clean.bands(), manifest.noise.label(), manifest.noise.seed,
                     out.noisy.string());
}

TrainResult cmd_train(const ExperimentManifest& manifest, const fs::path* resume, std::ostream& log) {
  const TrainConfig& cfg = manifest.train;
  const HsiCube cube = load_manifest_cube(manifest);
  const auto noise = training_noise(cfg);
  const TrainingSet data = build_dataset(cube, manifest.split.train, noise, cfg);

  AdrnModel<float> model(cfg.model());
  TrainOptions options;
  const auto out = train_outputs(manifest.output_dir);
  options.checkpoint = out.checkpoint;
  if (resume) {
    const ModelConfig expected = cfg.model();
    Checkpoint<float> ckpt = load_checkpoint<float>(*resume, &expected);
    if (!ckpt.optimizer) throw FormatError(resume->string() + ": checkpoint has no optimizer state to resume from");
    model = std::move(ckpt.model);
    options.resume = std::move(ckpt.optimizer);
    log << fmt::format("train: resuming from {} at step {}\n", resume->string(), options.resume->step);
  } else {
    init_params(model, cfg.seed, cfg.init_std);
  }
  ensure_dir(manifest.output_dir);
  log << fmt::format("train: {} samples ({} levels x {} bands x {} patches), {} parameters, {} steps\n", data.size(),
                     data.level_count(), data.band_count(), data.origin_count(), model.parameter_count(),
                     cfg.total_steps);
  options.on_record = [&](const LossRecord& r) {
    log << fmt::format("step {:>7}  lr {:.3e}  loss {:.6e}  rec {:.6e}  reg {:.3e}\n", r.step, r.lr, r.total, r.rec,
                       r.reg);
    log.flush();
  };
  TrainResult result = train(model, data, cfg, options);
  write_loss_csv(out.loss_csv, result.history);
  write_text(manifest.output_dir / "train.cfg", cfg.serialize());
  log << fmt::format("train: checkpoint {}, loss history {}\n", out.checkpoint.string(), out.loss_csv.string());
  return result;
}

void cmd_denoise(const fs::path& checkpoint, const fs::path& noisy_path, const fs::path& output, Tiling tiling,
                 std::ostream& log) {
  const Checkpoint<float> ckpt = load_checkpoint<float>(checkpoint);
  const HsiCube noisy = load_cube(noisy_path);
  const HsiCube denoised = denoise_cube(ckpt.model, noisy, tiling);
  if (output.has_parent_path()) ensure_dir(output.parent_path());
  save_cube(denoised, output);
  log << fmt::format("denoise: {} bands of {}x{} -> {}\n", noisy.bands(), noisy.rows(), noisy.cols(), output.string());
}

QualityReport cmd_evaluate(const fs::path& clean_path, const std::vector<fs::path>& runs, const fs::path& csv,
                           const fs::path& table, const std::string& noise_label, std::ostream& log) {
  if (runs.empty()) throw ParameterError("evaluate: at least one denoised cube is required");
  const HsiCube clean = load_cube(clean_path);
  std::vector<HsiCube> cubes;
  for (const auto& p : runs) cubes.push_back(load_cube(p));
  const QualityReport report = evaluate(clean, cubes);
  const std::string text = report_table(report, noise_label);
  if (!csv.empty()) write_text(csv, report_csv(report));
  if (!table.empty()) write_text(table, text);
  log << text;
  return report;
}

void cmd_render(const fs::path& cube, std::array<int, 3> bands, const fs::path& png) {
  write_png(png, render_pseudocolor(load_cube(cube), bands));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based residual network for hyperspectral denoising", "adrn"};
  app.require_subcommand(1);

  std::string manifest_path;
  std::string resume;
  long steps_override = -1;

  auto* simulate = app.add_subcommand("simulate", "Add simulated noise to the test region of a cube");
  simulate->add_option("-m,--manifest", manifest_path, "Experiment manifest")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model on the training region");
  train_cmd->add_option("-m,--manifest", manifest_path, "Experiment manifest")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");
  train_cmd->add_option("--steps", steps_override, "Override train.total_steps");

  std::string checkpoint, input, output;
  Tiling tiling;
  auto* denoise = app.add_subcommand("denoise", "Denoise a cube with a trained checkpoint");
  denoise->add_option("-c,--checkpoint", checkpoint, "Model checkpoint")->required();
  denoise->add_option("-i,--input", input, "Noisy cube payload")->required();
  denoise->add_option("-o,--output", output, "Denoised cube payload")->required();
  denoise->add_option("--tile", tiling.tile, "Tile edge in pixels (<= 0: whole band)")->capture_default_str();
  denoise->add_option("--overlap", tiling.overlap, "Tile overlap in pixels")->capture_default_str();

  std::string clean_path, csv_path, table_path, label = "?";
  std::vector<std::string> runs;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "MPSNR/MSSIM of denoised cubes against the clean cube");
  evaluate_cmd->add_option("--clean", clean_path, "Clean cube payload")->required();
  evaluate_cmd->add_option("--denoised", runs, "Denoised cube payload(s), one per run")->required();
  evaluate_cmd->add_option("--csv", csv_path, "Per-band CSV report");
  evaluate_cmd->add_option("--table", table_path, "Text table report");
  evaluate_cmd->add_option("--label", label, "Noise level label for the table");

  std::string cube_path, png_path;
  std::vector<int> bands{kDefaultRenderBands.begin(), kDefaultRenderBands.end()};
  auto* render = app.add_subcommand("render", "Pseudo-color PNG from three bands");
  render->add_option("--cube", cube_path, "Cube payload")->required();
  render->add_option("--bands", bands, "Zero-based R,G,B band indices")->expected(3)->delimiter(',')->capture_default_str();
  render->add_option("-o,--output", png_path, "PNG file")->required();

  int rows = 64, cols = 64, nbands = 16;
  std::uint64_t seed = 1;
  auto* synth = app.add_subcommand("synth", "Write a synthetic smooth cube");
  synth->add_option("--rows", rows)->capture_default_str();
  synth->add_option("--cols", cols)->capture_default_str();
  synth->add_option("--bands", nbands)->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("-o,--output", output, "Cube payload")->required();

  std::vector<const char*> argv{"adrn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kValidationError;
  }

  try {
    if (*simulate) {
      cmd_simulate(ExperimentManifest::load(manifest_path), out);
    } else if (*train_cmd) {
      auto manifest = ExperimentManifest::load(manifest_path);
      if (steps_override >= 0) manifest.train.total_steps = steps_override;
      const fs::path resume_path(resume);
      cmd_train(manifest, resume.empty() ? nullptr : &resume_path, out);
    } else if (*denoise) {
      cmd_denoise(checkpoint, input, output, tiling, out);
    } else if (*evaluate_cmd) {
      std::vector<fs::path> run_paths(runs.begin(), runs.end());
      cmd_evaluate(clean_path, run_paths, csv_path, table_path, label, out);
    } else if (*render) {
      if (bands.size() != 3) throw ParameterError("render: expected three bands");
      cmd_render(cube_path, {bands[0], bands[1], bands[2]}, png_path);
      out << "render: " << png_path << '\n';
    } else if (*synth) {
      save_cube(synthetic_cube(rows, cols, nbands, seed), output);
      out << fmt::format("synth: {}x{}x{} -> {}\n", rows, cols, nbands, output);
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::invalid_argument& e) {
    // ParameterError and ShapeError
    err << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kSuccess;
}

}  // namespace adrn::cli
