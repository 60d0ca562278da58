#pragma once

#include "adrn/config.hpp"
#include "adrn/hsi.hpp"
#include "adrn/model.hpp"
#include "adrn/noise.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace adrn {

/// Training stopped because the loss became NaN or infinite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int spectral_bands = 64;
  int reduction = 10;
  double lambda = 10.0;
  int batch_size = 382;
  double lr0 = 1e-4;
  long lr_decay_every = 5000;
  double lr_decay_rate = 0.9;
  long total_steps = 300000;
  AdamSettings adam;
  std::uint64_t seed = 0;

  int width = 64;
  int path_width = 16;
  int depth = 9;
  int patch = 20;
  int stride = 5;
  std::vector<double> noise_sigmas{5, 25, 50, 75, 100};
  long log_every = 100;
  double init_std = 0.0;  // <= 0: fan-in scaled
  bool deterministic = true;

  /// Full-size network and schedule.
  static TrainConfig full();
  /// C=16, D=3, K=8, batch 32, 5000 steps.
  static TrainConfig desk();

  [[nodiscard]] ModelConfig model() const;
  /// lr0 · decay_rate^floor(step / decay_every)
  [[nodiscard]] double learning_rate(long step) const;
  void validate() const;

  /// Overrides fields from `<prefix>key` entries; `preset` (desk|full) picks the base.
  static TrainConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "train.");
  [[nodiscard]] std::string serialize(const std::string& prefix = "train.") const;
};

// Losses. All reductions are carried out in double.

template <typename T>
double loss_rec(const Tensor4<T>& x_hat, const Tensor4<T>& x);

template <typename T>
double loss_reg(const Tensor4<T>& residual);

inline double loss_total(double rec, double reg, double lambda) { return lambda * rec + reg; }

template <typename T>
double loss_total(const Tensor4<T>& x_hat, const Tensor4<T>& x, const Tensor4<T>& residual, double lambda) {
  return loss_total(loss_rec(x_hat, x), loss_reg(residual), lambda);
}

/// dL_total/dR for X̂ = Y - R.
template <typename T>
Tensor4<T> loss_gradient_residual(const Tensor4<T>& x_hat, const Tensor4<T>& x, const Tensor4<T>& residual,
                                  double lambda);

template <typename T>
struct TrainingSample {
  Tensor4<T> y_spatial;   // (1, 1, p, p)
  Tensor4<T> y_spectral;  // (1, K, p, p)
  Tensor4<T> x_clean;     // (1, 1, p, p)
  int band = 0;
};

/// Lazily materialized (noise level, band, origin) samples over one region.
/// Noisy spatial and spectral inputs come from the same noisy realization.
class TrainingSet {
 public:
  TrainingSet(HsiCube clean, std::vector<HsiCube> noisy, std::vector<PatchOrigin> origins, int window, int patch);

  [[nodiscard]] std::size_t size() const { return noisy_.size() * band_count() * origins_.size(); }
  [[nodiscard]] std::size_t band_count() const { return static_cast<std::size_t>(clean_.bands()); }
  [[nodiscard]] std::size_t origin_count() const { return origins_.size(); }
  [[nodiscard]] std::size_t level_count() const { return noisy_.size(); }
  [[nodiscard]] int window() const { return window_; }
  [[nodiscard]] int patch() const { return patch_; }

  struct Location {
    std::size_t level = 0;
    int band = 0;
    PatchOrigin origin;
  };
  /// i = (level · bands + band) · origins + origin
  [[nodiscard]] Location locate(std::size_t i) const;

  template <typename T>
  [[nodiscard]] TrainingSample<T> sample(std::size_t i) const;

  /// Writes samples `indices` into (N,1,p,p), (N,K,p,p), (N,1,p,p) batches.
  template <typename T>
  void gather(std::span<const std::size_t> indices, Tensor4<T>& y_spatial, Tensor4<T>& y_spectral,
              Tensor4<T>& x_clean) const;

 private:
  HsiCube clean_;
  std::vector<HsiCube> noisy_;
  std::vector<PatchOrigin> origins_;  // relative to the stored cubes
  std::vector<std::vector<int>> windows_;
  int window_;
  int patch_;
};

/// Crops `region`, applies every noise spec to the crop and indexes all
/// patch origins (patch/stride from the config, flush edge policy).
TrainingSet build_dataset(const HsiCube& clean, const Region& region, std::span<const NoiseSpec> noise,
                          const TrainConfig& config);

/// One constant-σ spec per config.noise_sigmas entry, seeds derived from config.seed.
std::vector<NoiseSpec> training_noise(const TrainConfig& config);

struct LossRecord {
  long step = 0;
  double lr = 0.0;
  double total = 0.0;
  double rec = 0.0;
  double reg = 0.0;
};

/// Adam over all kernels of one model; samples are drawn from per-epoch
/// seeded permutations so the stream only depends on (seed, step).
template <typename T>
class Trainer {
 public:
  Trainer(AdrnModel<T>& model, const TrainingSet& data, TrainConfig config);

  /// Forward/backward on the next batch and one Adam update; the returned
  /// losses are those of the batch before the update.
  LossRecord step();
  /// Same, on an explicit batch instead of the sampled one.
  LossRecord step(std::span<const std::size_t> indices);

  [[nodiscard]] long steps_done() const { return step_; }
  [[nodiscard]] OptimizerState optimizer_state() const;
  void restore(const OptimizerState& state);

  [[nodiscard]] std::vector<std::size_t> batch_indices(long step) const;

  /// Loss terms and parameter gradients for an explicit batch (no update).
  LossRecord evaluate(std::span<const std::size_t> indices, AdrnModel<T>* grads) const;

 private:
  std::size_t sample_at(std::uint64_t position) const;
  void apply_adam(const AdrnModel<T>& grads, double lr);

  AdrnModel<T>& model_;
  const TrainingSet& data_;
  TrainConfig config_;
  long step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
  mutable std::map<std::uint64_t, std::vector<std::size_t>> permutations_;
};

struct TrainOptions {
  /// When set, checkpoints (with optimizer state) are written at every
  /// learning-rate decay boundary and at the end.
  std::optional<std::filesystem::path> checkpoint;
  std::optional<OptimizerState> resume;
  std::function<void(const LossRecord&)> on_record;
};

struct TrainResult {
  std::vector<LossRecord> history;
  long steps = 0;
};

/// Runs until config.total_steps. Records losses every log_every steps and
/// on the last step. Throws DivergenceError (after writing
/// `<checkpoint>.diverged` when a checkpoint path is set) on a NaN loss.
template <typename T>
TrainResult train(AdrnModel<T>& model, const TrainingSet& data, const TrainConfig& config,
                  const TrainOptions& options = {});

/// CSV with header `step,lr,loss_total,loss_rec,loss_reg`.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);
std::string format_loss_csv(std::span<const LossRecord> history);

}  // namespace adrn
