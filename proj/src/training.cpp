#include "adrn/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace adrn {

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.width = 16;
  c.path_width = 4;
  c.depth = 3;
  c.spectral_bands = 8;
  c.batch_size = 32;
  c.total_steps = 5000;
  return c;
}

ModelConfig TrainConfig::model() const {
  return ModelConfig{width, path_width, depth, spectral_bands, reduction};
}

double TrainConfig::learning_rate(long step) const {
  return lr0 * std::pow(lr_decay_rate, static_cast<double>(step / lr_decay_every));
}

void TrainConfig::validate() const {
  model().validate();
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ParameterError(std::string("train config: ") + what);
  };
  require(lambda >= 0.0, "lambda must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr0 >= 0.0, "lr0 must be >= 0");
  require(lr_decay_every >= 1, "lr_decay_every must be >= 1");
  require(lr_decay_rate > 0.0 && lr_decay_rate <= 1.0, "lr_decay_rate must be in (0, 1]");
  require(total_steps >= 0, "total_steps must be >= 0");
  require(adam.beta1 > 0.0 && adam.beta1 < 1.0, "adam beta1 must be in (0, 1)");
  require(adam.beta2 > 0.0 && adam.beta2 < 1.0, "adam beta2 must be in (0, 1)");
  require(adam.epsilon > 0.0, "adam epsilon must be > 0");
  require(patch >= 1 && stride >= 1, "patch and stride must be >= 1");
  require(log_every >= 1, "log_every must be >= 1");
  require(!noise_sigmas.empty(), "noise_sigmas must not be empty");
  for (double s : noise_sigmas) require(s > 0.0, "every training sigma must be > 0");
}

namespace {

std::string real_str(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg, const std::string& prefix) {
  cfg.reject_unknown(prefix, {"preset", "K", "r", "lambda", "batch_size", "lr0", "lr_decay_every", "lr_decay_rate",
                             "total_steps", "adam_beta1", "adam_beta2", "adam_epsilon", "seed", "width", "path_width",
                             "depth", "patch", "stride", "noise_sigmas", "log_every", "init_std", "deterministic"});
  const std::string preset = cfg.get_or(prefix + "preset", "full");
  TrainConfig c;
  if (preset == "desk") {
    c = desk();
  } else if (preset != "full") {
    throw ParameterError("train config: unknown preset '" + preset + "' (expected desk or full)");
  }
  auto int_field = [&](const char* key, auto& field) {
    field = static_cast<std::remove_reference_t<decltype(field)>>(cfg.get_int_or(prefix + key, field));
  };
  int_field("K", c.spectral_bands);
  int_field("r", c.reduction);
  c.lambda = cfg.get_real_or(prefix + "lambda", c.lambda);
  int_field("batch_size", c.batch_size);
  c.lr0 = cfg.get_real_or(prefix + "lr0", c.lr0);
  int_field("lr_decay_every", c.lr_decay_every);
  c.lr_decay_rate = cfg.get_real_or(prefix + "lr_decay_rate", c.lr_decay_rate);
  int_field("total_steps", c.total_steps);
  c.adam.beta1 = cfg.get_real_or(prefix + "adam_beta1", c.adam.beta1);
  c.adam.beta2 = cfg.get_real_or(prefix + "adam_beta2", c.adam.beta2);
  c.adam.epsilon = cfg.get_real_or(prefix + "adam_epsilon", c.adam.epsilon);
  const long seed = cfg.get_int_or(prefix + "seed", 0);
  if (seed < 0) throw ParameterError("train config: seed must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  int_field("width", c.width);
  int_field("path_width", c.path_width);
  int_field("depth", c.depth);
  int_field("patch", c.patch);
  int_field("stride", c.stride);
  if (cfg.has(prefix + "noise_sigmas")) c.noise_sigmas = cfg.get_reals(prefix + "noise_sigmas");
  int_field("log_every", c.log_every);
  c.init_std = cfg.get_real_or(prefix + "init_std", c.init_std);
  c.deterministic = cfg.get_bool_or(prefix + "deterministic", c.deterministic);
  c.validate();
  return c;
}

std::string TrainConfig::serialize(const std::string& prefix) const {
  std::ostringstream os;
  auto line = [&](const char* key, const std::string& v) { os << prefix << key << " = " << v << '\n'; };
  line("K", std::to_string(spectral_bands));
  line("r", std::to_string(reduction));
  line("lambda", real_str(lambda));
  line("batch_size", std::to_string(batch_size));
  line("lr0", real_str(lr0));
  line("lr_decay_every", std::to_string(lr_decay_every));
  line("lr_decay_rate", real_str(lr_decay_rate));
  line("total_steps", std::to_string(total_steps));
  line("adam_beta1", real_str(adam.beta1));
  line("adam_beta2", real_str(adam.beta2));
  line("adam_epsilon", real_str(adam.epsilon));
  line("seed", std::to_string(seed));
  line("width", std::to_string(width));
  line("path_width", std::to_string(path_width));
  line("depth", std::to_string(depth));
  line("patch", std::to_string(patch));
  line("stride", std::to_string(stride));
  std::string sigmas;
  for (std::size_t i = 0; i < noise_sigmas.size(); ++i) sigmas += (i ? "," : "") + real_str(noise_sigmas[i]);
  line("noise_sigmas", sigmas);
  line("log_every", std::to_string(log_every));
  line("init_std", real_str(init_std));
  line("deterministic", deterministic ? "true" : "false");
  return os.str();
}

template <typename T>
double loss_rec(const Tensor4<T>& x_hat, const Tensor4<T>& x) {
  if (x_hat.shape() != x.shape()) throw ShapeError("loss_rec: shape " + x_hat.shape().str() + " vs " + x.shape().str());
  const auto a = x_hat.values();
  const auto b = x.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

template <typename T>
double loss_reg(const Tensor4<T>& residual) {
  double sum = 0.0;
  for (T v : residual.values()) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(residual.size());
  return mean * mean;
}

template <typename T>
Tensor4<T> loss_gradient_residual(const Tensor4<T>& x_hat, const Tensor4<T>& x, const Tensor4<T>& residual,
                                  double lambda) {
  if (x_hat.shape() != x.shape() || residual.shape() != x.shape()) {
    throw ShapeError("loss gradient: mismatched shapes");
  }
  const double count = static_cast<double>(x.size());
  double sum = 0.0;
  for (T v : residual.values()) sum += static_cast<double>(v);
  const double reg_grad = 2.0 * (sum / count) / count;
  Tensor4<T> g(x.shape());
  auto gv = g.values();
  const auto a = x_hat.values();
  const auto b = x.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const double rec_grad = 2.0 * (static_cast<double>(a[i]) - static_cast<double>(b[i])) / count;
    gv[i] = static_cast<T>(-lambda * rec_grad + reg_grad);
  }
  return g;
}

TrainingSet::TrainingSet(HsiCube clean, std::vector<HsiCube> noisy, std::vector<PatchOrigin> origins, int window,
                         int patch)
    : clean_(std::move(clean)), noisy_(std::move(noisy)), origins_(std::move(origins)), window_(window), patch_(patch) {
  if (noisy_.empty()) throw ParameterError("training set: need at least one noise level");
  if (origins_.empty()) throw ParameterError("training set: no patch origins");
  for (const auto& n : noisy_) {
    if (!n.same_dims(clean_)) throw ShapeError("training set: noisy cube dims differ from clean cube");
  }
  for (const auto& o : origins_) {
    if (o.row < 0 || o.col < 0 || o.row + patch_ > clean_.rows() || o.col + patch_ > clean_.cols()) {
      throw ParameterError("training set: patch origin outside the cube");
    }
  }
  for (int b = 0; b < clean_.bands(); ++b) windows_.push_back(spectral_window_bands(clean_.bands(), b, window_));
}

TrainingSet::Location TrainingSet::locate(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("training set index out of range");
  const std::size_t origin = i % origins_.size();
  const std::size_t rest = i / origins_.size();
  return Location{rest / band_count(), static_cast<int>(rest % band_count()), origins_[origin]};
}

template <typename T>
TrainingSample<T> TrainingSet::sample(std::size_t i) const {
  const std::size_t idx[] = {i};
  TrainingSample<T> s;
  gather<T>(idx, s.y_spatial, s.y_spectral, s.x_clean);
  s.band = locate(i).band;
  return s;
}

template <typename T>
void TrainingSet::gather(std::span<const std::size_t> indices, Tensor4<T>& y_spatial, Tensor4<T>& y_spectral,
                         Tensor4<T>& x_clean) const {
  const int n = static_cast<int>(indices.size());
  const int p = patch_;
  if (y_spatial.shape() != Shape4{n, 1, p, p}) y_spatial = Tensor4<T>(Shape4{n, 1, p, p});
  if (y_spectral.shape() != Shape4{n, window_, p, p}) y_spectral = Tensor4<T>(Shape4{n, window_, p, p});
  if (x_clean.shape() != Shape4{n, 1, p, p}) x_clean = Tensor4<T>(Shape4{n, 1, p, p});
  auto copy_patch = [&](const HsiCube& cube, int band, PatchOrigin o, std::span<T> dst) {
    const auto src = cube.band(band);
    for (int r = 0; r < p; ++r) {
      const float* row = src.data() + static_cast<std::size_t>(o.row + r) * cube.cols() + o.col;
      std::copy(row, row + p, dst.begin() + static_cast<std::size_t>(r) * p);
    }
  };
  for (int s = 0; s < n; ++s) {
    const Location loc = locate(indices[static_cast<std::size_t>(s)]);
    const HsiCube& noisy = noisy_[loc.level];
    copy_patch(noisy, loc.band, loc.origin, y_spatial.plane(s, 0));
    copy_patch(clean_, loc.band, loc.origin, x_clean.plane(s, 0));
    const auto& window = windows_[static_cast<std::size_t>(loc.band)];
    for (int k = 0; k < window_; ++k) copy_patch(noisy, window[static_cast<std::size_t>(k)], loc.origin, y_spectral.plane(s, k));
  }
}

TrainingSet build_dataset(const HsiCube& clean, const Region& region, std::span<const NoiseSpec> noise,
                          const TrainConfig& config) {
  if (noise.empty()) throw ParameterError("build_dataset: no noise specs");
  HsiCube crop_clean = crop(clean, region);
  std::vector<HsiCube> noisy;
  noisy.reserve(noise.size());
  for (const auto& spec : noise) noisy.push_back(apply_noise(crop_clean, spec));
  const Region local{{0, crop_clean.rows()}, {0, crop_clean.cols()}};
  auto origins = extract_patches(local, config.patch, config.stride, PatchEdge::flush);
  return TrainingSet(std::move(crop_clean), std::move(noisy), std::move(origins), config.spectral_bands, config.patch);
}

std::vector<NoiseSpec> training_noise(const TrainConfig& config) {
  std::vector<NoiseSpec> specs;
  for (std::size_t i = 0; i < config.noise_sigmas.size(); ++i) {
    specs.push_back(NoiseSpec::constant(config.noise_sigmas[i], config.seed * 1000003ULL + i + 1));
  }
  return specs;
}

template <typename T>
Trainer<T>::Trainer(AdrnModel<T>& model, const TrainingSet& data, TrainConfig config)
    : model_(model), data_(data), config_(std::move(config)) {
  config_.validate();
  if (!(model_.config == config_.model())) throw ParameterError("trainer: model config does not match train config");
  if (data_.window() != config_.spectral_bands) throw ParameterError("trainer: dataset K does not match config K");
  if (data_.size() == 0) throw ParameterError("trainer: empty dataset");
  m_.assign(model_.parameter_count(), 0.0);
  v_.assign(model_.parameter_count(), 0.0);
}

template <typename T>
OptimizerState Trainer<T>::optimizer_state() const {
  return OptimizerState{step_, m_, v_};
}

template <typename T>
void Trainer<T>::restore(const OptimizerState& state) {
  if (state.first_moment.size() != m_.size() || state.second_moment.size() != v_.size()) {
    throw ParameterError("trainer: optimizer state does not match the model");
  }
  step_ = state.step;
  m_ = state.first_moment;
  v_ = state.second_moment;
}

template <typename T>
std::size_t Trainer<T>::sample_at(std::uint64_t position) const {
  const std::uint64_t n = data_.size();
  const std::uint64_t epoch = position / n;
  auto it = permutations_.find(epoch);
  if (it == permutations_.end()) {
    if (permutations_.size() > 2) permutations_.erase(permutations_.begin());
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(perm.begin(), perm.end(), rng);
    it = permutations_.emplace(epoch, std::move(perm)).first;
  }
  return it->second[position % n];
}

template <typename T>
std::vector<std::size_t> Trainer<T>::batch_indices(long step) const {
  std::vector<std::size_t> idx(static_cast<std::size_t>(config_.batch_size));
  const std::uint64_t base = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(config_.batch_size);
  for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = sample_at(base + j);
  return idx;
}

template <typename T>
LossRecord Trainer<T>::evaluate(std::span<const std::size_t> indices, AdrnModel<T>* grads) const {
  Tensor4<T> y_spatial, y_spectral, x_clean;
  data_.gather<T>(indices, y_spatial, y_spectral, x_clean);
  AdrnTrace<T> trace;
  const Tensor4<T> residual = adrn_forward(model_, y_spatial, y_spectral, Attention::learned, grads ? &trace : nullptr);
  const Tensor4<T> x_hat = reconstruct(y_spatial, residual);
  LossRecord rec;
  rec.rec = loss_rec(x_hat, x_clean);
  rec.reg = loss_reg(residual);
  rec.total = loss_total(rec.rec, rec.reg, config_.lambda);
  if (grads && std::isfinite(rec.total)) {
    adrn_backward(model_, trace, loss_gradient_residual(x_hat, x_clean, residual, config_.lambda), *grads);
  }
  return rec;
}

template <typename T>
void Trainer<T>::apply_adam(const AdrnModel<T>& grads, double lr) {
  const auto& adam = config_.adam;
  const double t = static_cast<double>(step_ + 1);
  const double correct1 = 1.0 - std::pow(adam.beta1, t);
  const double correct2 = 1.0 - std::pow(adam.beta2, t);
  std::vector<const ConvKernel<T>*> gk;
  grads.for_each_kernel([&](const ConvKernel<T>& k) { gk.push_back(&k); });
  std::size_t slot = 0;
  std::size_t kernel = 0;
  auto update = [&](std::vector<T>& params, const std::vector<T>& g) {
    for (std::size_t i = 0; i < params.size(); ++i, ++slot) {
      const double gi = static_cast<double>(g[i]);
      m_[slot] = adam.beta1 * m_[slot] + (1.0 - adam.beta1) * gi;
      v_[slot] = adam.beta2 * v_[slot] + (1.0 - adam.beta2) * gi * gi;
      const double mhat = m_[slot] / correct1;
      const double vhat = v_[slot] / correct2;
      params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * mhat / (std::sqrt(vhat) + adam.epsilon));
    }
  };
  model_.for_each_kernel([&](ConvKernel<T>& k) {
    const ConvKernel<T>& g = *gk[kernel++];
    update(k.weights, g.weights);
    update(k.bias, g.bias);
  });
}

template <typename T>
LossRecord Trainer<T>::step() {
  return step(batch_indices(step_));
}

template <typename T>
LossRecord Trainer<T>::step(std::span<const std::size_t> indices) {
  AdrnModel<T> grads(model_.config);
  LossRecord rec = evaluate(indices, &grads);
  rec.step = step_;
  rec.lr = config_.learning_rate(step_);
  if (!std::isfinite(rec.total)) {
    throw DivergenceError("loss became non-finite at step " + std::to_string(step_));
  }
  apply_adam(grads, rec.lr);
  ++step_;
  return rec;
}

template <typename T>
TrainResult train(AdrnModel<T>& model, const TrainingSet& data, const TrainConfig& config,
                  const TrainOptions& options) {
  Trainer<T> trainer(model, data, config);
  if (options.resume) trainer.restore(*options.resume);
  TrainResult result;
  auto save = [&](const std::filesystem::path& path) {
    const OptimizerState state = trainer.optimizer_state();
    save_checkpoint(path, model, &state);
  };
  while (trainer.steps_done() < config.total_steps) {
    LossRecord rec;
    try {
      rec = trainer.step();
    } catch (const DivergenceError& e) {
      if (options.checkpoint) {
        auto diag = *options.checkpoint;
        diag += ".diverged";
        save(diag);
        spdlog::error("{}; diagnostic checkpoint written to {}", e.what(), diag.string());
      }
      throw;
    }
    const bool last = trainer.steps_done() == config.total_steps;
    if (rec.step % config.log_every == 0 || last) {
      result.history.push_back(rec);
      if (options.on_record) options.on_record(rec);
    }
    if (options.checkpoint && (trainer.steps_done() % config.lr_decay_every == 0 || last)) save(*options.checkpoint);
  }
  result.steps = trainer.steps_done();
  return result;
}

std::string format_loss_csv(std::span<const LossRecord> history) {
  std::ostringstream os;
  os << "step,lr,loss_total,loss_rec,loss_reg\n";
  for (const auto& r : history) {
    os << r.step << ',' << real_str(r.lr) << ',' << real_str(r.total) << ',' << real_str(r.rec) << ','
       << real_str(r.reg) << '\n';
  }
  return os.str();
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_loss_csv(history);
}

#define ADRN_INSTANTIATE_TRAINING(T)                                                                            \
  template double loss_rec(const Tensor4<T>&, const Tensor4<T>&);                                               \
  template double loss_reg(const Tensor4<T>&);                                                                  \
  template Tensor4<T> loss_gradient_residual(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, double);  \
  template TrainingSample<T> TrainingSet::sample<T>(std::size_t) const;                                         \
  template void TrainingSet::gather<T>(std::span<const std::size_t>, Tensor4<T>&, Tensor4<T>&, Tensor4<T>&)     \
      const;                                                                                                    \
  template class Trainer<T>;                                                                                    \
  template TrainResult train(AdrnModel<T>&, const TrainingSet&, const TrainConfig&, const TrainOptions&);

ADRN_INSTANTIATE_TRAINING(float)
ADRN_INSTANTIATE_TRAINING(double)

}  // namespace adrn
