#include "adrn/training.hpp"
#include "support/test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace adrn;
using adrn::testing::random_tensor;

namespace {

Tensor4<double> filled(Shape4 s, std::initializer_list<double> v) {
  Tensor4<double> t(s);
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

std::vector<double> flat_params(const AdrnModel<float>& m) {
  std::vector<double> out;
  m.for_each_kernel([&](const ConvKernel<float>& k) {
    out.insert(out.end(), k.weights.begin(), k.weights.end());
    out.insert(out.end(), k.bias.begin(), k.bias.end());
  });
  return out;
}

TrainConfig small_config() {
  TrainConfig c = TrainConfig::desk();
  c.width = 8;
  c.path_width = 2;
  c.depth = 2;
  c.spectral_bands = 4;
  c.batch_size = 4;
  c.patch = 8;
  c.stride = 4;
  c.noise_sigmas = {25, 50};
  c.total_steps = 20;
  c.log_every = 5;
  c.lr_decay_every = 10;
  return c;
}

}  // namespace

TEST_CASE("reconstruction loss") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({2, 1, 3, 3}, rng);
  CHECK(loss_rec(x, x) == 0.0);
  Tensor4<double> shifted = x;
  for (double& v : shifted.values()) v += 0.3;
  CHECK(loss_rec(shifted, x) == doctest::Approx(0.09).epsilon(1e-12));

  const auto a = random_tensor<double>({2, 1, 3, 3}, rng);
  double brute = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) brute += std::pow(a(n, 0, r, c) - x(n, 0, r, c), 2);
  CHECK(loss_rec(a, x) == doctest::Approx(brute / 18).epsilon(1e-14));
}

TEST_CASE("regularization loss") {
  CHECK(loss_reg(filled({1, 1, 1, 2}, {0.7, -0.7})) == 0.0);
  CHECK(loss_reg(Tensor4<double>({2, 1, 4, 4}, -0.2)) == doctest::Approx(0.04).epsilon(1e-14));
  std::mt19937_64 rng(2);
  const auto r = random_tensor<double>({3, 1, 5, 5}, rng);
  double mean = 0.0;
  for (int n = 0; n < 3; ++n)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) mean += r(n, 0, y, x);
  mean /= 75.0;
  CHECK(loss_reg(r) == doctest::Approx(mean * mean).epsilon(1e-12));
}

TEST_CASE("total loss") {
  CHECK(loss_total(0.0, 0.0, 10.0) == 0.0);
  CHECK(loss_total(0.01, 0.04, 10.0) == doctest::Approx(0.14).epsilon(1e-15));
  CHECK(loss_total(0.5, 0.04, 0.0) == 0.04);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_tensor<double>({1, 1, 4, 4}, rng), b = random_tensor<double>({1, 1, 4, 4}, rng);
    const auto r = random_tensor<double>({1, 1, 4, 4}, rng);
    CHECK(loss_total(a, b, r, 10.0) >= 0.0);
  }
  const auto x = random_tensor<double>({1, 1, 4, 4}, rng);
  CHECK(loss_total(x, x, filled({1, 1, 1, 2}, {1, -1}), 10.0) == 0.0);
}

TEST_CASE("residual gradient matches finite differences") {
  std::mt19937_64 rng(4);
  const auto y = random_tensor<double>({2, 1, 3, 3}, rng);
  const auto x = random_tensor<double>({2, 1, 3, 3}, rng);
  auto r = random_tensor<double>({2, 1, 3, 3}, rng);
  const auto g = loss_gradient_residual(reconstruct(y, r), x, r, 10.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double s = r.values()[i];
    r.values()[i] = s + 1e-6;
    const double up = loss_total(reconstruct(y, r), x, r, 10.0);
    r.values()[i] = s - 1e-6;
    const double down = loss_total(reconstruct(y, r), x, r, 10.0);
    r.values()[i] = s;
    CHECK(g.values()[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("learning rate schedule") {
  const TrainConfig c;
  CHECK(c.learning_rate(0) == 1e-4);
  CHECK(c.learning_rate(4999) == 1e-4);
  CHECK(c.learning_rate(5000) == doctest::Approx(0.9e-4).epsilon(1e-15));
  CHECK(c.learning_rate(10000) == doctest::Approx(0.81e-4).epsilon(1e-15));
}

TEST_CASE("presets and config overrides") {
  const auto full = TrainConfig::full();
  CHECK(full.spectral_bands == 64);
  CHECK(full.reduction == 10);
  CHECK(full.lambda == 10.0);
  CHECK(full.batch_size == 382);
  CHECK(full.adam.beta1 == 0.9);
  CHECK(full.adam.beta2 == 0.999);
  CHECK(full.adam.epsilon == 1e-8);
  CHECK(full.lr_decay_every == 5000);
  CHECK(full.patch == 20);
  CHECK(full.stride == 5);
  const auto desk = TrainConfig::desk();
  CHECK(desk.model() == ModelConfig{16, 4, 3, 8, 10});
  CHECK(desk.batch_size == 32);
  CHECK(desk.total_steps == 5000);

  const auto cfg = KeyValueConfig::parse("train.preset = desk\ntrain.total_steps = 77\ntrain.noise_sigmas = 25\n");
  const auto c = TrainConfig::from_config(cfg);
  CHECK(c.width == 16);
  CHECK(c.total_steps == 77);
  CHECK(c.noise_sigmas == std::vector<double>{25});
  const auto again = TrainConfig::from_config(KeyValueConfig::parse(c.serialize()));
  CHECK(again.serialize() == c.serialize());

  CHECK_THROWS_AS(TrainConfig::from_config(KeyValueConfig::parse("train.preset = huge\n")), ParameterError);
  auto bad = TrainConfig::desk();
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("dataset size, layout and bit-exact targets") {
  const auto clean = synthetic_cube(30, 26, 5, 8);
  auto cfg = small_config();
  const Region region{{4, 30}, {2, 26}};
  const auto noise = training_noise(cfg);
  REQUIRE(noise.size() == 2);
  CHECK(noise[0].seed != noise[1].seed);
  const auto data = build_dataset(clean, region, noise, cfg);
  const auto origins = extract_patches(region, 8, 4).size();
  CHECK(data.size() == 5 * origins * 2);
  CHECK(data.origin_count() == origins);

  std::set<std::tuple<std::size_t, int, int, int>> seen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto loc = data.locate(i);
    seen.insert({loc.level, loc.band, loc.origin.row, loc.origin.col});
    if (i % 7 != 0) continue;
    const auto s = data.sample<float>(i);
    CHECK(s.band == loc.band);
    CHECK(s.y_spectral.shape() == Shape4{1, 4, 8, 8});
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) {
        REQUIRE(s.x_clean(0, 0, r, c) == clean.at(region.rows.begin + loc.origin.row + r,
                                                  region.cols.begin + loc.origin.col + c, loc.band));
      }
  }
  CHECK(seen.size() == data.size());
}

TEST_CASE("spatial and spectral inputs share one noise realization") {
  const auto clean = synthetic_cube(16, 16, 5, 9);
  auto cfg = small_config();
  cfg.noise_sigmas = {50};
  const auto data = build_dataset(clean, {{0, 16}, {0, 16}}, training_noise(cfg), cfg);
  // band 1's window contains band 0; find both samples at the same origin
  const auto a = data.sample<float>(0);                        // band 0, origin 0
  const auto b = data.sample<float>(1 * data.origin_count());  // band 1, origin 0
  REQUIRE(b.band == 1);
  const auto w = spectral_window_bands(5, 1, 4);
  REQUIRE(w.front() == 0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) CHECK(b.y_spectral(0, 0, r, c) == a.y_spatial(0, 0, r, c));
}

TEST_CASE("a B=5, K=4 cube yields samples; K too large is rejected") {
  const auto clean = synthetic_cube(12, 12, 5, 10);
  auto cfg = small_config();
  CHECK(build_dataset(clean, {{0, 12}, {0, 12}}, training_noise(cfg), cfg).size() > 0);
  cfg.spectral_bands = 5;
  CHECK_THROWS_AS(build_dataset(clean, {{0, 12}, {0, 12}}, training_noise(cfg), cfg), ParameterError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto clean = synthetic_cube(16, 16, 5, 11);
  auto cfg = small_config();
  cfg.lr0 = 0.0;
  const auto data = build_dataset(clean, {{0, 16}, {0, 16}}, training_noise(cfg), cfg);
  AdrnModel<float> model(cfg.model());
  init_params(model, 1);
  const auto before = flat_params(model);
  Trainer<float> trainer(model, data, cfg);
  for (int i = 0; i < 3; ++i) trainer.step();
  CHECK(flat_params(model) == before);
}

TEST_CASE("zero model on zero data does not move") {
  auto cfg = small_config();
  const HsiCube zeros(12, 12, 5, 0.0f);
  std::vector<HsiCube> noisy{zeros};
  const TrainingSet data(zeros, noisy, extract_patches({{0, 12}, {0, 12}}, 8, 4), 4, 8);
  AdrnModel<float> model(cfg.model());
  Trainer<float> trainer(model, data, cfg);
  const auto rec = trainer.step();
  CHECK(rec.total == 0.0);
  for (double v : flat_params(model)) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("batches depend only on seed and step") {
  const auto clean = synthetic_cube(16, 16, 5, 12);
  auto cfg = small_config();
  const auto data = build_dataset(clean, {{0, 16}, {0, 16}}, training_noise(cfg), cfg);
  AdrnModel<float> m1(cfg.model()), m2(cfg.model());
  Trainer<float> t1(m1, data, cfg), t2(m2, data, cfg);
  CHECK(t1.batch_indices(37) == t2.batch_indices(37));
  // one epoch of consecutive batches visits every sample once
  std::vector<int> hits(data.size(), 0);
  const long per_epoch = static_cast<long>(data.size()) / cfg.batch_size;
  for (long s = 0; s < per_epoch; ++s)
    for (auto i : t1.batch_indices(s)) ++hits[i];
  CHECK(std::count(hits.begin(), hits.end(), 2) == 0);
  auto other = cfg;
  other.seed = 1;
  Trainer<float> t3(m2, data, other);
  CHECK(t1.batch_indices(0) != t3.batch_indices(0));
}

TEST_CASE("training lowers the loss, records history and resumes exactly") {
  const auto dir = adrn::testing::scratch_dir("train");
  const auto clean = synthetic_cube(24, 24, 6, 13);
  auto cfg = small_config();
  cfg.lr0 = 1e-3;
  const auto data = build_dataset(clean, {{0, 24}, {0, 24}}, training_noise(cfg), cfg);

  AdrnModel<float> model(cfg.model());
  init_params(model, cfg.seed);
  TrainOptions opts;
  opts.checkpoint = dir / "m.ckpt";
  const auto result = train(model, data, cfg, opts);
  CHECK(result.steps == 20);
  REQUIRE(result.history.size() == 5);  // steps 0, 5, 10, 15 and the last one
  CHECK(result.history.back().step == 19);
  CHECK(result.history.back().rec < result.history.front().rec);
  CHECK(result.history[2].lr == doctest::Approx(cfg.learning_rate(10)));
  CHECK(std::filesystem::exists(dir / "m.ckpt"));

  const auto csv = format_loss_csv(result.history);
  CHECK(csv.rfind("step,lr,loss_total,loss_rec,loss_reg\n", 0) == 0);

  // resume from the checkpoint written at the decay boundary (step 10)
  AdrnModel<float> first(cfg.model());
  init_params(first, cfg.seed);
  auto ten = cfg;
  ten.total_steps = 10;
  TrainOptions o10;
  o10.checkpoint = dir / "ten.ckpt";
  train(first, data, ten, o10);
  auto ck = load_checkpoint<float>(dir / "ten.ckpt");
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.optimizer->step == 10);
  TrainOptions resume;
  resume.resume = ck.optimizer;
  const auto rest = train(ck.model, data, cfg, resume);
  REQUIRE(!rest.history.empty());
  CHECK(rest.history.front().step == 10);
  CHECK(rest.history.front().total == result.history[2].total);
  CHECK(rest.history.back().total == result.history.back().total);
}

TEST_CASE("divergence is reported and leaves a marker checkpoint") {
  const auto dir = adrn::testing::scratch_dir("diverge");
  const auto clean = synthetic_cube(16, 16, 5, 14);
  auto cfg = small_config();
  const auto data = build_dataset(clean, {{0, 16}, {0, 16}}, training_noise(cfg), cfg);
  AdrnModel<float> model(cfg.model());
  init_params(model, 0);
  model.head.bias[0] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions opts;
  opts.checkpoint = dir / "m.ckpt";
  CHECK_THROWS_AS(train(model, data, cfg, opts), DivergenceError);
  CHECK(std::filesystem::exists(dir / "m.ckpt.diverged"));
}
