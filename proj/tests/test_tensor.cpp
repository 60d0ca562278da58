#include "adrn/tensor.hpp"
#include "support/test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace adrn;
using adrn::testing::random_tensor;

namespace {

Tensor4<double> from_values(Shape4 s, std::initializer_list<double> v) {
  Tensor4<double> t(s);
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

// loss = sum(w ⊙ conv2(relu(conv1(x)))) with a fixed random w.
double two_layer_loss(const Tensor4<double>& x, const ConvKernel<double>& k1, const ConvKernel<double>& k2,
                      const Tensor4<double>& w) {
  const auto y = conv2d_same(relu(conv2d_same(x, k1)), k2);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * w.values()[i];
  return s;
}

}  // namespace

TEST_CASE("shape basics") {
  Tensor4<float> t({2, 3, 4, 5}, 1.5f);
  CHECK(t.size() == 120);
  CHECK(t.shape().plane() == 20);
  CHECK(t(1, 2, 3, 4) == 1.5f);
  CHECK(t.plane(1, 2).size() == 20);
  CHECK_THROWS_AS(Tensor4<float>({0, 1, 1, 1}), ShapeError);
  CHECK_THROWS_AS(ConvKernel<float>(1, 1, 2), ShapeError);
}

TEST_CASE("conv of zero input gives the bias") {
  Tensor4<double> x({1, 1, 3, 3});
  ConvKernel<double> k(1, 1, 3);
  std::fill(k.weights.begin(), k.weights.end(), 0.7);
  k.bias[0] = -2.25;
  const auto y = conv2d_same(x, k);
  for (double v : y.values()) CHECK(v == -2.25);
}

TEST_CASE("1x1 identity kernel") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({2, 1, 5, 6}, rng);
  ConvKernel<double> k(1, 1, 1);
  k.weights[0] = 1.0;
  const auto y = conv2d_same(x, k);
  CHECK(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST_CASE("3x3 ones kernel on 1..9") {
  const auto x = from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvKernel<double> k(1, 1, 3);
  std::fill(k.weights.begin(), k.weights.end(), 1.0);
  const auto y = conv2d_same(x, k);
  CHECK(y(0, 0, 1, 1) == 45.0);
  CHECK(y(0, 0, 0, 0) == 12.0);
  CHECK(y(0, 0, 2, 2) == 28.0);
  CHECK(y(0, 0, 0, 1) == 21.0);
}

TEST_CASE("conv is cross-correlation") {
  // A kernel with a single 1 at the top-left picks the up-left neighbour.
  const auto x = from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvKernel<double> k(1, 1, 3);
  k.weight(0, 0, 0, 0) = 1.0;
  const auto y = conv2d_same(x, k);
  CHECK(y(0, 0, 1, 1) == 1.0);
  CHECK(y(0, 0, 2, 2) == 5.0);
  CHECK(y(0, 0, 0, 0) == 0.0);
}

TEST_CASE("conv keeps H and W for every odd k, including k larger than the image") {
  std::mt19937_64 rng(2);
  for (int k : {1, 3, 5, 7, 9}) {
    for (auto [h, w] : {std::pair{1, 1}, {2, 7}, {8, 3}, {11, 11}}) {
      const auto x = random_tensor<float>({2, 3, h, w}, rng);
      ConvKernel<float> kern(4, 3, k);
      std::fill(kern.weights.begin(), kern.weights.end(), 0.1f);
      const auto y = conv2d_same(x, kern);
      CHECK(y.shape() == Shape4{2, 4, h, w});
    }
  }
}

TEST_CASE("conv matches direct summation") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({2, 3, 6, 5}, rng);
  ConvKernel<double> k(2, 3, 5);
  for (double& v : k.weights) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  k.bias = {0.3, -0.1};
  const auto y = conv2d_same(x, k);
  double worst = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 2; ++o)
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 5; ++c) {
          double s = k.bias[o];
          for (int i = 0; i < 3; ++i)
            for (int ky = 0; ky < 5; ++ky)
              for (int kx = 0; kx < 5; ++kx) {
                const int yy = r + ky - 2, xx = c + kx - 2;
                if (yy >= 0 && yy < 6 && xx >= 0 && xx < 5) s += k.weight(o, i, ky, kx) * x(n, i, yy, xx);
              }
          worst = std::max(worst, std::abs(s - y(n, o, r, c)));
        }
  CHECK(worst < 1e-12);
}

TEST_CASE("relu") {
  const auto y = relu(from_values({1, 1, 1, 3}, {-1, 0, 2}));
  CHECK(y(0, 0, 0, 0) == 0.0);
  CHECK(y(0, 0, 0, 1) == 0.0);
  CHECK(y(0, 0, 0, 2) == 2.0);
  std::mt19937_64 rng(4);
  const auto neg = random_tensor<double>({1, 2, 3, 3}, rng, -5.0, -0.1);
  const auto zeroed = relu(neg);
  for (double v : zeroed.values()) CHECK(v == 0.0);
  const auto pos = random_tensor<double>({1, 2, 3, 3}, rng, 0.0, 5.0);
  const auto same = relu(pos);
  CHECK(std::equal(pos.values().begin(), pos.values().end(), same.values().begin()));
}

TEST_CASE("sigmoid") {
  const auto y = sigmoid(from_values({1, 1, 1, 4}, {0, 30, 800, -800}));
  CHECK(y(0, 0, 0, 0) == 0.5);
  CHECK(std::abs(y(0, 0, 0, 1) - 1.0) < 1e-9);
  CHECK(y(0, 0, 0, 2) == 1.0);
  CHECK(y(0, 0, 0, 3) >= 0.0);
  CHECK(std::isfinite(y(0, 0, 0, 3)));
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 1, 10, 10}, rng, -20, 20);
  Tensor4<double> neg = x;
  for (double& v : neg.values()) v = -v;
  const auto a = sigmoid(x), b = sigmoid(neg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a.values()[i] + b.values()[i] - 1.0) < 1e-15);
    CHECK(a.values()[i] > 0.0);
    CHECK(a.values()[i] < 1.0);
  }
}

TEST_CASE("global average pool") {
  const auto c = global_avg_pool(Tensor4<double>({2, 3, 4, 4}, 0.25));
  CHECK(c.shape() == Shape4{2, 3, 1, 1});
  for (double v : c.values()) CHECK(v == 0.25);
  CHECK(global_avg_pool(from_values({1, 1, 2, 2}, {1, 2, 3, 4}))(0, 0, 0, 0) == 2.5);

  std::mt19937_64 rng(6);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  const auto before = global_avg_pool(x);
  auto plane = x.plane(0, 1);
  std::shuffle(plane.begin(), plane.end(), rng);
  auto plane0 = x.plane(0, 0);
  std::reverse(plane0.begin(), plane0.end());
  const auto after = global_avg_pool(x);
  CHECK(std::abs(before(0, 0, 0, 0) - after(0, 0, 0, 0)) < 1e-15);
  CHECK(std::abs(before(0, 1, 0, 0) - after(0, 1, 0, 0)) < 1e-15);
}

TEST_CASE("gradient of sum and of sum(relu)") {
  Tensor4<double> ones({1, 1, 2, 3}, 1.0);
  const auto g = global_avg_pool_backward(Tensor4<double>({1, 1, 1, 1}, 6.0), ones.shape());
  for (double v : g.values()) CHECK(v == 1.0);  // d(sum)/dx via mean*6

  const auto x = from_values({1, 1, 1, 3}, {-1, 2, 0});
  const auto gr = relu_backward(x, Tensor4<double>({1, 1, 1, 3}, 1.0));
  CHECK(gr(0, 0, 0, 0) == 0.0);
  CHECK(gr(0, 0, 0, 1) == 1.0);
  CHECK(gr(0, 0, 0, 2) == 0.0);
}

TEST_CASE("two-layer conv net finite differences") {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<double>({2, 2, 4, 4}, rng);
  ConvKernel<double> k1(3, 2, 3), k2(2, 3, 3);
  for (auto* k : {&k1, &k2}) {
    for (double& v : k->weights) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    for (double& v : k->bias) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  }
  const auto w = random_tensor<double>({2, 2, 4, 4}, rng);

  const auto a1 = conv2d_same(x, k1);
  const auto h1 = relu(a1);
  ConvKernel<double> g1(3, 2, 3), g2(2, 3, 3);
  const auto dh = conv2d_same_backward(h1, k2, w, g2);
  const auto dx = conv2d_same_backward(x, k1, relu_backward(a1, dh), g1);

  const double eps = 1e-3;
  double worst = 0.0;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); };
  for (auto [k, g] : {std::pair{&k1, &g1}, {&k2, &g2}}) {
    for (std::size_t i = 0; i < k->weights.size(); ++i) {
      const double s = k->weights[i];
      k->weights[i] = s + eps;
      const double up = two_layer_loss(x, k1, k2, w);
      k->weights[i] = s - eps;
      const double down = two_layer_loss(x, k1, k2, w);
      k->weights[i] = s;
      worst = std::max(worst, rel(g->weights[i], (up - down) / (2 * eps)));
    }
    for (std::size_t i = 0; i < k->bias.size(); ++i) {
      const double s = k->bias[i];
      k->bias[i] = s + eps;
      const double up = two_layer_loss(x, k1, k2, w);
      k->bias[i] = s - eps;
      const double down = two_layer_loss(x, k1, k2, w);
      k->bias[i] = s;
      worst = std::max(worst, rel(g->bias[i], (up - down) / (2 * eps)));
    }
  }
  Tensor4<double> xp = x;
  for (std::size_t i = 0; i < xp.size(); ++i) {
    const double s = xp.values()[i];
    xp.values()[i] = s + eps;
    const double up = two_layer_loss(xp, k1, k2, w);
    xp.values()[i] = s - eps;
    const double down = two_layer_loss(xp, k1, k2, w);
    xp.values()[i] = s;
    worst = std::max(worst, rel(dx.values()[i], (up - down) / (2 * eps)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("sigmoid and pool backward") {
  std::mt19937_64 rng(8);
  const auto x = random_tensor<double>({1, 2, 3, 3}, rng, -3, 3);
  const auto y = sigmoid(x);
  const auto g = sigmoid_backward(y, Tensor4<double>(x.shape(), 1.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = 1e-6, v = x.values()[i];
    const double n = (1 / (1 + std::exp(-(v + e))) - 1 / (1 + std::exp(-(v - e)))) / (2 * e);
    CHECK(std::abs(g.values()[i] - n) < 1e-9);
  }
  const auto gp = global_avg_pool_backward(from_values({1, 2, 1, 1}, {9, 18}), Shape4{1, 2, 3, 3});
  CHECK(gp(0, 0, 2, 2) == 1.0);
  CHECK(gp(0, 1, 0, 1) == 2.0);
}

TEST_CASE("channel concat and slice") {
  std::mt19937_64 rng(9);
  const auto a = random_tensor<float>({2, 2, 3, 3}, rng), b = random_tensor<float>({2, 3, 3, 3}, rng);
  const auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape4{2, 5, 3, 3});
  CHECK(c(1, 3, 2, 1) == b(1, 1, 2, 1));
  const auto back = slice_channels(c, 2, 3);
  CHECK(std::equal(back.values().begin(), back.values().end(), b.values().begin()));
  CHECK_THROWS_AS(concat_channels(a, Tensor4<float>({2, 1, 4, 3})), ShapeError);
}

TEST_CASE("finite check") {
  Tensor4<float> t({1, 1, 2, 2}, 0.0f);
  CHECK_NOTHROW(require_finite(t, "t"));
  t(0, 0, 1, 1) = std::nanf("");
  CHECK_THROWS_AS(require_finite(t, "t"), std::domain_error);
}
