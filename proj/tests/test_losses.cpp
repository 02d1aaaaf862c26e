#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "raydepth/gradcheck.hpp"
#include "raydepth/losses.hpp"
#include "raydepth/rng.hpp"

using namespace raydepth;
using D = Tensor<double>;

namespace {

PinholeIntrinsics grid_k(double f, double cx, double cy, int w, int h) {
  return PinholeIntrinsics{f, f, cx, cy, w, h};
}

DepthMap constant_depth(int w, int h, double d) {
  DepthMap m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, d);
  return m;
}

D depths_tensor(const DepthMap& m) {
  std::vector<double> v(m.values.begin(), m.values.end());
  return D::parameter({m.width * m.height}, std::move(v));
}

}  // namespace

TEST_CASE("smooth_l1 values") {
  std::vector<std::uint8_t> one{1};
  auto zero = smooth_l1(D::parameter({1}, {4.0}), {4.0}, one, 1.0);
  REQUIRE(zero.value() == 0.0);

  // both branches agree at the knee: 0.5 * beta
  double beta = 0.7;
  auto knee = smooth_l1(D::parameter({1}, {4.0 + beta}), {4.0}, one, beta);
  REQUIRE(knee.value() == Catch::Approx(0.5 * beta).margin(1e-15));

  auto linear = smooth_l1(D::parameter({1}, {6.0}), {4.0}, one, 1.0);
  REQUIRE(linear.value() == Catch::Approx(1.5).margin(1e-15));

  // masked mean
  std::vector<std::uint8_t> mask{1, 0, 1};
  auto masked = smooth_l1(D::parameter({3}, {1.0, 100.0, 3.0}), {1.0, 0.0, 1.0}, mask, 1.0);
  REQUIRE(masked.value() == Catch::Approx(0.75).margin(1e-15));  // (0 + 1.5)/2

  std::vector<std::uint8_t> none{0, 0};
  REQUIRE_THROWS_AS(smooth_l1(D::parameter({2}, {1.0, 2.0}), {1.0, 2.0}, none, 1.0),
                    std::domain_error);
}

TEST_CASE("smooth_l1 is C1 at the knee") {
  double beta = 1.0;
  std::vector<std::uint8_t> one{1};
  double delta = 1e-10;
  // value continuity
  auto below = smooth_l1(D::parameter({1}, {beta - delta}), {0.0}, one, beta);
  auto above = smooth_l1(D::parameter({1}, {beta + delta}), {0.0}, one, beta);
  REQUIRE(std::abs(above.value() - below.value()) < 1e-9);
  // derivative continuity via the backward pass
  auto slope_at = [&](double pred) {
    auto t = D::parameter({1}, {pred});
    auto loss = smooth_l1(t, {0.0}, one, beta);
    loss.backward();
    return t.grad()[0];
  };
  REQUIRE(std::abs(slope_at(beta - delta) - slope_at(beta + delta)) < 1e-9);
}

TEST_CASE("kl_loss analytic cases") {
  auto standard = kl_loss(D::parameter({2, 3}, std::vector<double>(6, 0.0)),
                          D::parameter({2, 3}, std::vector<double>(6, 0.0)));
  REQUIRE(standard.value() == 0.0);

  auto unit_mean = kl_loss(D::parameter({1}, {1.0}), D::parameter({1}, {0.0}));
  REQUIRE(unit_mean.value() == Catch::Approx(0.5).margin(1e-15));

  double s = std::log(4.0);
  auto wide = kl_loss(D::parameter({1}, {0.0}), D::parameter({1}, {s}));
  REQUIRE(wide.value() == Catch::Approx(-0.5 * (1.0 + s - 4.0)).margin(1e-12));
  REQUIRE(wide.value() == Catch::Approx(0.8068528194400547).margin(1e-12));
}

TEST_CASE("kl_loss is positive away from the standard normal") {
  RngStream rng(21);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> mu(8), s(8);
    for (auto& v : mu) v = rng.uniform(-1.5, 1.5);
    for (auto& v : s) v = rng.uniform(-1.5, 1.5);
    double perturbation = 0;
    for (double v : mu) perturbation += std::abs(v);
    for (double v : s) perturbation += std::abs(v);
    auto loss = kl_loss(D::parameter({8}, mu), D::parameter({8}, s));
    if (perturbation > 0.1) REQUIRE(loss.value() > 0.0);
    REQUIRE(loss.value() >= 0.0);
  }
}

TEST_CASE("kl_loss grad check") {
  RngStream rng(22);
  for (int seed = 0; seed < 3; ++seed) {
    std::vector<double> mu(6), s(6);
    for (auto& v : mu) v = rng.uniform(-1.5, 1.5);
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    double err = grad_check<double>(
        [](const std::vector<D>& in) { return kl_loss(in[0], in[1]); },
        {D::parameter({6}, mu), D::parameter({6}, s)});
    REQUIRE(err < 1e-5);
  }
}

TEST_CASE("normal_loss vanishes on identical maps") {
  auto k = grid_k(40, 3.5, 2.5, 8, 6);
  RngStream rng(23);
  DepthMap gt(8, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) gt.set(x, y, 5.0 + 0.3 * x - 0.2 * y + rng.uniform(0, 0.1));
  auto res = normal_loss(depths_tensor(gt), gt, k);
  REQUIRE(res.has_normals);
  REQUIRE(res.pixel_count == 7 * 5);
  REQUIRE(std::abs(res.loss.value()) < 1e-12);
}

TEST_CASE("normal_loss is zero for constant maps at different offsets") {
  auto k = grid_k(30, 2.0, 2.0, 6, 5);
  auto gt = constant_depth(6, 5, 4.0);
  auto pred = constant_depth(6, 5, 9.5);  // constant offset keeps normals identical
  auto res = normal_loss(depths_tensor(pred), gt, k);
  REQUIRE(res.has_normals);
  REQUIRE(std::abs(res.loss.value()) < 1e-12);
}

TEST_CASE("normal_loss stays within [0, 2] and handles missing normals") {
  auto k = grid_k(25, 3.0, 3.0, 7, 7);
  RngStream rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    DepthMap gt(7, 7), pred(7, 7);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) {
        gt.set(x, y, rng.uniform(1.0, 20.0));
        pred.set(x, y, rng.uniform(1.0, 20.0));
      }
    auto res = normal_loss(depths_tensor(pred), gt, k);
    REQUIRE(res.loss.value() >= 0.0);
    REQUIRE(res.loss.value() <= 2.0 + 1e-12);
  }

  DepthMap sparse(7, 7);  // nothing valid -> no normals, zero contribution
  sparse.set(3, 3, 2.0);
  auto empty = normal_loss(depths_tensor(constant_depth(7, 7, 3.0)), sparse, k);
  REQUIRE_FALSE(empty.has_normals);
  REQUIRE(empty.loss.value() == 0.0);
}

TEST_CASE("antiparallel normals give the maximum penalty of the cosine form") {
  // 1 - cos with cos = -1 contributes 2 per pixel; halved mean = 1.
  auto n_pred = D::parameter({2, 3}, {0, 0, 1, 1, 0, 0});
  auto n_gt = D::from_values({2, 3}, {0, 0, -1, -1, 0, 0});
  auto dot = sum_last(mul(n_pred, n_gt));
  auto norm = raydepth::sqrt(sum_last(mul(n_pred, n_pred)));
  auto penalty = scalar_add(scalar_mul(div(dot, norm), -1.0), 1.0);
  auto loss = scalar_mul(sum_all(penalty), 0.5 / 2.0);
  REQUIRE(loss.value() == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("normal_loss grad check") {
  auto k = grid_k(20, 2.0, 1.5, 5, 4);
  RngStream rng(25);
  for (int seed = 0; seed < 3; ++seed) {
    DepthMap gt(5, 4);
    std::vector<double> pred(20);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) {
        gt.set(x, y, rng.uniform(2.0, 10.0));
        pred[size_t(y) * 5 + x] = rng.uniform(2.0, 10.0);
      }
    double err = grad_check<double>(
        [&](const std::vector<D>& in) { return normal_loss(in[0], gt, k).loss; },
        {D::parameter({20}, pred)});
    REQUIRE(err < 1e-5);
  }
}

TEST_CASE("total_loss combines weighted terms") {
  LossWeights w;
  auto combo = total_loss(D::scalar(1.0), D::scalar(1.0), D::scalar(1.0), w);
  REQUIRE(combo.value() == Catch::Approx(1.3).margin(1e-15));

  LossWeights off;
  off.alpha_normal = 0;
  off.alpha_kl = 0;
  auto only_depth = total_loss(D::scalar(2.5), D::scalar(9.0), D::scalar(7.0), off);
  REQUIRE(only_depth.value() == 2.5);

  auto zeros = total_loss(D::scalar(0.0), D::scalar(0.0), D::scalar(0.0), w);
  REQUIRE(zeros.value() == 0.0);

  LossWeights bad;
  bad.beta = 0;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}
