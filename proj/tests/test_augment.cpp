#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "raydepth/augment.hpp"
#include "raydepth/synthdata.hpp"

using namespace raydepth;

namespace {

RenderedSample toy_sample(int w = 64, int h = 48, double f = 100.0) {
  SceneParams params;
  RngStream rng(19);
  auto scene = generate_scene(rng, params);
  PinholeIntrinsics k{f, f, (w - 1) / 2.0, (h - 1) / 2.0, w, h};
  return render(scene, k);
}

}  // namespace

TEST_CASE("resolution_jitter with unit ratios is the identity") {
  auto s = toy_sample(64, 32);
  AugmentConfig cfg;
  cfg.resize_min = cfg.resize_max = 1.0;
  RngStream rng(1);
  auto out = resolution_jitter(s, cfg, rng);
  REQUIRE(out.image.rgb == s.image.rgb);
  REQUIRE(out.intrinsics.fx == s.intrinsics.fx);
  REQUIRE(out.intrinsics.width == s.intrinsics.width);
}

TEST_CASE("resolution_jitter resizes image and intrinsics together") {
  auto s = toy_sample(640, 384);
  AugmentConfig cfg;
  cfg.resize_min = cfg.resize_max = 0.5;
  RngStream rng(2);
  auto out = resolution_jitter(s, cfg, rng);
  REQUIRE(out.image.width == 320);
  REQUIRE(out.image.height == 192);
  REQUIRE(out.intrinsics.width == 320);
  REQUIRE(out.intrinsics.fx == Catch::Approx(0.5 * s.intrinsics.fx));
  REQUIRE(out.intrinsics.cx == Catch::Approx(0.5 * (s.intrinsics.cx - 0.5) + 0.5));
  // ground truth stays at the original resolution
  REQUIRE(out.depth.width == 640);
  REQUIRE(out.depth.values == s.depth.values);

  RngStream r1(7), r2(7);
  AugmentConfig wide;
  auto a = resolution_jitter(s, wide, r1);
  auto b = resolution_jitter(s, wide, r2);
  REQUIRE(a.image.rgb == b.image.rgb);
  REQUIRE(a.intrinsics.fx == b.intrinsics.fx);
}

TEST_CASE("resolution_jitter preserves 3D geometry of the ground truth") {
  auto s = toy_sample(64, 48);
  AugmentConfig cfg;
  RngStream rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto out = resolution_jitter(s, cfg, rng);
    double rw = out.intrinsics.fx / s.intrinsics.fx;
    double rh = out.intrinsics.fy / s.intrinsics.fy;
    for (int y = 0; y < 48; y += 7)
      for (int x = 0; x < 64; x += 9) {
        if (!s.depth.valid_at(x, y)) continue;
        double d = s.depth.at(x, y);
        Point3 orig = unproject(s.intrinsics, {double(x), double(y)}, d);
        Point3 mapped = unproject(out.intrinsics, {rw * (x - 0.5) + 0.5, rh * (y - 0.5) + 0.5}, d);
        REQUIRE((orig - mapped).norm() < 1e-6);
      }
  }
}

TEST_CASE("ray_jitter stays within pixel boundaries") {
  std::vector<Pixel> grid;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) grid.push_back({double(x), double(y)});

  RngStream zero_rng(4);
  auto same = ray_jitter(grid, zero_rng, 0.0);
  for (size_t i = 0; i < grid.size(); ++i) {
    REQUIRE(same[i].u == grid[i].u);
    REQUIRE(same[i].v == grid[i].v);
  }

  RngStream rng(5);
  double mean_disp = 0;
  int draws = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    auto jit = ray_jitter(grid, rng);
    for (size_t i = 0; i < grid.size(); ++i) {
      REQUIRE(std::abs(jit[i].u - grid[i].u) <= 0.5);
      REQUIRE(std::abs(jit[i].v - grid[i].v) <= 0.5);
      mean_disp += (jit[i].u - grid[i].u) + (jit[i].v - grid[i].v);
      draws += 2;
    }
  }
  REQUIRE(std::abs(mean_disp / draws) < 0.01);
}

TEST_CASE("embedding dropout keeps an exact proportion") {
  REQUIRE(dropout_keep_count(100, 0.5) == 50);
  REQUIRE(dropout_keep_count(100, 0.0) == 100);
  REQUIRE(dropout_keep_count(3, 0.99) == 1);  // never drops everything

  FourierConfig fcfg;
  fcfg.bands = 2;
  PinholeIntrinsics k{50, 50, 7.5, 5.5, 16, 12};
  std::vector<Pixel> grid;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) grid.push_back({double(x), double(y)});
  auto tokens = geometric_embeddings(k, grid, fcfg);

  RngStream rng(6);
  auto unchanged = embedding_dropout(tokens, rng, 0.0);
  REQUIRE(unchanged.count() == tokens.count());

  for (int rep = 0; rep < 20; ++rep) {
    auto kept = embedding_dropout(tokens, rng, 0.5);
    REQUIRE(kept.count() >= tokens.count() / 2);
    REQUIRE(kept.count() <= tokens.count());
    // retained tokens form a subsequence with intact rows
    size_t cursor = 0;
    for (size_t i = 0; i < kept.count(); ++i) {
      while (cursor < tokens.count() &&
             (tokens.coords[cursor].u != kept.coords[i].u || tokens.coords[cursor].v != kept.coords[i].v))
        ++cursor;
      REQUIRE(cursor < tokens.count());
      for (int j = 0; j < tokens.dim; ++j) REQUIRE(kept.row(i)[j] == tokens.row(cursor)[j]);
      ++cursor;
    }
  }
}

TEST_CASE("horizontal flip is an exact involution") {
  auto s = toy_sample(32, 24);
  auto once = flip_sample(s);
  auto twice = flip_sample(once);
  REQUIRE(twice.image.rgb == s.image.rgb);
  REQUIRE(twice.depth.values == s.depth.values);
  REQUIRE(twice.depth.valid == s.depth.valid);
  REQUIRE(twice.intrinsics.cx == s.intrinsics.cx);

  PinholeIntrinsics k{100, 100, 50, 40, 128, 96};
  RenderedSample wide;
  wide.image = Image(128, 96);
  wide.depth = DepthMap(128, 96);
  wide.intrinsics = k;
  auto flipped = flip_sample(wide);
  REQUIRE(flipped.intrinsics.cx == 77.0);  // (128-1) - 50

  RngStream rng(8);
  auto noflip = horizontal_flip(s, rng, 0.0);
  REQUIRE(noflip.image.rgb == s.image.rgb);
}

TEST_CASE("color jitter identities and range") {
  auto s = toy_sample(24, 16);
  ColorJitterMagnitudes zero{0, 0, 0, 0};
  RngStream rng(9);
  auto same = color_jitter(s.image, rng, zero);
  REQUIRE(same.rgb == s.image.rgb);

  ColorJitterFactors neutral;  // all factors exactly 1, hue 0
  auto same2 = apply_color_jitter(s.image, neutral);
  REQUIRE(same2.rgb == s.image.rgb);

  ColorJitterMagnitudes strong{0.5, 0.5, 0.5, 0.1};
  for (int rep = 0; rep < 10; ++rep) {
    auto out = color_jitter(s.image, rng, strong);
    for (float v : out.rgb) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }

  RngStream r1(10), r2(10);
  REQUIRE(color_jitter(s.image, r1, strong).rgb == color_jitter(s.image, r2, strong).rgb);
}

TEST_CASE("perturb_intrinsics noise statistics") {
  PinholeIntrinsics k{200, 180, 32, 24, 64, 48};
  RngStream rng(11);
  auto same = perturb_intrinsics(k, 0.0, rng);
  REQUIRE(same.fx == k.fx);
  REQUIRE(same.cy == k.cy);

  double acc = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto p = perturb_intrinsics(k, 0.1, rng);
    REQUIRE(p.fx > 0);
    REQUIRE(p.fy > 0);
    acc += p.fx;
  }
  REQUIRE(std::abs(acc / n - k.fx) / k.fx < 0.005);

  // extreme noise still yields a valid camera
  for (int i = 0; i < 1000; ++i) {
    auto p = perturb_intrinsics(k, 2.0, rng);
    REQUIRE(p.fx > 0);
    REQUIRE(p.fy > 0);
  }
}
