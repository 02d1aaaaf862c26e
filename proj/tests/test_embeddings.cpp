#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "raydepth/embeddings.hpp"
#include "raydepth/gradcheck.hpp"

using namespace raydepth;

namespace {

PinholeIntrinsics make_k(double fx, double fy, double cx, double cy, int w, int h) {
  PinholeIntrinsics k{fx, fy, cx, cy, w, h};
  k.validate();
  return k;
}

}  // namespace

TEST_CASE("fourier embedding dimension law") {
  for (int f : {0, 2, 4, 8, 16, 32}) {
    FourierConfig cfg;
    cfg.bands = f;
    REQUIRE(cfg.dim() == 3 * (f + 1));
  }
  FourierConfig paper_scale;
  paper_scale.bands = 16;
  paper_scale.max_res = 64;
  REQUIRE(paper_scale.dim() == 51);

  FourierConfig pixel_mode;
  pixel_mode.bands = 16;
  pixel_mode.mode = GeometricMode::kPixel;
  REQUIRE(pixel_mode.dim() == 34);

  FourierConfig odd;
  odd.bands = 3;
  REQUIRE_THROWS_AS(odd.validate(), std::invalid_argument);
}

TEST_CASE("fourier_encode with no bands returns the raw direction") {
  FourierConfig cfg;
  cfg.bands = 0;
  Vec3 d = Vec3{0.2, -0.3, 1.0}.normalized();
  auto e = fourier_encode(d, cfg);
  REQUIRE(e.size() == 3);
  REQUIRE(e[0] == Catch::Approx(d.x));
  REQUIRE(e[1] == Catch::Approx(d.y));
  REQUIRE(e[2] == Catch::Approx(d.z));
}

TEST_CASE("fourier_encode single band layout") {
  FourierConfig cfg;
  cfg.bands = 2;
  cfg.max_res = 4;
  auto e = fourier_encode({0, 0, 1}, cfg);
  // x block: (0, sin 0, cos 0); y block same; z block: (1, sin pi, cos pi).
  std::vector<double> want{0, 0, 1, 0, 0, 1, 1, 0, -1};
  REQUIRE(e.size() == 9);
  for (size_t i = 0; i < 9; ++i) REQUIRE(e[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("fourier_encode rejects non-unit directions") {
  FourierConfig cfg;
  REQUIRE_THROWS_AS(fourier_encode({0, 0, 1.01}, cfg), std::domain_error);
}

TEST_CASE("fourier features stay within [-1, 1]") {
  FourierConfig cfg;
  RngStream rng(31);
  auto k = make_k(90, 120, 31.5, 23.5, 64, 48);
  for (int i = 0; i < 50; ++i) {
    Pixel p{rng.uniform(-0.5, 63.5), rng.uniform(-0.5, 47.5)};
    auto e = fourier_encode(ray_direction(k, p).direction, cfg);
    REQUIRE(e.size() == 51);
    for (double v : e) {
      REQUIRE(v <= 1.0 + 1e-12);
      REQUIRE(v >= -1.0 - 1e-12);
    }
  }
}

TEST_CASE("geometric_embeddings basics") {
  FourierConfig cfg;
  auto k = make_k(100, 100, 15.5, 11.5, 32, 24);

  auto empty = geometric_embeddings(k, {}, cfg);
  REQUIRE(empty.count() == 0);

  std::vector<Pixel> grid;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) grid.push_back({double(x), double(y)});
  auto tokens = geometric_embeddings(k, grid, cfg);
  REQUIRE(tokens.count() == 32 * 24);
  REQUIRE(tokens.dim == 51);
  // row-major order is preserved
  auto direct = fourier_encode(ray_direction(k, {5, 3}).direction, cfg);
  const double* row = tokens.row(size_t(3) * 32 + 5);
  for (int j = 0; j < 51; ++j) REQUIRE(row[j] == direct[size_t(j)]);
}

TEST_CASE("embeddings mirror-symmetric pixels differ only by sign of odd entries") {
  FourierConfig cfg;
  cfg.bands = 8;
  auto k = make_k(80, 80, 15.5, 15.5, 32, 32);
  Pixel plus{15.5 + 6.25, 15.5 + 3.5};
  Pixel minus{15.5 - 6.25, 15.5 - 3.5};
  auto ep = fourier_encode(ray_direction(k, plus).direction, cfg);
  auto em = fourier_encode(ray_direction(k, minus).direction, cfg);
  int per = cfg.bands + 1;  // per-component block: raw, F/2 sines, F/2 cosines
  for (int comp = 0; comp < 3; ++comp)
    for (int j = 0; j < per; ++j) {
      size_t i = size_t(comp * per + j);
      REQUIRE(std::abs(ep[i]) == Catch::Approx(std::abs(em[i])).margin(1e-12));
      bool odd_entry = j <= cfg.bands / 2 && comp < 2;  // raw + sine entries of x and y
      if (odd_entry && std::abs(ep[i]) > 1e-9)
        REQUIRE(ep[i] == Catch::Approx(-em[i]).margin(1e-12));
      else
        REQUIRE(ep[i] == Catch::Approx(em[i]).margin(1e-12));
    }
}

TEST_CASE("query embeddings are invariant to consistent resolution changes") {
  FourierConfig cfg;
  RngStream rng(17);
  auto k = make_k(110, 95, 31.5, 23.5, 64, 48);
  for (int i = 0; i < 200; ++i) {
    double rw = rng.uniform(0.25, 1.5), rh = rng.uniform(0.25, 1.5);
    auto ks = rescale_intrinsics(k, rw, rh);
    Pixel p{rng.uniform(-0.5, 63.5), rng.uniform(-0.5, 47.5)};
    Pixel mapped{rw * (p.u - 0.5) + 0.5, rh * (p.v - 0.5) + 0.5};
    auto a = geometric_embeddings(k, {p}, cfg);
    auto b = geometric_embeddings(ks, {mapped}, cfg);
    for (int j = 0; j < a.dim; ++j) REQUIRE(std::abs(a.row(0)[j] - b.row(0)[j]) < 1e-9);
  }
}

TEST_CASE("image encoder output geometry") {
  ParameterRegistry<float> reg;
  RngStream rng(5);
  auto enc = make_conv_encoder<float>({8, 16, 32}, rng, reg, "enc");
  Image img(32, 32);
  for (auto& v : img.rgb) v = float(rng.uniform());
  auto fm = image_encoder(image_to_tensor<float>(img), enc);
  REQUIRE(fm.shape() == Shape{8, 8, 56});

  // determinism: same image, same params -> identical features
  auto fm2 = image_encoder(image_to_tensor<float>(img), enc);
  REQUIRE(fm.values() == fm2.values());

  // all-zero image with zero biases -> all-zero features
  Image zero(32, 32);
  auto fmz = image_encoder(image_to_tensor<float>(zero), enc);
  for (float v : fmz.values()) REQUIRE(v == 0.0f);

  REQUIRE_THROWS_AS(image_encoder(image_to_tensor<float>(Image(4, 4)), enc), std::domain_error);

  // odd sizes round up: 34 -> 17 -> 9
  Image odd(34, 34);
  auto fmo = image_encoder(image_to_tensor<float>(odd), enc);
  REQUIRE(fmo.shape() == Shape{9, 9, 56});
}

TEST_CASE("bilinear_sample identities") {
  auto fm = Tensor<float>::from_values({2, 2, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  auto at_center = bilinear_sample(fm, {Pixel{1.0, 0.0}});
  REQUIRE(at_center.values()[0] == 2.0f);
  REQUIRE(at_center.values()[1] == 20.0f);

  auto mid = bilinear_sample(fm, {Pixel{0.5, 0.0}});
  REQUIRE(mid.values()[0] == Catch::Approx(1.5f));

  auto constant = Tensor<float>::constant({3, 3, 1}, 7.0f);
  for (double u : {0.0, 0.31, 1.77, 2.0})
    REQUIRE(bilinear_sample(constant, {Pixel{u, 1.2}}).values()[0] == Catch::Approx(7.0f));

  // linear along a grid axis
  auto rampt = Tensor<float>::from_values({1, 3, 1}, {0, 1, 2});
  REQUIRE(bilinear_sample(rampt, {Pixel{1.25, 0}}).values()[0] == Catch::Approx(1.25f));
}

TEST_CASE("encoder token assembly") {
  ParameterRegistry<float> reg;
  RngStream rng(6);
  auto enc = make_conv_encoder<float>({8, 16, 32}, rng, reg, "enc");
  Image img(64, 48);
  for (auto& v : img.rgb) v = float(rng.uniform());
  auto fm = image_encoder(image_to_tensor<float>(img), enc);  // 12 x 16 x 56

  auto k = make_k(100, 100, 31.5, 23.5, 64, 48);
  auto k4 = rescale_intrinsics(k, 0.25, 0.25);
  FourierConfig cfg;

  std::vector<Pixel> pixels;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) pixels.push_back({double(x), double(y)});
  auto tokens = build_encoder_tokens(fm, k4, pixels, cfg);
  REQUIRE(tokens.features.shape() == Shape{12 * 16, 56 + 51});

  // unjittered integer grid reads the feature map directly
  for (int j = 0; j < 56; ++j)
    REQUIRE(tokens.features.values()[size_t(j)] == fm.values()[size_t(j)]);

  auto none = build_encoder_tokens(fm, k4, {}, cfg);
  REQUIRE(none.features.numel() == 0);
}
