#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "raydepth/io.hpp"
#include "raydepth/params.hpp"
#include "raydepth/rng.hpp"

using namespace raydepth;

TEST_CASE("checkpoint round trip is bit exact") {
  ParameterRegistry<float> reg;
  RngStream rng(3);
  std::vector<float> v1(12), v2(5);
  for (auto& v : v1) v = float(rng.normal());
  for (auto& v : v2) v = float(rng.uniform(-3, 3));
  reg.add("net.w", Tensor<float>::parameter({3, 4}, v1));
  reg.add("net.b", Tensor<float>::parameter({5}, v2));

  std::stringstream ss;
  write_checkpoint(ss, registry_to_entries(reg));
  std::string bytes = ss.str();

  auto entries = read_checkpoint(ss);
  REQUIRE(entries.size() == 2);

  ParameterRegistry<float> reg2;
  reg2.add("net.w", Tensor<float>::parameter({3, 4}, std::vector<float>(12, 0.f)));
  reg2.add("net.b", Tensor<float>::parameter({5}, std::vector<float>(5, 0.f)));
  load_into_registry(entries, reg2);
  REQUIRE(reg2.get("net.w").values() == v1);
  REQUIRE(reg2.get("net.b").values() == v2);

  // write(read(x)) reproduces x byte for byte
  std::stringstream ss2;
  write_checkpoint(ss2, registry_to_entries(reg2));
  REQUIRE(ss2.str() == bytes);
}

TEST_CASE("checkpoint errors") {
  std::stringstream bad("NOTACKPT");
  REQUIRE_THROWS_AS(read_checkpoint(bad), std::runtime_error);

  ParameterRegistry<float> reg;
  reg.add("w", Tensor<float>::parameter({2}, {1.f, 2.f}));
  std::stringstream ss;
  write_checkpoint(ss, registry_to_entries(reg));

  ParameterRegistry<float> mismatched;
  mismatched.add("w", Tensor<float>::parameter({3}, {0.f, 0.f, 0.f}));
  REQUIRE_THROWS_WITH(load_into_registry(read_checkpoint(ss), mismatched),
                      Catch::Matchers::ContainsSubstring("shape mismatch"));

  ParameterRegistry<double> wrong_type;
  wrong_type.add("w", Tensor<double>::parameter({2}, {0.0, 0.0}));
  std::stringstream ss2;
  write_checkpoint(ss2, registry_to_entries(reg));
  REQUIRE_THROWS_WITH(load_into_registry(read_checkpoint(ss2), wrong_type),
                      Catch::Matchers::ContainsSubstring("dtype mismatch"));
}

TEST_CASE("registry rejects duplicates and keeps sorted order") {
  ParameterRegistry<float> reg;
  reg.add("b", Tensor<float>::parameter({1}, {0.f}));
  reg.add("a", Tensor<float>::parameter({1}, {0.f}));
  REQUIRE_THROWS_AS(reg.add("a", Tensor<float>::parameter({1}, {0.f})), std::invalid_argument);
  std::vector<std::string> names;
  for (auto& [name, t] : reg) names.push_back(name);
  REQUIRE(names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("pfm round trip preserves f32 depths and invalid pixels") {
  DepthMap d(5, 4);
  RngStream rng(9);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      if ((x + y) % 3 == 0)
        d.set_invalid(x, y);
      else
        d.set(x, y, double(float(rng.uniform(0.1, 50.0))));  // f32-representable
    }
  std::stringstream ss;
  write_pfm(ss, d);
  std::string bytes = ss.str();
  DepthMap back = read_pfm(ss);
  REQUIRE(back.width == 5);
  REQUIRE(back.height == 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      REQUIRE(back.valid_at(x, y) == d.valid_at(x, y));
      if (d.valid_at(x, y)) REQUIRE(back.at(x, y) == d.at(x, y));
    }

  std::stringstream ss2;
  write_pfm(ss2, back);
  REQUIRE(ss2.str() == bytes);
}

TEST_CASE("pfm parse errors carry a byte offset") {
  std::stringstream truncated("Pf\n4 4\n-1.0\nxx");
  try {
    read_pfm(truncated);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::stringstream wrong_magic("P6\n2 2\n255\n");
  REQUIRE_THROWS(read_pfm(wrong_magic));
}

TEST_CASE("ppm round trip is byte stable after one quantization") {
  Image img(6, 3);
  RngStream rng(4);
  for (auto& v : img.rgb) v = float(rng.uniform());
  std::stringstream ss;
  write_ppm(ss, img);
  Image q = read_ppm(ss);
  std::stringstream ss2;
  write_ppm(ss2, q);
  REQUIRE(ss2.str() == ss.str());
  Image q2 = read_ppm(ss2);
  REQUIRE(q2.rgb == q.rgb);
}

TEST_CASE("ply output follows the ascii grammar") {
  PointCloud c;
  c.points = {{1.5, -2.25, 3.0}, {0, 0, 1}};
  c.colors = {{255, 128, 0}, {1, 2, 3}};
  std::stringstream ss;
  write_ply(ss, c);
  std::string text = ss.str();
  REQUIRE(text.find("ply\nformat ascii 1.0\n") == 0);
  REQUIRE(text.find("element vertex 2\n") != std::string::npos);
  REQUIRE(text.find("property float x\n") != std::string::npos);
  REQUIRE(text.find("property uchar red\n") != std::string::npos);
  REQUIRE(text.find("end_header\n") != std::string::npos);
  REQUIRE(text.find("1.5 -2.25 3 255 128 0") != std::string::npos);

  PointCloud bad;
  bad.points.resize(1);
  REQUIRE_THROWS_AS(write_ply(ss, bad), std::invalid_argument);
}

TEST_CASE("manifest round trip") {
  std::vector<ManifestEntry> entries{
      {"000000", "train-A", "train", "samples/000000.ppm", "samples/000000.pfm", "samples/000000.txt"},
      {"000001", "test-B", "val", "samples/000001.ppm", "samples/000001.pfm", "samples/000001.txt"},
  };
  std::stringstream ss;
  write_manifest(ss, entries);
  auto back = read_manifest(ss);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].family == "train-A");
  REQUIRE(back[1].split == "val");
  REQUIRE(back[1].camera_path == "samples/000001.txt");

  std::stringstream badline("a\tb\n");
  REQUIRE_THROWS(read_manifest(badline));
}
