#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "raydepth/geometry.hpp"
#include "raydepth/image.hpp"
#include "raydepth/io.hpp"
#include "raydepth/rng.hpp"
#include "raydepth/sample.hpp"

namespace raydepth {

enum class PrimitiveKind { kPlane, kSphere, kBox };

// Camera-frame primitive. Planes satisfy normal . X + offset = 0; boxes are
// oriented by `orientation` about `center`.
struct ScenePrimitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center{0, 0, 0};
  Mat3 orientation;
  double radius = 1.0;
  Vec3 half_extents{0.5, 0.5, 0.5};
  Vec3 plane_normal{0, -1, 0};
  double plane_offset = 0.0;
  Vec3 albedo{0.7, 0.7, 0.7};

  // Unsigned distance from a point to the primitive surface.
  double surface_distance(const Vec3& p) const {
    switch (kind) {
      case PrimitiveKind::kPlane:
        return std::abs(plane_normal.dot(p) + plane_offset);
      case PrimitiveKind::kSphere:
        return std::abs((p - center).norm() - radius);
      case PrimitiveKind::kBox: {
        Vec3 local = orientation.transposed() * (p - center);
        Vec3 q{std::abs(local.x) - half_extents.x, std::abs(local.y) - half_extents.y,
               std::abs(local.z) - half_extents.z};
        Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
        double inside = std::min(std::max({q.x, q.y, q.z}), 0.0);
        return std::abs(outside.norm() + inside);
      }
    }
    return 0.0;
  }
};

struct SceneSpec {
  std::vector<ScenePrimitive> primitives;
  Vec3 light_direction{0, -1, 0};  // unit vector toward the light
  double ambient = 0.35;
  double far = 60.0;  // hits beyond this range are masked invalid

  void validate() const {
    if (primitives.empty()) throw std::invalid_argument("SceneSpec: needs at least one primitive");
    int planes = 0;
    for (const auto& p : primitives) planes += p.kind == PrimitiveKind::kPlane;
    if (planes != 1) throw std::invalid_argument("SceneSpec: expected exactly one ground plane");
    if (std::abs(light_direction.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("SceneSpec: light direction must be unit length");
  }
};

struct SceneParams {
  int min_objects = 2, max_objects = 6;
  double depth_min = 2.0, depth_max = 30.0;
  double size_min = 0.3, size_max = 1.5;
  double ground_y = 1.5;   // camera sits this far above the ground plane
  double lateral_spread = 0.4;  // object |x| <= spread * z
  double far = 60.0;
  double near_clearance = 0.5;
};

struct CameraFamily {
  std::string label = "default";
  double focal_min = 80.0, focal_max = 120.0;
  std::vector<std::pair<int, int>> resolutions{{64, 48}};  // (width, height)
  double pp_jitter = 2.0;

  void validate() const {
    if (!(focal_min > 0) || focal_max < focal_min)
      throw std::invalid_argument("CameraFamily '" + label + "': invalid focal range");
    if (resolutions.empty()) throw std::invalid_argument("CameraFamily '" + label + "': no resolutions");
    for (auto [w, h] : resolutions)
      if (w < 8 || h < 8) throw std::invalid_argument("CameraFamily '" + label + "': resolution too small");
  }
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal{0, 0, 1};
  const ScenePrimitive* prim = nullptr;
};

constexpr double kRayEps = 1e-9;

inline void intersect(const ScenePrimitive& prim, const Vec3& dir, Hit& best) {
  switch (prim.kind) {
    case PrimitiveKind::kPlane: {
      double denom = prim.plane_normal.dot(dir);
      if (std::abs(denom) < 1e-12) return;
      double t = -prim.plane_offset / denom;
      if (t > kRayEps && t < best.t) best = {t, prim.plane_normal, &prim};
      return;
    }
    case PrimitiveKind::kSphere: {
      // Camera at origin: |t d - c|^2 = r^2.
      double b = dir.dot(prim.center);
      double disc = b * b - (prim.center.dot(prim.center) - prim.radius * prim.radius);
      if (disc < 0) return;
      double s = std::sqrt(disc);
      double t = b - s > kRayEps ? b - s : b + s;
      if (t > kRayEps && t < best.t) {
        Vec3 n = ((dir * t) - prim.center) * (1.0 / prim.radius);
        best = {t, n, &prim};
      }
      return;
    }
    case PrimitiveKind::kBox: {
      Mat3 rt = prim.orientation.transposed();
      Vec3 o = rt * (Vec3{0, 0, 0} - prim.center);
      Vec3 d = rt * dir;
      double tmin = -std::numeric_limits<double>::infinity();
      double tmax = std::numeric_limits<double>::infinity();
      int axis_min = 0;
      const double od[3] = {o.x, o.y, o.z};
      const double dd[3] = {d.x, d.y, d.z};
      const double he[3] = {prim.half_extents.x, prim.half_extents.y, prim.half_extents.z};
      for (int ax = 0; ax < 3; ++ax) {
        if (std::abs(dd[ax]) < 1e-12) {
          if (std::abs(od[ax]) > he[ax]) return;
          continue;
        }
        double t1 = (-he[ax] - od[ax]) / dd[ax];
        double t2 = (he[ax] - od[ax]) / dd[ax];
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > tmin) {
          tmin = t1;
          axis_min = ax;
        }
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return;
      }
      double t = tmin > kRayEps ? tmin : tmax;
      if (t > kRayEps && t < best.t) {
        Vec3 local = o + d * t;
        Vec3 n_local{0, 0, 0};
        const double lv[3] = {local.x, local.y, local.z};
        double sign = lv[axis_min] >= 0 ? 1.0 : -1.0;
        if (axis_min == 0) n_local = {sign, 0, 0};
        if (axis_min == 1) n_local = {0, sign, 0};
        if (axis_min == 2) n_local = {0, 0, sign};
        best = {t, prim.orientation * n_local, &prim};
      }
      return;
    }
  }
}

}  // namespace detail

struct RayHit {
  bool hit = false;
  double depth = 0.0;      // camera-frame z of the hit point
  Vec3 point{0, 0, 0};
  Vec3 normal{0, 0, 1};
  const ScenePrimitive* prim = nullptr;
};

inline RayHit cast_ray(const SceneSpec& scene, const Vec3& unit_dir) {
  detail::Hit best;
  for (const auto& prim : scene.primitives) detail::intersect(prim, unit_dir, best);
  RayHit out;
  if (!best.prim) return out;
  out.point = unit_dir * best.t;
  out.depth = out.point.z;
  if (out.depth <= 0 || out.depth > scene.far) return out;
  out.hit = true;
  out.normal = best.normal;
  out.prim = best.prim;
  return out;
}

// Lambertian shading with a single directional light plus ambient.
inline Vec3 shade(const ScenePrimitive& prim, const Vec3& normal, const Vec3& view_dir,
                  const SceneSpec& scene) {
  Vec3 n = normal;
  if (n.dot(view_dir) > 0) n = n * -1.0;  // face the camera
  double diffuse = std::max(0.0, n.dot(scene.light_direction));
  double s = scene.ambient + (1.0 - scene.ambient) * diffuse;
  return {prim.albedo.x * s, prim.albedo.y * s, prim.albedo.z * s};
}

inline constexpr Vec3 kSkyColor{0.70, 0.80, 0.92};

// Ray-casts one pixel per integer coordinate. Depth is the camera-frame z of
// the nearest hit (matching P = d K^-1 [u,v,1]); misses and hits beyond
// `scene.far` are invalid sky pixels.
inline RenderedSample render(const SceneSpec& scene, const PinholeIntrinsics& k) {
  k.validate();
  RenderedSample s;
  s.intrinsics = k;
  s.image = Image(k.width, k.height);
  s.depth = DepthMap(k.width, k.height);
  s.dense = true;
  Mat3 k_inv = k.inverse_matrix();
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      Vec3 dir = (k_inv * Vec3{double(x), double(y), 1.0}).normalized();
      RayHit hit = cast_ray(scene, dir);
      float* px = s.image.pixel(x, y);
      if (hit.hit) {
        s.depth.set(x, y, hit.depth);
        Vec3 c = shade(*hit.prim, hit.normal, dir, scene);
        px[0] = float(std::clamp(c.x, 0.0, 1.0));
        px[1] = float(std::clamp(c.y, 0.0, 1.0));
        px[2] = float(std::clamp(c.z, 0.0, 1.0));
      } else {
        s.depth.set_invalid(x, y);
        px[0] = float(kSkyColor.x);
        px[1] = float(kSkyColor.y);
        px[2] = float(kSkyColor.z);
      }
    }
  return s;
}

namespace detail {

inline Mat3 yaw_rotation(double angle) {
  Mat3 r;
  double c = std::cos(angle), s = std::sin(angle);
  r(0, 0) = c;  r(0, 1) = 0; r(0, 2) = s;
  r(1, 0) = 0;  r(1, 1) = 1; r(1, 2) = 0;
  r(2, 0) = -s; r(2, 1) = 0; r(2, 2) = c;
  return r;
}

inline double bounding_radius(const ScenePrimitive& p) {
  if (p.kind == PrimitiveKind::kSphere) return p.radius;
  return p.half_extents.norm();
}

}  // namespace detail

// Ground plane plus randomly placed spheres and boxes. Object sizes are drawn
// from a fixed range, which is what gives the scenes an absolute scale.
inline SceneSpec generate_scene(RngStream& rng, const SceneParams& params) {
  SceneSpec scene;
  scene.far = params.far;
  scene.ambient = rng.uniform(0.25, 0.45);
  // toward a light source somewhere above the scene (+y is down)
  Vec3 light{rng.uniform(-0.6, 0.6), -rng.uniform(0.6, 1.0), rng.uniform(-0.6, 0.6)};
  scene.light_direction = light.normalized();

  ScenePrimitive ground;
  ground.kind = PrimitiveKind::kPlane;
  ground.plane_normal = {0, -1, 0};  // +y is down in the camera frame
  ground.plane_offset = params.ground_y;
  ground.albedo = {rng.uniform(0.35, 0.55), rng.uniform(0.4, 0.6), rng.uniform(0.3, 0.5)};
  scene.primitives.push_back(ground);

  int count = params.min_objects +
              int(rng.uniform_int(std::uint64_t(params.max_objects - params.min_objects + 1)));
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      ScenePrimitive obj;
      obj.kind = rng.uniform() < 0.5 ? PrimitiveKind::kSphere : PrimitiveKind::kBox;
      double z = rng.uniform(params.depth_min, params.depth_max);
      double x = rng.uniform(-params.lateral_spread, params.lateral_spread) * z;
      double size = rng.uniform(params.size_min, params.size_max);
      double height_above_ground;
      if (obj.kind == PrimitiveKind::kSphere) {
        obj.radius = size;
        height_above_ground = size;
      } else {
        obj.half_extents = {size * rng.uniform(0.5, 1.0), size * rng.uniform(0.5, 1.0),
                            size * rng.uniform(0.5, 1.0)};
        obj.orientation = detail::yaw_rotation(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
        height_above_ground = obj.half_extents.y;
      }
      // mostly resting on the ground, occasionally floating
      double lift = rng.uniform() < 0.8 ? 0.0 : rng.uniform(0.5, 3.0);
      obj.center = {x, params.ground_y - height_above_ground - lift, z};
      obj.albedo = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
      if (obj.center.norm() - detail::bounding_radius(obj) < params.near_clearance) continue;
      scene.primitives.push_back(obj);
      break;
    }
  }
  scene.validate();
  return scene;
}

// --- dataset files -------------------------------------------------------------
// Layout: root/manifest.tsv, root/samples/NNNNNN.{ppm,pfm,txt}

inline void write_sample(const RenderedSample& s, const std::filesystem::path& prefix) {
  write_file(prefix.string() + ".ppm", [&](std::ostream& os) { write_ppm(os, s.image); });
  write_file(prefix.string() + ".pfm", [&](std::ostream& os) { write_pfm(os, s.depth); });
  write_file(prefix.string() + ".txt", [&](std::ostream& os) {
    write_camera(os, CameraFile{s.intrinsics, s.extrinsics});
  });
}

inline RenderedSample read_sample(const std::filesystem::path& prefix) {
  RenderedSample s;
  s.image = read_file(prefix.string() + ".ppm", [](std::istream& is) { return read_ppm(is); });
  s.depth = read_file(prefix.string() + ".pfm", [](std::istream& is) { return read_pfm(is); });
  auto cam = read_file(prefix.string() + ".txt", [](std::istream& is) { return read_camera(is); });
  s.intrinsics = cam.intrinsics;
  s.extrinsics = cam.extrinsics;
  if (s.depth.width != s.intrinsics.width || s.depth.height != s.intrinsics.height)
    throw std::runtime_error("read_sample: depth size does not match intrinsics: " + prefix.string());
  s.dense = true;
  s.id = prefix.filename().string();
  return s;
}

struct DatasetConfig {
  std::vector<CameraFamily> families;
  int samples_per_family = 100;
  double val_fraction = 0.25;
  SceneParams scene;
};

inline PinholeIntrinsics draw_camera(const CameraFamily& fam, RngStream& rng) {
  auto [w, h] = fam.resolutions[rng.uniform_int(fam.resolutions.size())];
  PinholeIntrinsics k;
  k.width = w;
  k.height = h;
  k.fx = rng.uniform(fam.focal_min, fam.focal_max);
  k.fy = k.fx;
  k.cx = (w - 1) / 2.0 + rng.uniform(-fam.pp_jitter, fam.pp_jitter);
  k.cy = (h - 1) / 2.0 + rng.uniform(-fam.pp_jitter, fam.pp_jitter);
  return k;
}

// Renders samples_per_family scenes per camera family and writes them plus a
// manifest. Per-sample RNG substreams make the output a pure function of the
// seed. The last val_fraction of each family is labeled "val".
inline std::vector<ManifestEntry> make_dataset(const DatasetConfig& cfg, std::uint64_t seed,
                                               const std::filesystem::path& root) {
  if (cfg.families.empty()) throw std::invalid_argument("make_dataset: needs at least one family");
  for (const auto& f : cfg.families) f.validate();
  std::filesystem::create_directories(root / "samples");
  RngStream rng(seed);
  std::vector<ManifestEntry> manifest;
  size_t global_index = 0;
  int train_count = int(std::lround((1.0 - cfg.val_fraction) * cfg.samples_per_family));
  for (const auto& fam : cfg.families) {
    for (int i = 0; i < cfg.samples_per_family; ++i, ++global_index) {
      RngStream sample_rng = rng.substream(global_index);
      RngStream cam_rng = sample_rng.substream(0);
      RngStream scene_rng = sample_rng.substream(1);
      PinholeIntrinsics k = draw_camera(fam, cam_rng);
      SceneSpec scene = generate_scene(scene_rng, cfg.scene);
      RenderedSample s = render(scene, k);
      char id[16];
      std::snprintf(id, sizeof(id), "%06zu", global_index);
      s.id = id;
      write_sample(s, root / "samples" / id);
      ManifestEntry e;
      e.id = id;
      e.family = fam.label;
      e.split = i < train_count ? "train" : "val";
      e.image_path = std::string("samples/") + id + ".ppm";
      e.depth_path = std::string("samples/") + id + ".pfm";
      e.camera_path = std::string("samples/") + id + ".txt";
      manifest.push_back(std::move(e));
    }
  }
  write_file(root / "manifest.tsv", [&](std::ostream& os) { write_manifest(os, manifest); });
  return manifest;
}

inline RenderedSample load_manifest_sample(const std::filesystem::path& root, const ManifestEntry& e) {
  std::filesystem::path img = root / e.image_path;
  RenderedSample s = read_sample((root / e.image_path).replace_extension(""));
  s.id = e.id;
  return s;
}

}  // namespace raydepth
