#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace raydepth {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    if (n == 0) throw std::domain_error("Vec3: cannot normalize zero vector");
    return {x / n, y / n, z / n};
  }
};

struct Mat3 {
  // Row-major.
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double& operator()(int r, int c) { return m[r * 3 + c]; }
  double operator()(int r, int c) const { return m[r * 3 + c]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Mat3 inverse() const {
    double d = det();
    if (d == 0) throw std::domain_error("Mat3: singular matrix");
    Mat3 r;
    r(0, 0) = (m[4] * m[8] - m[5] * m[7]) / d;
    r(0, 1) = (m[2] * m[7] - m[1] * m[8]) / d;
    r(0, 2) = (m[1] * m[5] - m[2] * m[4]) / d;
    r(1, 0) = (m[5] * m[6] - m[3] * m[8]) / d;
    r(1, 1) = (m[0] * m[8] - m[2] * m[6]) / d;
    r(1, 2) = (m[2] * m[3] - m[0] * m[5]) / d;
    r(2, 0) = (m[3] * m[7] - m[4] * m[6]) / d;
    r(2, 1) = (m[1] * m[6] - m[0] * m[7]) / d;
    r(2, 2) = (m[0] * m[4] - m[1] * m[3]) / d;
    return r;
  }
};

// Continuous pixel coordinates. Pixel centers sit at integer coordinates, so
// an image spans [-0.5, W-0.5] x [-0.5, H-0.5].
struct Pixel {
  double u = 0, v = 0;
};

// Unit viewing direction in the camera frame.
struct Ray {
  Vec3 direction{0, 0, 1};
};

using Point3 = Vec3;

struct PinholeIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("PinholeIntrinsics: focal lengths must be > 0");
    if (width < 1 || height < 1) throw std::invalid_argument("PinholeIntrinsics: image size must be >= 1");
    if (!std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) || !std::isfinite(cy))
      throw std::invalid_argument("PinholeIntrinsics: parameters must be finite");
  }

  Mat3 matrix() const {
    Mat3 k;
    k(0, 0) = fx; k(0, 1) = 0;  k(0, 2) = cx;
    k(1, 0) = 0;  k(1, 1) = fy; k(1, 2) = cy;
    k(2, 0) = 0;  k(2, 1) = 0;  k(2, 2) = 1;
    return k;
  }

  Mat3 inverse_matrix() const { return matrix().inverse(); }
};

// Camera-to-world rigid transform.
struct Extrinsics {
  Mat3 rotation;
  Vec3 translation{0, 0, 0};

  void validate(double tol = 1e-9) const {
    Mat3 rtr = rotation.transposed() * rotation;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double expect = (i == j) ? 1.0 : 0.0;
        if (std::abs(rtr(i, j) - expect) > tol)
          throw std::invalid_argument("Extrinsics: rotation is not orthonormal");
      }
    if (std::abs(rotation.det() - 1.0) > tol)
      throw std::invalid_argument("Extrinsics: rotation determinant is not +1");
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

// Dense metric depth with a per-pixel validity mask.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), values(size_t(w) * h, 0.0), valid(size_t(w) * h, 0) {}

  size_t index(int x, int y) const { return size_t(y) * width + x; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  double at(int x, int y) const { return values[index(x, y)]; }
  bool valid_at(int x, int y) const { return valid[index(x, y)] != 0; }
  void set(int x, int y, double d) {
    values[index(x, y)] = d;
    valid[index(x, y)] = 1;
  }
  void set_invalid(int x, int y) {
    values[index(x, y)] = 0.0;
    valid[index(x, y)] = 0;
  }
  size_t valid_count() const {
    size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

// Viewing direction of a pixel: normalize(K^-1 [u, v, 1]^T).
inline Ray ray_direction(const PinholeIntrinsics& k, const Pixel& p) {
  Vec3 d = k.inverse_matrix() * Vec3{p.u, p.v, 1.0};
  return Ray{d.normalized()};
}

// P = d * K^-1 [u, v, 1]^T. The last row of K^-1 [u, v, 1] is 1, so P.z == d.
inline Point3 unproject(const PinholeIntrinsics& k, const Pixel& p, double depth) {
  if (!(depth > 0)) throw std::domain_error("unproject: depth must be > 0");
  Vec3 d = k.inverse_matrix() * Vec3{p.u, p.v, 1.0};
  return d * depth;
}

inline Pixel project(const PinholeIntrinsics& k, const Point3& p) {
  if (!(p.z > 0)) throw std::domain_error("project: point is behind the camera");
  return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
}

// Intrinsics update for an image resized by (r_w, r_h). The principal-point
// shift keeps viewing rays identical at mapped coordinates
// u' = r_w (u - 0.5) + 0.5 under the integer-pixel-center convention.
inline PinholeIntrinsics rescale_intrinsics(const PinholeIntrinsics& k, double r_w, double r_h) {
  if (!(r_w > 0) || !(r_h > 0)) throw std::domain_error("rescale_intrinsics: ratios must be > 0");
  PinholeIntrinsics out;
  out.fx = r_w * k.fx;
  out.fy = r_h * k.fy;
  out.cx = r_w * (k.cx - 0.5) + 0.5;
  out.cy = r_h * (k.cy - 0.5) + 0.5;
  out.width = int(std::lround(r_w * k.width));
  out.height = int(std::lround(r_h * k.height));
  return out;
}

// Forward-difference surface normal at integer pixel (x, y):
//   n = (P(x+1,y) - P(x,y)) x (P(x,y+1) - P(x,y)), normalized.
// Returns nullopt when a neighbor is missing/invalid or the cross product
// degenerates.
inline std::optional<Vec3> surface_normal(const DepthMap& d, const PinholeIntrinsics& k, int x, int y) {
  if (!d.in_bounds(x, y) || !d.in_bounds(x + 1, y) || !d.in_bounds(x, y + 1)) return std::nullopt;
  if (!d.valid_at(x, y) || !d.valid_at(x + 1, y) || !d.valid_at(x, y + 1)) return std::nullopt;
  Mat3 k_inv = k.inverse_matrix();
  auto point = [&](int px, int py) {
    return (k_inv * Vec3{double(px), double(py), 1.0}) * d.at(px, py);
  };
  Vec3 p0 = point(x, y);
  Vec3 du = point(x + 1, y) - p0;
  Vec3 dv = point(x, y + 1) - p0;
  Vec3 n = du.cross(dv);
  double len = n.norm();
  if (len == 0 || !std::isfinite(len)) return std::nullopt;
  return n * (1.0 / len);
}

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::array<std::uint8_t, 3>> colors;
  Extrinsics pose;  // camera-to-world
};

// Transforms every cloud into the world frame and concatenates. No alignment
// or post-processing of any kind.
inline PointCloud merge_pointclouds(const std::vector<PointCloud>& clouds) {
  PointCloud out;
  for (const auto& c : clouds) {
    if (c.points.size() != c.colors.size())
      throw std::invalid_argument("merge_pointclouds: point/color count mismatch");
    for (size_t i = 0; i < c.points.size(); ++i) {
      out.points.push_back(c.pose.apply(c.points[i]));
      out.colors.push_back(c.colors[i]);
    }
  }
  return out;
}

// --- Intrinsics text format ----------------------------------------------
// Line 1: "fx fy"    Line 2: "cx cy"    Line 3: "width height"
// Optional line 4: camera-to-world extrinsics as 12 numbers (row-major R, then t).

struct CameraFile {
  PinholeIntrinsics intrinsics;
  std::optional<Extrinsics> extrinsics;
};

inline void write_camera(std::ostream& os, const CameraFile& c) {
  os.precision(17);
  os << c.intrinsics.fx << " " << c.intrinsics.fy << "\n"
     << c.intrinsics.cx << " " << c.intrinsics.cy << "\n"
     << c.intrinsics.width << " " << c.intrinsics.height << "\n";
  if (c.extrinsics) {
    const Mat3& r = c.extrinsics->rotation;
    for (int i = 0; i < 9; ++i) os << r.m[i] << " ";
    os << c.extrinsics->translation.x << " " << c.extrinsics->translation.y << " "
       << c.extrinsics->translation.z << "\n";
  }
}

inline CameraFile read_camera(std::istream& is) {
  CameraFile c;
  if (!(is >> c.intrinsics.fx >> c.intrinsics.fy >> c.intrinsics.cx >> c.intrinsics.cy >>
        c.intrinsics.width >> c.intrinsics.height))
    throw std::runtime_error("read_camera: malformed intrinsics file");
  c.intrinsics.validate();
  double first;
  if (is >> first) {
    Extrinsics e;
    e.rotation.m[0] = first;
    for (int i = 1; i < 9; ++i)
      if (!(is >> e.rotation.m[i])) throw std::runtime_error("read_camera: truncated extrinsics");
    if (!(is >> e.translation.x >> e.translation.y >> e.translation.z))
      throw std::runtime_error("read_camera: truncated extrinsics");
    e.validate(1e-6);
    c.extrinsics = e;
  }
  return c;
}

}  // namespace raydepth
