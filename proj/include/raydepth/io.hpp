#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "raydepth/geometry.hpp"
#include "raydepth/image.hpp"

namespace raydepth {

[[noreturn]] inline void parse_error(const std::string& what, std::istream& is) {
  auto pos = is.tellg();
  throw std::runtime_error(what + " (byte offset " +
                           (pos >= 0 ? std::to_string(std::streamoff(pos)) : std::string("unknown")) + ")");
}

// --- PFM (portable float map), grayscale, little-endian ----------------------
// Header: "Pf\n<width> <height>\n-1.0\n", then rows of f32 bottom-to-top.
// Invalid pixels are stored as NaN.

inline void write_pfm(std::ostream& os, const DepthMap& d) {
  os << "Pf\n" << d.width << " " << d.height << "\n-1.000000\n";
  for (int y = d.height - 1; y >= 0; --y)
    for (int x = 0; x < d.width; ++x) {
      float v = d.valid_at(x, y) ? float(d.at(x, y)) : std::numeric_limits<float>::quiet_NaN();
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16),
                            static_cast<unsigned char>(bits >> 24)};
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  if (!os) throw std::runtime_error("write_pfm: write failed");
}

inline DepthMap read_pfm(std::istream& is) {
  std::string magic;
  if (!(is >> magic)) parse_error("read_pfm: missing magic", is);
  if (magic != "Pf") parse_error("read_pfm: not a grayscale PFM", is);
  int w = 0, h = 0;
  double scale = 0;
  if (!(is >> w >> h >> scale)) parse_error("read_pfm: malformed header", is);
  if (w < 1 || h < 1) parse_error("read_pfm: bad dimensions", is);
  if (scale >= 0) parse_error("read_pfm: big-endian PFM not supported", is);
  is.get();  // single whitespace after the scale line
  DepthMap d(w, h);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      unsigned char b[4];
      if (!is.read(reinterpret_cast<char*>(b), 4)) parse_error("read_pfm: truncated pixel data", is);
      std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
      float v;
      std::memcpy(&v, &bits, 4);
      if (std::isfinite(v) && v > 0)
        d.set(x, y, double(v));
      else
        d.set_invalid(x, y);
    }
  return d;
}

// --- binary PPM (P6, maxval 255) ---------------------------------------------

inline void write_ppm(std::ostream& os, const Image& img) {
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float* px = img.pixel(x, y);
      for (int c = 0; c < 3; ++c) {
        float v = std::min(std::max(px[c], 0.0f), 1.0f);
        row[size_t(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!os) throw std::runtime_error("write_ppm: write failed");
}

inline Image read_ppm(std::istream& is) {
  std::string magic;
  if (!(is >> magic) || magic != "P6") parse_error("read_ppm: not a binary PPM", is);
  int w = 0, h = 0, maxval = 0;
  if (!(is >> w >> h >> maxval)) parse_error("read_ppm: malformed header", is);
  if (w < 1 || h < 1) parse_error("read_ppm: bad dimensions", is);
  if (maxval != 255) parse_error("read_ppm: only maxval 255 supported", is);
  is.get();
  Image img(w, h);
  std::vector<unsigned char> row(size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    if (!is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size())))
      parse_error("read_ppm: truncated pixel data", is);
    for (int x = 0; x < w; ++x) {
      float* px = img.pixel(x, y);
      for (int c = 0; c < 3; ++c) px[c] = float(row[size_t(x) * 3 + c]) / 255.0f;
    }
  }
  return img;
}

// --- ASCII PLY pointcloud ------------------------------------------------------

inline void write_ply(std::ostream& os, const PointCloud& cloud) {
  if (cloud.points.size() != cloud.colors.size())
    throw std::invalid_argument("write_ply: point/color count mismatch");
  os << "ply\nformat ascii 1.0\n"
     << "element vertex " << cloud.points.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
     << "end_header\n";
  char line[160];
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const auto& c = cloud.colors[i];
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %d %d %d\n", p.x, p.y, p.z, int(c[0]),
                  int(c[1]), int(c[2]));
    os << line;
  }
  if (!os) throw std::runtime_error("write_ply: write failed");
}

// --- dataset manifest (tab-separated) ------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string family;
  std::string split;  // "train" or "val"
  std::string image_path;
  std::string depth_path;
  std::string camera_path;
};

inline void write_manifest(std::ostream& os, const std::vector<ManifestEntry>& entries) {
  os << "#id\tfamily\tsplit\timage\tdepth\tcamera\n";
  for (const auto& e : entries)
    os << e.id << "\t" << e.family << "\t" << e.split << "\t" << e.image_path << "\t" << e.depth_path
       << "\t" << e.camera_path << "\n";
  if (!os) throw std::runtime_error("write_manifest: write failed");
}

inline std::vector<ManifestEntry> read_manifest(std::istream& is) {
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(std::getline(ls, e.id, '\t') && std::getline(ls, e.family, '\t') &&
          std::getline(ls, e.split, '\t') && std::getline(ls, e.image_path, '\t') &&
          std::getline(ls, e.depth_path, '\t') && std::getline(ls, e.camera_path)))
      throw std::runtime_error("read_manifest: malformed line: " + line);
    out.push_back(std::move(e));
  }
  return out;
}

// --- path helpers ---------------------------------------------------------------

template <typename WriteFn>
void write_file(const std::filesystem::path& path, WriteFn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  fn(os);
}

template <typename ReadFn>
auto read_file(const std::filesystem::path& path, ReadFn&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  return fn(is);
}

}  // namespace raydepth
