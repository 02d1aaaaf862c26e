#pragma once

#include <stdexcept>
#include <vector>

#include "raydepth/geometry.hpp"
#include "raydepth/rng.hpp"

namespace raydepth {

// Regular grid with a random integer phase offset in [0, stride)^2, clamped
// to the image. ceil(H/stride) * ceil(W/stride) queries; the random phase
// means every pixel is eventually supervised across batches.
inline std::vector<Pixel> strided_queries(int height, int width, int stride, RngStream& rng) {
  if (stride < 1) throw std::invalid_argument("strided_queries: stride must be >= 1");
  int phase_x = stride > 1 ? int(rng.uniform_int(std::uint64_t(stride))) : 0;
  int phase_y = stride > 1 ? int(rng.uniform_int(std::uint64_t(stride))) : 0;
  int cols = (width + stride - 1) / stride;
  int rows = (height + stride - 1) / stride;
  std::vector<Pixel> out;
  out.reserve(size_t(cols) * rows);
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) {
      int x = std::min(phase_x + i * stride, width - 1);
      int y = std::min(phase_y + j * stride, height - 1);
      out.push_back({double(x), double(y)});
    }
  return out;
}

inline std::vector<Pixel> full_grid_pixels(int height, int width) {
  std::vector<Pixel> out;
  out.reserve(size_t(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.push_back({double(x), double(y)});
  return out;
}

// Intrinsics of the subsampled camera whose integer pixel (i, j) is the
// full-resolution pixel (x0 + stride*i, y0 + stride*j):
// K_sub^-1 [i,j,1] = K^-1 [x0 + s i, y0 + s j, 1].
inline PinholeIntrinsics strided_intrinsics(const PinholeIntrinsics& k, int x0, int y0, int stride,
                                            int grid_w, int grid_h) {
  PinholeIntrinsics out;
  out.fx = k.fx / stride;
  out.fy = k.fy / stride;
  out.cx = (k.cx - x0) / stride;
  out.cy = (k.cy - y0) / stride;
  out.width = grid_w;
  out.height = grid_h;
  return out;
}

}  // namespace raydepth
