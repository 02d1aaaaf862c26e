#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace raydepth {

// H x W x 3 image, values in [0, 1], row-major HWC.
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(size_t(w) * h * 3, 0.0f) {}

  size_t index(int x, int y) const { return (size_t(y) * width + x) * 3; }
  float* pixel(int x, int y) { return rgb.data() + index(x, y); }
  const float* pixel(int x, int y) const { return rgb.data() + index(x, y); }
};

inline float luma(const float* px) { return 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2]; }

// Bilinear resize whose coordinate map matches the intrinsics resize formula:
// destination pixel u' samples the source at (u' - 0.5)/r + 0.5, edge-clamped.
// Ratios are passed explicitly because the target dims may be rounded.
inline Image resize_image(const Image& src, int out_w, int out_h, double r_w, double r_h) {
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("resize_image: empty output");
  Image dst(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    double sv = std::clamp((y - 0.5) / r_h + 0.5, 0.0, double(src.height - 1));
    int y0 = std::min(int(sv), src.height - 1);
    int y1 = std::min(y0 + 1, src.height - 1);
    double fv = sv - y0;
    for (int x = 0; x < out_w; ++x) {
      double su = std::clamp((x - 0.5) / r_w + 0.5, 0.0, double(src.width - 1));
      int x0 = std::min(int(su), src.width - 1);
      int x1 = std::min(x0 + 1, src.width - 1);
      double fu = su - x0;
      const float* p00 = src.pixel(x0, y0);
      const float* p01 = src.pixel(x1, y0);
      const float* p10 = src.pixel(x0, y1);
      const float* p11 = src.pixel(x1, y1);
      float* out = dst.pixel(x, y);
      for (int c = 0; c < 3; ++c)
        out[c] = float((1 - fu) * (1 - fv) * p00[c] + fu * (1 - fv) * p01[c] +
                       (1 - fu) * fv * p10[c] + fu * fv * p11[c]);
    }
  }
  return dst;
}

inline Image flip_horizontal(const Image& src) {
  Image dst(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const float* in = src.pixel(src.width - 1 - x, y);
      float* out = dst.pixel(x, y);
      out[0] = in[0];
      out[1] = in[1];
      out[2] = in[2];
    }
  return dst;
}

}  // namespace raydepth
