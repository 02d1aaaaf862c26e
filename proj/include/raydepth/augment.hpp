#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "raydepth/embeddings.hpp"
#include "raydepth/geometry.hpp"
#include "raydepth/image.hpp"
#include "raydepth/rng.hpp"
#include "raydepth/sample.hpp"

namespace raydepth {

struct ColorJitterMagnitudes {
  double brightness = 0.5;
  double contrast = 0.5;
  double saturation = 0.5;
  double hue = 0.1;  // in turns
};

struct AugmentConfig {
  double resize_min = 0.25;
  double resize_max = 1.5;
  int size_multiple = 32;
  double dropout_max = 0.5;
  double flip_prob = 0.5;
  ColorJitterMagnitudes color;
  bool ray_jitter = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(resize_min > 0) || resize_max < resize_min)
      throw std::invalid_argument("AugmentConfig: need 0 < resize_min <= resize_max");
    if (dropout_max < 0 || dropout_max >= 1)
      throw std::invalid_argument("AugmentConfig: dropout_max must be in [0, 1)");
    if (size_multiple < 1) throw std::invalid_argument("AugmentConfig: size_multiple must be >= 1");
    if (flip_prob < 0 || flip_prob > 1)
      throw std::invalid_argument("AugmentConfig: flip_prob must be in [0, 1]");
  }
};

// --- resolution jittering -----------------------------------------------------
// Resizes the image with independent per-axis ratios (target dims rounded up
// to size_multiple) and updates the intrinsics with the *requested* ratios so
// 3D structure is preserved. Ground-truth depth is left untouched: it belongs
// to the decoder side, which keeps the original resolution.

inline RenderedSample resolution_jitter(const RenderedSample& sample, const AugmentConfig& cfg,
                                        RngStream& rng) {
  cfg.validate();
  double r_w = rng.uniform(cfg.resize_min, cfg.resize_max);
  double r_h = rng.uniform(cfg.resize_min, cfg.resize_max);
  int m = cfg.size_multiple;
  auto round_up = [m](double v) { return std::max(m, int(std::ceil(v / m)) * m); };
  int out_w = round_up(r_w * sample.intrinsics.width);
  int out_h = round_up(r_h * sample.intrinsics.height);

  RenderedSample out = sample;
  if (r_w == 1.0 && r_h == 1.0 && out_w == sample.intrinsics.width &&
      out_h == sample.intrinsics.height)
    return out;
  out.image = resize_image(sample.image, out_w, out_h, r_w, r_h);
  PinholeIntrinsics k = rescale_intrinsics(sample.intrinsics, r_w, r_h);
  k.width = out_w;
  k.height = out_h;
  out.intrinsics = k;
  return out;
}

// --- ray jittering --------------------------------------------------------------

// Perturbs each coordinate by U(-magnitude, magnitude); with the default 0.5
// the point stays within its pixel boundaries. Magnitude 0 is the identity.
inline std::vector<Pixel> ray_jitter(const std::vector<Pixel>& pixels, RngStream& rng,
                                     double magnitude = 0.5) {
  std::vector<Pixel> out;
  out.reserve(pixels.size());
  for (const Pixel& p : pixels)
    out.push_back({p.u + rng.uniform(-magnitude, magnitude), p.v + rng.uniform(-magnitude, magnitude)});
  return out;
}

// --- embedding dropout -----------------------------------------------------------

// round((1 - p) N), never fewer than one token.
inline size_t dropout_keep_count(size_t n, double p) {
  return size_t(std::max<long>(1, std::lround((1.0 - p) * double(n))));
}

// Sorted indices of the tokens to retain, p ~ U(0, dropout_max).
inline std::vector<int> dropout_keep_indices(size_t n, RngStream& rng, double dropout_max) {
  if (n == 0) throw std::invalid_argument("embedding_dropout: empty token set");
  double p = rng.uniform(0.0, dropout_max);
  size_t keep = dropout_keep_count(n, p);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (size_t i = 0; i < keep; ++i) {  // partial Fisher-Yates
    size_t j = i + size_t(rng.uniform_int(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline TokenSet embedding_dropout(const TokenSet& tokens, RngStream& rng, double dropout_max) {
  auto keep = dropout_keep_indices(tokens.count(), rng, dropout_max);
  if (keep.size() == tokens.count()) return tokens;
  TokenSet out;
  out.dim = tokens.dim;
  out.coords.reserve(keep.size());
  out.features.reserve(keep.size() * size_t(tokens.dim));
  for (int i : keep) {
    out.coords.push_back(tokens.coords[size_t(i)]);
    const double* row = tokens.row(size_t(i));
    out.features.insert(out.features.end(), row, row + tokens.dim);
  }
  return out;
}

// --- horizontal flip --------------------------------------------------------------

inline RenderedSample flip_sample(const RenderedSample& sample) {
  RenderedSample out = sample;
  out.image = flip_horizontal(sample.image);
  int w = sample.depth.width;
  for (int y = 0; y < sample.depth.height; ++y)
    for (int x = 0; x < w; ++x) {
      out.depth.values[out.depth.index(x, y)] = sample.depth.values[sample.depth.index(w - 1 - x, y)];
      out.depth.valid[out.depth.index(x, y)] = sample.depth.valid[sample.depth.index(w - 1 - x, y)];
    }
  out.intrinsics.cx = double(w - 1) - sample.intrinsics.cx;
  return out;
}

inline RenderedSample horizontal_flip(const RenderedSample& sample, RngStream& rng, double flip_prob) {
  if (rng.uniform() >= flip_prob) return sample;
  return flip_sample(sample);
}

// --- color jitter -----------------------------------------------------------------

struct ColorJitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue_turns = 0.0;
};

inline ColorJitterFactors draw_color_jitter(RngStream& rng, const ColorJitterMagnitudes& m) {
  ColorJitterFactors f;
  f.brightness = rng.uniform(1.0 - m.brightness, 1.0 + m.brightness);
  f.contrast = rng.uniform(1.0 - m.contrast, 1.0 + m.contrast);
  f.saturation = rng.uniform(1.0 - m.saturation, 1.0 + m.saturation);
  f.hue_turns = rng.uniform(-m.hue, m.hue);
  return f;
}

// Brightness/contrast/saturation as affine blends, hue as a rotation in the
// YIQ chroma plane. Stages with an exactly-neutral factor are skipped so that
// zero magnitudes give a bitwise identity. Output is clamped to [0, 1].
inline Image apply_color_jitter(const Image& src, const ColorJitterFactors& f) {
  Image out = src;
  size_t n = size_t(src.width) * src.height;
  if (f.brightness != 1.0)
    for (auto& v : out.rgb) v = float(v * f.brightness);
  if (f.contrast != 1.0) {
    double mean = 0;
    for (size_t i = 0; i < n; ++i) mean += luma(out.rgb.data() + i * 3);
    mean /= double(n);
    for (auto& v : out.rgb) v = float((v - mean) * f.contrast + mean);
  }
  if (f.saturation != 1.0) {
    for (size_t i = 0; i < n; ++i) {
      float* px = out.rgb.data() + i * 3;
      float l = luma(px);
      for (int c = 0; c < 3; ++c) px[c] = float(l + (px[c] - l) * f.saturation);
    }
  }
  if (f.hue_turns != 0.0) {
    double a = 2.0 * 3.14159265358979323846 * f.hue_turns;
    double ca = std::cos(a), sa = std::sin(a);
    for (size_t i = 0; i < n; ++i) {
      float* px = out.rgb.data() + i * 3;
      double r = px[0], g = px[1], b = px[2];
      double yy = 0.299 * r + 0.587 * g + 0.114 * b;
      double ii = 0.596 * r - 0.274 * g - 0.322 * b;
      double qq = 0.211 * r - 0.523 * g + 0.312 * b;
      double ir = ii * ca - qq * sa;
      double qr = ii * sa + qq * ca;
      px[0] = float(yy + 0.956 * ir + 0.621 * qr);
      px[1] = float(yy - 0.272 * ir - 0.647 * qr);
      px[2] = float(yy - 1.106 * ir + 1.703 * qr);
    }
  }
  for (auto& v : out.rgb) v = std::min(std::max(v, 0.0f), 1.0f);
  return out;
}

inline Image color_jitter(const Image& img, RngStream& rng, const ColorJitterMagnitudes& m) {
  return apply_color_jitter(img, draw_color_jitter(rng, m));
}

// --- intrinsics noise ----------------------------------------------------------------

// Multiplies fx, fy, cx, cy by independent (1 + eps), eps ~ N(0, noise^2),
// resampling any factor that would make the camera invalid.
inline PinholeIntrinsics perturb_intrinsics(const PinholeIntrinsics& k, double noise_level,
                                            RngStream& rng) {
  if (noise_level < 0) throw std::invalid_argument("perturb_intrinsics: noise level must be >= 0");
  PinholeIntrinsics out = k;
  if (noise_level == 0) return out;
  auto scaled = [&](double v, bool must_be_positive) {
    for (int i = 0; i < 1000; ++i) {
      double s = v * (1.0 + rng.normal(0.0, noise_level));
      if (!must_be_positive || s > 0) return s;
    }
    return v;  // pathological noise level; keep the original
  };
  out.fx = scaled(k.fx, true);
  out.fy = scaled(k.fy, true);
  out.cx = scaled(k.cx, false);
  out.cy = scaled(k.cy, false);
  return out;
}

}  // namespace raydepth
