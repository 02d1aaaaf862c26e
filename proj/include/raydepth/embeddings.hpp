#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "raydepth/geometry.hpp"
#include "raydepth/image.hpp"
#include "raydepth/params.hpp"
#include "raydepth/rng.hpp"
#include "raydepth/tensor.hpp"

namespace raydepth {

// What the per-pixel "geometric" channel encodes. `kRay` is the calibration
// -aware 3D viewing direction; `kPixel` is a resolution-normalized 2D pixel
// coordinate, kept as an ablation baseline that ignores the camera.
enum class GeometricMode { kRay, kPixel };

struct FourierConfig {
  int bands = 16;          // F, even
  double max_res = 64.0;   // controls the top frequency (bands span [1, max_res/2])
  GeometricMode mode = GeometricMode::kRay;

  void validate() const {
    if (bands < 0 || bands % 2 != 0) throw std::invalid_argument("FourierConfig: bands must be even and >= 0");
    if (max_res < 2.0) throw std::invalid_argument("FourierConfig: max_res must be >= 2");
  }

  int components() const { return mode == GeometricMode::kRay ? 3 : 2; }
  int dim() const { return components() * (bands + 1); }

  // F/2 frequencies, log-spaced from 1 to max_res/2 inclusive.
  std::vector<double> frequencies() const {
    int n = bands / 2;
    std::vector<double> f(static_cast<size_t>(n), 0.0);
    if (n == 1) {
      f[0] = 1.0;
    } else {
      double lo = 0.0, hi = std::log(max_res / 2.0);
      for (int k = 0; k < n; ++k) f[size_t(k)] = std::exp(lo + (hi - lo) * double(k) / double(n - 1));
    }
    return f;
  }
};

namespace detail {

inline constexpr double kPi = 3.14159265358979323846;

// Per component c: [c, sin(pi f_1 c) ... sin(pi f_{F/2} c), cos(...)].
inline void fourier_component(double c, const std::vector<double>& freqs, std::vector<double>& out) {
  out.push_back(c);
  for (double f : freqs) out.push_back(std::sin(kPi * f * c));
  for (double f : freqs) out.push_back(std::cos(kPi * f * c));
}

}  // namespace detail

// Fourier encoding of a unit viewing direction; component blocks are
// concatenated x, y, z for a 3(F+1)-dimensional embedding.
inline std::vector<double> fourier_encode(const Vec3& direction, const FourierConfig& cfg) {
  if (std::abs(direction.norm() - 1.0) > 1e-6)
    throw std::domain_error("fourier_encode: direction is not unit length");
  auto freqs = cfg.frequencies();
  std::vector<double> out;
  out.reserve(size_t(cfg.dim()));
  detail::fourier_component(direction.x, freqs, out);
  detail::fourier_component(direction.y, freqs, out);
  detail::fourier_component(direction.z, freqs, out);
  return out;
}

// Ordered per-pixel embedding list. `dim` is the common feature width.
struct TokenSet {
  std::vector<Pixel> coords;
  int dim = 0;
  std::vector<double> features;  // row-major, coords.size() x dim

  size_t count() const { return coords.size(); }
  const double* row(size_t i) const { return features.data() + i * size_t(dim); }
};

// One geometric embedding per pixel, order preserved. In ray mode the pixel is
// backprojected through K; in pixel mode the coordinate itself is normalized
// to [-1, 1] per axis and encoded.
inline TokenSet geometric_embeddings(const PinholeIntrinsics& k, const std::vector<Pixel>& pixels,
                                     const FourierConfig& cfg) {
  cfg.validate();
  TokenSet out;
  out.dim = cfg.dim();
  out.coords = pixels;
  out.features.reserve(pixels.size() * size_t(out.dim));
  auto freqs = cfg.frequencies();
  for (const Pixel& p : pixels) {
    if (cfg.mode == GeometricMode::kRay) {
      Vec3 d = ray_direction(k, p).direction;
      detail::fourier_component(d.x, freqs, out.features);
      detail::fourier_component(d.y, freqs, out.features);
      detail::fourier_component(d.z, freqs, out.features);
    } else {
      double un = k.width > 1 ? 2.0 * p.u / (k.width - 1) - 1.0 : 0.0;
      double vn = k.height > 1 ? 2.0 * p.v / (k.height - 1) - 1.0 : 0.0;
      detail::fourier_component(un, freqs, out.features);
      detail::fourier_component(vn, freqs, out.features);
    }
  }
  return out;
}

template <typename T>
Tensor<T> tokens_to_tensor(const TokenSet& tokens) {
  std::vector<T> v(tokens.features.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = T(tokens.features[i]);
  return Tensor<T>::from_values({int(tokens.count()), tokens.dim}, std::move(v));
}

// --- image encoder --------------------------------------------------------------
// Small convolutional pyramid: stride-2 stages to 1/4, 1/8 and 1/16 resolution;
// the lower-resolution maps are bilinearly upsampled back to 1/4 and channel
// -concatenated.

template <typename T>
struct ConvEncoderParams {
  std::vector<int> channels{8, 16, 32};  // map channels at 1/4, 1/8, 1/16
  Tensor<T> w_stem, b_stem;
  Tensor<T> w_quarter, b_quarter;
  Tensor<T> w_eighth, b_eighth;
  Tensor<T> w_sixteenth, b_sixteenth;

  int total_channels() const { return channels[0] + channels[1] + channels[2]; }
};

namespace detail {

template <typename T>
Tensor<T> conv_weight(int kh, int kw, int cin, int cout, RngStream& rng, ParameterRegistry<T>& reg,
                      const std::string& name) {
  std::vector<T> v(size_t(kh) * kw * cin * cout);
  double std_dev = 1.0 / std::sqrt(double(kh) * kw * cin);
  for (auto& x : v) x = T(rng.normal(0.0, std_dev));
  return reg.add(name, Tensor<T>::parameter({kh, kw, cin, cout}, std::move(v)));
}

template <typename T>
Tensor<T> zero_bias(int n, ParameterRegistry<T>& reg, const std::string& name) {
  return reg.add(name, Tensor<T>::parameter({n}, std::vector<T>(size_t(n), T(0))));
}

}  // namespace detail

template <typename T>
ConvEncoderParams<T> make_conv_encoder(const std::vector<int>& channels, RngStream& rng,
                                       ParameterRegistry<T>& reg, const std::string& prefix) {
  if (channels.size() != 3) throw std::invalid_argument("conv encoder needs 3 stage channel counts");
  ConvEncoderParams<T> p;
  p.channels = channels;
  p.w_stem = detail::conv_weight(3, 3, 3, channels[0], rng, reg, prefix + ".stem.w");
  p.b_stem = detail::zero_bias(channels[0], reg, prefix + ".stem.b");
  p.w_quarter = detail::conv_weight(3, 3, channels[0], channels[0], rng, reg, prefix + ".quarter.w");
  p.b_quarter = detail::zero_bias(channels[0], reg, prefix + ".quarter.b");
  p.w_eighth = detail::conv_weight(3, 3, channels[0], channels[1], rng, reg, prefix + ".eighth.w");
  p.b_eighth = detail::zero_bias(channels[1], reg, prefix + ".eighth.b");
  p.w_sixteenth = detail::conv_weight(3, 3, channels[1], channels[2], rng, reg, prefix + ".sixteenth.w");
  p.b_sixteenth = detail::zero_bias(channels[2], reg, prefix + ".sixteenth.b");
  return p;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  std::vector<T> v(img.rgb.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = T(img.rgb[i]);
  return Tensor<T>::from_values({img.height, img.width, 3}, std::move(v));
}

// Multi-scale feature map at 1/4 resolution, shape [ceil(H/4), ceil(W/4), sum(channels)].
template <typename T>
Tensor<T> image_encoder(const Tensor<T>& image, const ConvEncoderParams<T>& p) {
  if (image.ndim() != 3 || image.size(2) != 3) shape_error("image_encoder", "expected [H,W,3]");
  if (image.size(0) < 8 || image.size(1) < 8)
    throw std::domain_error("image_encoder: image must be at least 8x8");
  auto half = gelu(conv2d(image, p.w_stem, p.b_stem, 2, 1));
  auto quarter = gelu(conv2d(half, p.w_quarter, p.b_quarter, 2, 1));
  auto eighth = gelu(conv2d(quarter, p.w_eighth, p.b_eighth, 2, 1));
  auto sixteenth = gelu(conv2d(eighth, p.w_sixteenth, p.b_sixteenth, 2, 1));
  int h4 = quarter.size(0), w4 = quarter.size(1);
  auto up8 = bilinear_resize(eighth, h4, w4);
  auto up16 = bilinear_resize(sixteenth, h4, w4);
  return concat<T>({quarter, up8, up16}, 2);
}

// Bilinear read of feature-map row vectors at continuous positions
// (feature-map cell units, edge-clamped).
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& fm, const std::vector<Pixel>& pixels) {
  std::vector<std::pair<double, double>> uv;
  uv.reserve(pixels.size());
  for (const Pixel& p : pixels) uv.emplace_back(p.u, p.v);
  return bilinear_gather(fm, uv);
}

template <typename T>
struct EncoderTokens {
  Tensor<T> features;  // [N, C + geom_dim]
  std::vector<Pixel> coords;
};

// Per pixel: bilinearly sampled image feature concatenated with its geometric
// embedding. Pixels are quarter-resolution coordinates and `k_quarter` must
// already be rescaled to match the feature map.
template <typename T>
EncoderTokens<T> build_encoder_tokens(const Tensor<T>& fm, const PinholeIntrinsics& k_quarter,
                                      const std::vector<Pixel>& pixels, const FourierConfig& cfg) {
  EncoderTokens<T> out;
  out.coords = pixels;
  auto img_part = bilinear_sample(fm, pixels);
  auto geom_part = tokens_to_tensor<T>(geometric_embeddings(k_quarter, pixels, cfg));
  out.features = concat<T>({img_part, geom_part}, 1);
  return out;
}

}  // namespace raydepth
