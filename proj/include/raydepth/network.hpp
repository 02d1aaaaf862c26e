#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "raydepth/augment.hpp"
#include "raydepth/embeddings.hpp"
#include "raydepth/params.hpp"
#include "raydepth/queries.hpp"
#include "raydepth/rng.hpp"
#include "raydepth/sample.hpp"
#include "raydepth/tensor.hpp"

namespace raydepth {

struct NetworkConfig {
  int latent_count = 64;    // N_l (paper-scale reference: 1024)
  int latent_dim = 64;      // D_l (paper-scale reference: 1024)
  int heads = 4;            // paper-scale reference: 8
  int self_layers = 3;      // paper-scale reference: 8
  double dropout_rate = 0.1;
  int token_dim = 107;      // encoder token width: image channels + geometric dim
  int query_dim = 51;       // decoder query width: geometric dim only
  int mlp_ratio = 4;
  double d_min = 0.5;       // meters
  double d_max = 40.0;

  void validate() const {
    if (latent_count < 1 || latent_dim < 1) throw std::invalid_argument("NetworkConfig: latent sizes must be >= 1");
    if (heads < 1 || latent_dim % heads != 0)
      throw std::invalid_argument("NetworkConfig: latent_dim must be divisible by heads");
    if (self_layers < 0) throw std::invalid_argument("NetworkConfig: self_layers must be >= 0");
    if (dropout_rate < 0 || dropout_rate >= 1)
      throw std::invalid_argument("NetworkConfig: dropout must be in [0, 1)");
    if (token_dim < 1 || query_dim < 1) throw std::invalid_argument("NetworkConfig: token dims must be >= 1");
    if (!(d_min > 0) || !(d_max > d_min)) throw std::invalid_argument("NetworkConfig: need 0 < d_min < d_max");
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <typename T>
struct AttentionParams {
  // No key bias: a shared key offset shifts every score for a query
  // equally and cancels in the softmax, so the parameter would be inert.
  Tensor<T> wq, bq, wk, wv, bv, wo, bo;
  int heads = 1;
};

template <typename T>
struct MlpParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct SelfBlockParams {
  LayerNormParams<T> ln_attn, ln_mlp;
  AttentionParams<T> attn;
  MlpParams<T> mlp;
};

// The conditioning stack runs at width 2*D_l so the final latent splits into
// (mean, log-variance); the decoder cross-attends into the sampled D_l latent.
template <typename T>
struct DepthNetworkParams {
  NetworkConfig cfg;
  Tensor<T> latent;  // N_l x 2 D_l

  LayerNormParams<T> ln_tokens, ln_cross_q;
  AttentionParams<T> cross;
  std::vector<SelfBlockParams<T>> blocks;
  LayerNormParams<T> ln_final;

  LayerNormParams<T> ln_sampled;
  AttentionParams<T> dec_cross;
  LayerNormParams<T> ln_dec;
  MlpParams<T> head;
};

namespace detail {

template <typename T>
Tensor<T> linear_weight(int fan_in, int fan_out, RngStream& rng, ParameterRegistry<T>& reg,
                        const std::string& name) {
  std::vector<T> v(size_t(fan_in) * fan_out);
  double std_dev = 1.0 / std::sqrt(double(fan_in));
  for (auto& x : v) x = T(rng.normal(0.0, std_dev));
  return reg.add(name, Tensor<T>::parameter({fan_in, fan_out}, std::move(v)));
}

template <typename T>
LayerNormParams<T> make_layer_norm(int dim, ParameterRegistry<T>& reg, const std::string& name) {
  LayerNormParams<T> p;
  p.gain = reg.add(name + ".gain", Tensor<T>::parameter({dim}, std::vector<T>(size_t(dim), T(1))));
  p.bias = reg.add(name + ".bias", Tensor<T>::parameter({dim}, std::vector<T>(size_t(dim), T(0))));
  return p;
}

template <typename T>
AttentionParams<T> make_attention(int q_dim, int kv_dim, int inner, int out, int heads,
                                  RngStream& rng, ParameterRegistry<T>& reg, const std::string& name) {
  AttentionParams<T> p;
  p.heads = heads;
  p.wq = linear_weight(q_dim, inner, rng, reg, name + ".wq");
  p.bq = zero_bias(inner, reg, name + ".bq");
  p.wk = linear_weight(kv_dim, inner, rng, reg, name + ".wk");
  p.wv = linear_weight(kv_dim, inner, rng, reg, name + ".wv");
  p.bv = zero_bias(inner, reg, name + ".bv");
  p.wo = linear_weight(inner, out, rng, reg, name + ".wo");
  p.bo = zero_bias(out, reg, name + ".bo");
  return p;
}

template <typename T>
MlpParams<T> make_mlp(int in, int hidden, int out, RngStream& rng, ParameterRegistry<T>& reg,
                      const std::string& name) {
  MlpParams<T> p;
  p.w1 = linear_weight(in, hidden, rng, reg, name + ".w1");
  p.b1 = zero_bias(hidden, reg, name + ".b1");
  p.w2 = linear_weight(hidden, out, rng, reg, name + ".w2");
  p.b2 = zero_bias(out, reg, name + ".b2");
  return p;
}

}  // namespace detail

template <typename T>
DepthNetworkParams<T> make_network(const NetworkConfig& cfg, RngStream& rng,
                                   ParameterRegistry<T>& reg, const std::string& prefix = "net") {
  cfg.validate();
  DepthNetworkParams<T> p;
  p.cfg = cfg;
  int wide = 2 * cfg.latent_dim;

  std::vector<T> latent_init(size_t(cfg.latent_count) * wide);
  for (auto& v : latent_init) v = T(rng.normal(0.0, 0.02));
  p.latent = reg.add(prefix + ".latent",
                     Tensor<T>::parameter({cfg.latent_count, wide}, std::move(latent_init)));

  p.ln_tokens = detail::make_layer_norm(cfg.token_dim, reg, prefix + ".ln_tokens");
  p.ln_cross_q = detail::make_layer_norm(wide, reg, prefix + ".ln_cross_q");
  p.cross = detail::make_attention(wide, cfg.token_dim, wide, wide, cfg.heads, rng, reg,
                                   prefix + ".cross");
  for (int i = 0; i < cfg.self_layers; ++i) {
    SelfBlockParams<T> b;
    std::string base = prefix + ".block" + std::to_string(i);
    b.ln_attn = detail::make_layer_norm(wide, reg, base + ".ln_attn");
    b.attn = detail::make_attention(wide, wide, wide, wide, cfg.heads, rng, reg, base + ".attn");
    b.ln_mlp = detail::make_layer_norm(wide, reg, base + ".ln_mlp");
    b.mlp = detail::make_mlp(wide, cfg.mlp_ratio * wide, wide, rng, reg, base + ".mlp");
    p.blocks.push_back(std::move(b));
  }
  p.ln_final = detail::make_layer_norm(wide, reg, prefix + ".ln_final");

  p.ln_sampled = detail::make_layer_norm(cfg.latent_dim, reg, prefix + ".ln_sampled");
  p.dec_cross = detail::make_attention(cfg.query_dim, cfg.latent_dim, cfg.latent_dim,
                                       cfg.latent_dim, cfg.heads, rng, reg, prefix + ".dec_cross");
  p.ln_dec = detail::make_layer_norm(cfg.latent_dim, reg, prefix + ".ln_dec");
  p.head = detail::make_mlp(cfg.latent_dim, cfg.mlp_ratio * cfg.latent_dim, 1, rng, reg,
                            prefix + ".head");
  return p;
}

// Standard scaled-dot-product multi-head attention over one sequence pair.
template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& queries, const Tensor<T>& keys_values,
                              const AttentionParams<T>& p) {
  int nq = queries.size(0), nk = keys_values.size(0);
  int inner = p.wq.size(1);
  int h = p.heads, dh = inner / h;
  auto q = add_bias(matmul(queries, p.wq), p.bq);
  auto k = matmul(keys_values, p.wk);
  auto v = add_bias(matmul(keys_values, p.wv), p.bv);
  auto qh = transpose(reshape(q, {nq, h, dh}), 0, 1);
  auto kh = transpose(reshape(k, {nk, h, dh}), 0, 1);
  auto vh = transpose(reshape(v, {nk, h, dh}), 0, 1);
  auto scores = scalar_mul(bmm(qh, transpose(kh, 1, 2)), T(1.0 / std::sqrt(double(dh))));
  auto ctx = bmm(softmax_last(scores), vh);  // h x nq x dh
  auto merged = reshape(transpose(ctx, 0, 1), {nq, inner});
  return add_bias(matmul(merged, p.wo), p.bo);
}

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p) {
  return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

// Diagonal-Gaussian latent state: mean and log-variance, each N_l x D_l.
template <typename T>
struct ConditionedLatent {
  Tensor<T> mu;
  Tensor<T> log_var;
};

// Conditions the learned latent array on encoder tokens: one cross-attention
// (latent queries the tokens) followed by pre-norm self-attention blocks, then
// a final layer norm and a split into (mean, log-variance).
template <typename T>
ConditionedLatent<T> encode_condition(const Tensor<T>& tokens, const DepthNetworkParams<T>& p,
                                      RngStream& rng, bool training) {
  if (tokens.ndim() != 2 || tokens.size(0) < 1)
    throw std::domain_error("encode_condition: token set must be non-empty");
  if (tokens.size(1) != p.cfg.token_dim)
    shape_error("encode_condition", "token dim " + std::to_string(tokens.size(1)) +
                                        " != configured " + std::to_string(p.cfg.token_dim));
  double rate = p.cfg.dropout_rate;
  auto kv = layer_norm_last(tokens, p.ln_tokens.gain, p.ln_tokens.bias);
  auto x = p.latent;
  auto attended = multihead_attention(
      layer_norm_last(x, p.ln_cross_q.gain, p.ln_cross_q.bias), kv, p.cross);
  x = add(x, dropout(attended, rate, rng, training));
  for (const auto& b : p.blocks) {
    auto normed = layer_norm_last(x, b.ln_attn.gain, b.ln_attn.bias);
    x = add(x, dropout(multihead_attention(normed, normed, b.attn), rate, rng, training));
    auto normed2 = layer_norm_last(x, b.ln_mlp.gain, b.ln_mlp.bias);
    x = add(x, dropout(mlp_forward(normed2, b.mlp), rate, rng, training));
  }
  x = layer_norm_last(x, p.ln_final.gain, p.ln_final.bias);
  ConditionedLatent<T> c;
  c.mu = slice_last(x, 0, p.cfg.latent_dim);
  c.log_var = slice_last(x, p.cfg.latent_dim, p.cfg.latent_dim);
  return c;
}

// Reparameterized draw z = mu + exp(s/2) * eps, eps ~ N(0, 1), so gradients
// reach both halves. `zero_noise` collapses the draw onto the mean.
template <typename T>
Tensor<T> sample_latent(const ConditionedLatent<T>& c, RngStream& rng, bool zero_noise = false) {
  if (zero_noise) return c.mu;
  std::vector<T> eps(c.mu.numel());
  for (auto& e : eps) e = T(rng.normal());
  auto noise = Tensor<T>::from_values(c.mu.shape(), std::move(eps));
  return add(c.mu, mul(raydepth::exp(scalar_mul(c.log_var, T(0.5))), noise));
}

// Converts the unbounded head output into a depth in (d_min, d_max).
inline double depth_from_logit(double a, double d_min, double d_max) {
  return d_min + (d_max - d_min) / (1.0 + std::exp(-a));
}

// Decodes one depth per query: the query's geometric embedding cross-attends
// into the sampled latent, an MLP head produces a scalar, and a range-scaled
// sigmoid maps it into (d_min, d_max). Rows are independent, so any query set
// can be decoded from one conditioning.
template <typename T>
Tensor<T> decode_depth(const Tensor<T>& sampled_latent, const Tensor<T>& queries,
                       const DepthNetworkParams<T>& p, RngStream& rng, bool training) {
  if (queries.ndim() != 2 || queries.size(1) != p.cfg.query_dim)
    shape_error("decode_depth", "query dim " + std::to_string(queries.ndim() == 2 ? queries.size(1) : -1) +
                                    " != configured " + std::to_string(p.cfg.query_dim));
  auto kv = layer_norm_last(sampled_latent, p.ln_sampled.gain, p.ln_sampled.bias);
  auto h = multihead_attention(queries, kv, p.dec_cross);
  h = dropout(h, p.cfg.dropout_rate, rng, training);
  auto logit = mlp_forward(layer_norm_last(h, p.ln_dec.gain, p.ln_dec.bias), p.head);  // [M, 1]
  auto squashed = sigmoid(reshape(logit, {queries.size(0)}));
  return scalar_add(scalar_mul(squashed, T(p.cfg.d_max - p.cfg.d_min)), T(p.cfg.d_min));
}

// --- training-time forward -------------------------------------------------------

struct PipelineConfig {
  NetworkConfig network;
  FourierConfig fourier;
  AugmentConfig augment;
  int query_stride = 8;
};

template <typename T>
struct ForwardTrainResult {
  Tensor<T> pred;                  // [M] depths at the strided queries
  ConditionedLatent<T> latent;
  RenderedSample sample_view;      // decoder-side sample (after flip, original resolution)
  std::vector<Pixel> query_pixels; // integer coordinates, row-major over the strided grid
  int grid_w = 0, grid_h = 0;
  PinholeIntrinsics k_grid;        // intrinsics of the strided query grid
};

// Augment, encode, condition, sample once, decode at strided full-resolution
// queries. Decoder information (queries, ground truth) keeps the original
// resolution; only the encoder sees the jittered view.
template <typename T>
ForwardTrainResult<T> forward_train(const RenderedSample& sample, const DepthNetworkParams<T>& net,
                                    const ConvEncoderParams<T>& enc, const PipelineConfig& cfg,
                                    RngStream& rng, bool training = true) {
  ForwardTrainResult<T> out;

  RenderedSample view = training ? horizontal_flip(sample, rng, cfg.augment.flip_prob) : sample;
  if (training) view.image = color_jitter(view.image, rng, cfg.augment.color);
  RenderedSample enc_view = training ? resolution_jitter(view, cfg.augment, rng) : view;

  auto fm = image_encoder(image_to_tensor<T>(enc_view.image), enc);
  int h4 = fm.size(0), w4 = fm.size(1);
  PinholeIntrinsics k4 = rescale_intrinsics(enc_view.intrinsics,
                                            double(w4) / enc_view.intrinsics.width,
                                            double(h4) / enc_view.intrinsics.height);
  k4.width = w4;
  k4.height = h4;

  std::vector<Pixel> grid = full_grid_pixels(h4, w4);
  if (training && cfg.augment.ray_jitter) grid = ray_jitter(grid, rng);
  if (training && cfg.augment.dropout_max > 0) {
    auto keep = dropout_keep_indices(grid.size(), rng, cfg.augment.dropout_max);
    std::vector<Pixel> kept;
    kept.reserve(keep.size());
    for (int i : keep) kept.push_back(grid[size_t(i)]);
    grid = std::move(kept);
  }
  auto tokens = build_encoder_tokens(fm, k4, grid, cfg.fourier);

  auto latent = encode_condition(tokens.features, net, rng, training);
  auto z = sample_latent(latent, rng);

  int height = view.intrinsics.height, width = view.intrinsics.width;
  auto queries = strided_queries(height, width, cfg.query_stride, rng);
  auto query_tokens = tokens_to_tensor<T>(geometric_embeddings(view.intrinsics, queries, cfg.fourier));

  out.pred = decode_depth(z, query_tokens, net, rng, training);
  out.latent = latent;
  out.sample_view = std::move(view);
  out.query_pixels = std::move(queries);
  out.grid_w = (width + cfg.query_stride - 1) / cfg.query_stride;
  out.grid_h = (height + cfg.query_stride - 1) / cfg.query_stride;
  out.k_grid = strided_intrinsics(out.sample_view.intrinsics, int(out.query_pixels[0].u),
                                  int(out.query_pixels[0].v), cfg.query_stride, out.grid_w,
                                  out.grid_h);
  return out;
}

// --- multi-sample inference ---------------------------------------------------------

// Per-query mean and standard deviation, in meters.
struct UncertaintyMap {
  int width = 0, height = 0;
  std::vector<double> mean;
  std::vector<double> sigma;

  size_t index(int x, int y) const { return size_t(y) * width + x; }
};

// Conditions once, draws `n_samples` latents from the same conditioned state,
// decodes each at every pixel, and reduces to a per-pixel mean and population
// standard deviation.
template <typename T>
UncertaintyMap predict_with_uncertainty(const Image& image, const PinholeIntrinsics& k,
                                        int n_samples, const DepthNetworkParams<T>& net,
                                        const ConvEncoderParams<T>& enc, const FourierConfig& fourier,
                                        RngStream& rng) {
  if (n_samples < 1) throw std::invalid_argument("predict_with_uncertainty: need n_samples >= 1");
  auto fm = image_encoder(image_to_tensor<T>(image), enc);
  int h4 = fm.size(0), w4 = fm.size(1);
  PinholeIntrinsics k4 = rescale_intrinsics(k, double(w4) / k.width, double(h4) / k.height);
  k4.width = w4;
  k4.height = h4;
  auto tokens = build_encoder_tokens(fm, k4, full_grid_pixels(h4, w4), fourier);
  auto latent = encode_condition(tokens.features, net, rng, /*training=*/false);

  auto queries = tokens_to_tensor<T>(
      geometric_embeddings(k, full_grid_pixels(k.height, k.width), fourier));
  size_t m = size_t(k.width) * k.height;

  UncertaintyMap out;
  out.width = k.width;
  out.height = k.height;
  out.mean.assign(m, 0.0);
  out.sigma.assign(m, 0.0);
  std::vector<std::vector<double>> draws;
  draws.reserve(size_t(n_samples));
  for (int n = 0; n < n_samples; ++n) {
    auto z = sample_latent(latent, rng);
    auto pred = decode_depth(z, queries, net, rng, /*training=*/false);
    std::vector<double> d(m);
    for (size_t i = 0; i < m; ++i) d[i] = double(pred.values()[i]);
    for (size_t i = 0; i < m; ++i) out.mean[i] += d[i];
    draws.push_back(std::move(d));
  }
  for (size_t i = 0; i < m; ++i) out.mean[i] /= n_samples;
  for (const auto& d : draws)
    for (size_t i = 0; i < m; ++i) {
      double c = d[i] - out.mean[i];
      out.sigma[i] += c * c;
    }
  for (size_t i = 0; i < m; ++i) out.sigma[i] = std::sqrt(out.sigma[i] / n_samples);
  return out;
}

}  // namespace raydepth
