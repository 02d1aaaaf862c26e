#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "raydepth/geometry.hpp"
#include "raydepth/tensor.hpp"

namespace raydepth {

struct LossWeights {
  double alpha_normal = 0.2;
  double alpha_kl = 0.1;
  double beta = 1.0;  // smooth-L1 threshold, meters

  void validate() const {
    if (alpha_normal < 0 || alpha_kl < 0) throw std::invalid_argument("LossWeights: weights must be >= 0");
    if (!(beta > 0)) throw std::invalid_argument("LossWeights: beta must be > 0");
  }
};

// Mean smooth-L1 between predicted depths and ground truth gathered at the
// same pixels. `valid` masks pixels without ground truth.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const std::vector<T>& target,
                    const std::vector<std::uint8_t>& valid, double beta) {
  return smooth_l1_masked(pred, target, valid, T(beta));
}

// KL divergence of the diagonal-Gaussian latent against a standard normal:
//   -(1 / 2N) sum(1 + s - mu^2 - exp(s)),  s = log sigma^2.
template <typename T>
Tensor<T> kl_loss(const Tensor<T>& mu, const Tensor<T>& log_var) {
  if (mu.shape() != log_var.shape())
    shape_error("kl_loss", "mu " + shape_str(mu.shape()) + " vs log_var " + shape_str(log_var.shape()));
  size_t n = mu.numel();
  auto term = sub(sub(scalar_add(log_var, T(1)), mul(mu, mu)), raydepth::exp(log_var));
  return scalar_mul(sum_all(term), T(-0.5 / double(n)));
}

template <typename T>
struct NormalLossResult {
  Tensor<T> loss;
  size_t pixel_count = 0;  // pixels where both normals were defined
  bool has_normals = false;
};

namespace detail {

template <typename T>
Tensor<T> cross_rows(const Tensor<T>& a, const Tensor<T>& b) {
  auto ax = slice_last(a, 0, 1), ay = slice_last(a, 1, 1), az = slice_last(a, 2, 1);
  auto bx = slice_last(b, 0, 1), by = slice_last(b, 1, 1), bz = slice_last(b, 2, 1);
  auto cx = sub(mul(ay, bz), mul(az, by));
  auto cy = sub(mul(az, bx), mul(ax, bz));
  auto cz = sub(mul(ax, by), mul(ay, bx));
  return concat<T>({cx, cy, cz}, 1);
}

}  // namespace detail

// Cosine-similarity regularization between forward-difference normals of the
// prediction and of dense ground truth, both unprojected through `k`:
//   (1 / 2N) sum(1 - n_hat . n / (|n_hat| |n|)).
// `pred_depth` is a flat [grid_h * grid_w] tensor over the same grid as `gt`.
// Pixels whose ground-truth or predicted normal is undefined are excluded; if
// none remain the loss contributes zero and `has_normals` is false.
template <typename T>
NormalLossResult<T> normal_loss(const Tensor<T>& pred_depth, const DepthMap& gt,
                                const PinholeIntrinsics& k) {
  int gw = gt.width, gh = gt.height;
  if (int(pred_depth.numel()) != gw * gh)
    shape_error("normal_loss", "prediction count does not match the ground-truth grid");

  Mat3 k_inv = k.inverse_matrix();
  std::vector<T> ray_values;
  ray_values.reserve(size_t(gw) * gh * 3);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      Vec3 r = k_inv * Vec3{double(x), double(y), 1.0};
      ray_values.push_back(T(r.x));
      ray_values.push_back(T(r.y));
      ray_values.push_back(T(r.z));
    }
  auto rays = Tensor<T>::from_values({gw * gh, 3}, std::move(ray_values));
  auto points = scale_rows(rays, pred_depth);  // [N, 3] metric points

  // Select pixels where both normals exist. Predicted degeneracy is judged on
  // the eagerly available forward values.
  const auto& pv = points.values();
  auto pred_cross_sq = [&](int i0, int iu, int iv) {
    double ax = double(pv[size_t(iu) * 3] - pv[size_t(i0) * 3]);
    double ay = double(pv[size_t(iu) * 3 + 1] - pv[size_t(i0) * 3 + 1]);
    double az = double(pv[size_t(iu) * 3 + 2] - pv[size_t(i0) * 3 + 2]);
    double bx = double(pv[size_t(iv) * 3] - pv[size_t(i0) * 3]);
    double by = double(pv[size_t(iv) * 3 + 1] - pv[size_t(i0) * 3 + 1]);
    double bz = double(pv[size_t(iv) * 3 + 2] - pv[size_t(i0) * 3 + 2]);
    double cx = ay * bz - az * by, cy = az * bx - ax * bz, cz = ax * by - ay * bx;
    return cx * cx + cy * cy + cz * cz;
  };

  std::vector<int> idx0, idxu, idxv;
  std::vector<T> gt_normals;
  for (int y = 0; y + 1 < gh; ++y)
    for (int x = 0; x + 1 < gw; ++x) {
      auto n_gt = surface_normal(gt, k, x, y);
      if (!n_gt) continue;
      int i0 = y * gw + x, iu = y * gw + x + 1, iv = (y + 1) * gw + x;
      if (pred_cross_sq(i0, iu, iv) < 1e-30) continue;
      idx0.push_back(i0);
      idxu.push_back(iu);
      idxv.push_back(iv);
      gt_normals.push_back(T(n_gt->x));
      gt_normals.push_back(T(n_gt->y));
      gt_normals.push_back(T(n_gt->z));
    }

  NormalLossResult<T> out;
  out.pixel_count = idx0.size();
  if (idx0.empty()) {
    out.loss = Tensor<T>::scalar(T(0));
    out.has_normals = false;
    return out;
  }
  out.has_normals = true;

  auto p0 = gather_rows(points, idx0);
  auto du = sub(gather_rows(points, idxu), p0);
  auto dv = sub(gather_rows(points, idxv), p0);
  auto n_pred = detail::cross_rows(du, dv);
  auto n_gt = Tensor<T>::from_values({int(out.pixel_count), 3}, std::move(gt_normals));

  auto dot = sum_last(mul(n_pred, n_gt));                    // |n_gt| = 1
  auto norm = raydepth::sqrt(sum_last(mul(n_pred, n_pred)));
  auto cosine = div(dot, norm);
  auto penalty = scalar_add(scalar_mul(cosine, T(-1)), T(1));
  out.loss = scalar_mul(sum_all(penalty), T(0.5 / double(out.pixel_count)));
  return out;
}

// L = L_D + alpha_N L_N + alpha_K L_K.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& depth_term, const Tensor<T>& normal_term,
                     const Tensor<T>& kl_term, const LossWeights& w) {
  return add(add(depth_term, scalar_mul(normal_term, T(w.alpha_normal))),
             scalar_mul(kl_term, T(w.alpha_kl)));
}

}  // namespace raydepth
