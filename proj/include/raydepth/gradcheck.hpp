#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "raydepth/tensor.hpp"

namespace raydepth {

// Verifies reverse-mode gradients against central differences. `f` must
// rebuild its graph from the given leaf tensors on every call; the numeric
// side only ever evaluates forward values, so it is independent of the
// backward implementation it checks. Returns the max relative error
// |a - n| / max(|a|, |n|, 1e-8) over all coordinates of all inputs.
template <typename T>
double grad_check(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, double eps = 1e-5) {
  for (auto& in : inputs) in.zero_grad();
  Tensor<T> loss = f(inputs);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.grad());

  double worst = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    auto& vals = inputs[t].raw_values();
    for (size_t i = 0; i < vals.size(); ++i) {
      T saved = vals[i];
      vals[i] = saved + T(eps);
      double f_plus = double(f(inputs).value());
      vals[i] = saved - T(eps);
      double f_minus = double(f(inputs).value());
      vals[i] = saved;
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double a = double(analytic[t][i]);
      double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace raydepth
