#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "raydepth/rng.hpp"

namespace raydepth {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= size_t(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

[[noreturn]] inline void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

// Dense multi-dimensional array with reverse-mode gradient propagation.
// Forward values are computed eagerly; backward() walks the recorded graph.
// A Tensor is a cheap shared handle onto a graph node.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same extent as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void()> backward_fn;
    const char* op = "leaf";

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape) { return from_values(std::move(shape), {}, false); }

  static Tensor constant(Shape shape, T fill) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.n_->value.begin(), t.n_->value.end(), fill);
    return t;
  }

  static Tensor scalar(T v) { return constant({1}, v); }

  static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    size_t count = shape_numel(n->shape);
    if (values.empty()) values.assign(count, T(0));
    if (values.size() != count) shape_error("from_values", "value count does not match shape " + shape_str(n->shape));
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

  static Tensor parameter(Shape shape, std::vector<T> values) {
    return from_values(std::move(shape), std::move(values), true);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return int(n_->shape.size()); }
  int size(int axis) const { return n_->shape[size_t(axis)]; }
  size_t numel() const { return n_->value.size(); }
  bool requires_grad() const { return n_->requires_grad; }
  const char* op_name() const { return n_->op; }

  const std::vector<T>& values() const { return n_->value; }
  std::vector<T>& raw_values() { return n_->value; }  // for optimizer updates on leaves

  T value() const {
    if (numel() != 1) shape_error("value", "tensor is not scalar, shape " + shape_str(shape()));
    return n_->value[0];
  }

  const std::vector<T>& grad() const {
    const_cast<Node*>(n_.get())->ensure_grad();
    return n_->grad;
  }
  std::vector<T>& raw_grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

  Node* node() const { return n_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return n_; }

  // Reverse-mode sweep from a scalar.
  void backward() const {
    if (numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (!n_->requires_grad) return;

    // Reverse post-order: every node is visited before its inputs.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({n_.get(), 0});
    visited.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child->requires_grad && !visited.count(child)) {
          visited.insert(child);
          stack.push_back({child, 0});
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (Node* node : order) node->ensure_grad();
    n_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn();
  }

  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <typename T>
std::shared_ptr<typename Tensor<T>::Node> new_node(const char* op, Shape shape,
                                                   std::vector<Tensor<T>> inputs) {
  auto n = std::make_shared<typename Tensor<T>::Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value.assign(shape_numel(n->shape), T(0));
  for (auto& in : inputs) {
    n->requires_grad = n->requires_grad || in.requires_grad();
    n->inputs.push_back(in.node_ptr());
  }
  return n;
}

}  // namespace detail

// ---- elementwise binary ---------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  if (a.shape() != b.shape())
    shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = detail::new_node<T>(op, a.shape(), {a, b});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = fwd(av[i], bv[i]);
  if (n->requires_grad) {
    auto* node = n.get();
    auto* an = a.node();
    auto* bn = b.node();
    n->backward_fn = [node, an, bn, bwd]() {
      for (size_t i = 0; i < node->value.size(); ++i) {
        T da, db;
        bwd(an->value[i], bn->value[i], node->value[i], node->grad[i], da, db);
        if (an->requires_grad) an->grad[i] += da;
        if (bn->requires_grad) bn->grad[i] += db;
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise_binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T, T g, T& da, T& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

// ---- elementwise unary ------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise_unary(const char* op, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  auto n = detail::new_node<T>(op, a.shape(), {a});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = fwd(av[i]);
  if (n->requires_grad) {
    auto* node = n.get();
    auto* an = a.node();
    n->backward_fn = [node, an, bwd]() {
      for (size_t i = 0; i < node->value.size(); ++i)
        an->grad[i] += bwd(an->value[i], node->value[i]) * node->grad[i];
    };
  }
  return Tensor<T>::wrap(n);
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T c) {
  return elementwise_unary<T>(
      "scalar_mul", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& a, T c) {
  return elementwise_unary<T>(
      "scalar_add", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return elementwise_unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// GeLU, tanh approximation with fixed constants:
//   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return elementwise_unary<T>(
      "gelu", a,
      [](T x) {
        double xd = double(x);
        return T(0.5 * xd * (1.0 + std::tanh(kC * (xd + kA * xd * xd * xd))));
      },
      [](T x, T) {
        double xd = double(x);
        double u = kC * (xd + kA * xd * xd * xd);
        double th = std::tanh(u);
        double sech2 = 1.0 - th * th;
        return T(0.5 * (1.0 + th) + 0.5 * xd * sech2 * kC * (1.0 + 3.0 * kA * xd * xd));
      });
}

// ---- broadcasting helpers ---------------------------------------------------

// x: [..., D], bias: [D], broadcast over all leading axes.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.ndim() != 1 || x.ndim() < 1 || x.shape().back() != bias.size(0))
    shape_error("add_bias", "bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  auto n = detail::new_node<T>("add_bias", x.shape(), {x, bias});
  size_t d = size_t(bias.size(0));
  size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < d; ++j) n->value[r * d + j] = xv[r * d + j] + bv[j];
  if (n->requires_grad) {
    auto* node = n.get();
    auto* xn = x.node();
    auto* bn = bias.node();
    n->backward_fn = [node, xn, bn, rows, d]() {
      for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < d; ++j) {
          T g = node->grad[r * d + j];
          if (xn->requires_grad) xn->grad[r * d + j] += g;
          if (bn->requires_grad) bn->grad[j] += g;
        }
    };
  }
  return Tensor<T>::wrap(n);
}

// x: [N, C...], s: [N]; out[i, ...] = x[i, ...] * s[i].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.ndim() < 1 || s.ndim() != 1 || x.size(0) != s.size(0))
    shape_error("scale_rows", "scale " + shape_str(s.shape()) + " does not match " + shape_str(x.shape()));
  auto n = detail::new_node<T>("scale_rows", x.shape(), {x, s});
  size_t rows = size_t(x.size(0));
  size_t c = x.numel() / rows;
  const auto& xv = x.values();
  const auto& sv = s.values();
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < c; ++j) n->value[r * c + j] = xv[r * c + j] * sv[r];
  if (n->requires_grad) {
    auto* node = n.get();
    auto* xn = x.node();
    auto* sn = s.node();
    n->backward_fn = [node, xn, sn, rows, c]() {
      for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < c; ++j) {
          T g = node->grad[r * c + j];
          if (xn->requires_grad) xn->grad[r * c + j] += g * sn->value[r];
          if (sn->requires_grad) sn->grad[r] += g * xn->value[r * c + j];
        }
    };
  }
  return Tensor<T>::wrap(n);
}

// ---- matmul -----------------------------------------------------------------

namespace detail {

template <typename T>
void mm(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i) {
    T* crow = c + i * m;
    for (size_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      const T* brow = b + p * m;
      for (size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC * B^T
template <typename T>
void mm_grad_a(const T* dc, const T* b, T* da, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i)
    for (size_t p = 0; p < k; ++p) {
      const T* dcrow = dc + i * m;
      const T* brow = b + p * m;
      T acc = 0;
      for (size_t j = 0; j < m; ++j) acc += dcrow[j] * brow[j];
      da[i * k + p] += acc;
    }
}

// dB += A^T * dC
template <typename T>
void mm_grad_b(const T* a, const T* dc, T* db, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i)
    for (size_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      const T* dcrow = dc + i * m;
      T* dbrow = db + p * m;
      for (size_t j = 0; j < m; ++j) dbrow[j] += av * dcrow[j];
    }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.size(1) != b.size(0))
    shape_error("matmul", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  size_t n = size_t(a.size(0)), k = size_t(a.size(1)), m = size_t(b.size(1));
  auto node = detail::new_node<T>("matmul", {int(n), int(m)}, {a, b});
  detail::mm(a.values().data(), b.values().data(), node->value.data(), n, k, m);
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    auto* bn = b.node();
    node->backward_fn = [self, an, bn, n, k, m]() {
      if (an->requires_grad)
        detail::mm_grad_a(self->grad.data(), bn->value.data(), an->grad.data(), n, k, m);
      if (bn->requires_grad)
        detail::mm_grad_b(an->value.data(), self->grad.data(), bn->grad.data(), n, k, m);
    };
  }
  return Tensor<T>::wrap(node);
}

// Batched matmul over the leading axis: [B,N,K] x [B,K,M] -> [B,N,M].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.size(0) != b.size(0) || a.size(2) != b.size(1))
    shape_error("bmm", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  size_t bs = size_t(a.size(0)), n = size_t(a.size(1)), k = size_t(a.size(2)), m = size_t(b.size(2));
  auto node = detail::new_node<T>("bmm", {int(bs), int(n), int(m)}, {a, b});
  for (size_t i = 0; i < bs; ++i)
    detail::mm(a.values().data() + i * n * k, b.values().data() + i * k * m,
               node->value.data() + i * n * m, n, k, m);
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    auto* bn = b.node();
    node->backward_fn = [self, an, bn, bs, n, k, m]() {
      for (size_t i = 0; i < bs; ++i) {
        if (an->requires_grad)
          detail::mm_grad_a(self->grad.data() + i * n * m, bn->value.data() + i * k * m,
                            an->grad.data() + i * n * k, n, k, m);
        if (bn->requires_grad)
          detail::mm_grad_b(an->value.data() + i * n * k, self->grad.data() + i * n * m,
                            bn->grad.data() + i * k * m, n, k, m);
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// ---- layout -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_error("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto node = detail::new_node<T>("reshape", std::move(shape), {a});
  node->value = a.values();
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an]() {
      for (size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += self->grad[i];
    };
  }
  return Tensor<T>::wrap(node);
}

namespace detail {

inline std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (int i = int(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * size_t(s[i + 1]);
  return st;
}

}  // namespace detail

// Swap two axes (general rank).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int ax0, int ax1) {
  if (ax0 < 0 || ax1 < 0 || ax0 >= a.ndim() || ax1 >= a.ndim())
    shape_error("transpose", "axis out of range for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  std::swap(out_shape[size_t(ax0)], out_shape[size_t(ax1)]);
  auto node = detail::new_node<T>("transpose", out_shape, {a});

  auto in_strides = detail::row_major_strides(a.shape());
  auto out_strides = detail::row_major_strides(out_shape);
  std::vector<size_t> map_strides(out_shape.size());  // out axis -> stride in input
  for (size_t i = 0; i < out_shape.size(); ++i) map_strides[i] = in_strides[i];
  std::swap(map_strides[size_t(ax0)], map_strides[size_t(ax1)]);

  size_t total = a.numel();
  const auto& av = a.values();
  std::vector<size_t> src_index(total);
  for (size_t out = 0; out < total; ++out) {
    size_t rem = out, src = 0;
    for (size_t ax = 0; ax < out_shape.size(); ++ax) {
      size_t coord = rem / out_strides[ax];
      rem %= out_strides[ax];
      src += coord * map_strides[ax];
    }
    node->value[out] = av[src];
    src_index[out] = src;
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an, src_index = std::move(src_index)]() {
      for (size_t out = 0; out < self->grad.size(); ++out) an->grad[src_index[out]] += self->grad[out];
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const Shape& base = parts[0].shape();
  if (axis < 0 || axis >= int(base.size())) shape_error("concat", "axis out of range");
  Shape out_shape = base;
  int axis_total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != int(base.size())) shape_error("concat", "rank mismatch");
    for (int ax = 0; ax < p.ndim(); ++ax)
      if (ax != axis && p.size(ax) != base[size_t(ax)])
        shape_error("concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(base));
    axis_total += p.size(axis);
  }
  out_shape[size_t(axis)] = axis_total;
  auto node = detail::new_node<T>("concat", out_shape, parts);

  size_t outer = 1;
  for (int ax = 0; ax < axis; ++ax) outer *= size_t(base[size_t(ax)]);
  size_t tail = 1;
  for (size_t ax = size_t(axis) + 1; ax < base.size(); ++ax) tail *= size_t(base[ax]);
  size_t out_block = size_t(axis_total) * tail;

  std::vector<size_t> offsets(parts.size());
  {
    size_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      offsets[pi] = off;
      off += size_t(parts[pi].size(axis)) * tail;
    }
  }
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    size_t block = size_t(parts[pi].size(axis)) * tail;
    const auto& pv = parts[pi].values();
    for (size_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * block, pv.begin() + (o + 1) * block,
                node->value.begin() + o * out_block + offsets[pi]);
  }
  if (node->requires_grad) {
    auto* self = node.get();
    std::vector<typename Tensor<T>::Node*> input_nodes;
    std::vector<size_t> blocks;
    for (const auto& p : parts) {
      input_nodes.push_back(p.node());
      blocks.push_back(size_t(p.size(axis)) * tail);
    }
    node->backward_fn = [self, input_nodes, blocks, offsets, outer, out_block]() {
      for (size_t pi = 0; pi < input_nodes.size(); ++pi) {
        if (!input_nodes[pi]->requires_grad) continue;
        for (size_t o = 0; o < outer; ++o) {
          const T* g = self->grad.data() + o * out_block + offsets[pi];
          T* dst = input_nodes[pi]->grad.data() + o * blocks[pi];
          for (size_t j = 0; j < blocks[pi]; ++j) dst[j] += g[j];
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// Slice along the last axis: out[..., j] = x[..., start + j].
template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, int start, int len) {
  int d = a.shape().back();
  if (start < 0 || len <= 0 || start + len > d)
    shape_error("slice_last", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                  ") out of " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape.back() = len;
  auto node = detail::new_node<T>("slice_last", out_shape, {a});
  size_t rows = a.numel() / size_t(d);
  const auto& av = a.values();
  for (size_t r = 0; r < rows; ++r)
    std::copy(av.begin() + r * d + start, av.begin() + r * d + start + len,
              node->value.begin() + r * size_t(len));
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an, rows, d, start, len]() {
      for (size_t r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j) an->grad[r * size_t(d) + size_t(start + j)] += self->grad[r * size_t(len) + size_t(j)];
    };
  }
  return Tensor<T>::wrap(node);
}

// Row gather: x [N, C...], indices into the first axis (repeats allowed).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<int> indices) {
  if (a.ndim() < 1) shape_error("gather_rows", "input must have rank >= 1");
  int n = a.size(0);
  for (int i : indices)
    if (i < 0 || i >= n) shape_error("gather_rows", "index " + std::to_string(i) + " out of range");
  Shape out_shape = a.shape();
  out_shape[0] = int(indices.size());
  auto node = detail::new_node<T>("gather_rows", out_shape, {a});
  size_t c = a.numel() / size_t(n);
  const auto& av = a.values();
  for (size_t r = 0; r < indices.size(); ++r)
    std::copy(av.begin() + size_t(indices[r]) * c, av.begin() + (size_t(indices[r]) + 1) * c,
              node->value.begin() + r * c);
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an, indices = std::move(indices), c]() {
      for (size_t r = 0; r < indices.size(); ++r) {
        const T* g = self->grad.data() + r * c;
        T* dst = an->grad.data() + size_t(indices[r]) * c;
        for (size_t j = 0; j < c; ++j) dst[j] += g[j];
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto node = detail::new_node<T>("sum_all", {1}, {a});
  T acc = 0;
  for (T v : a.values()) acc += v;
  node->value[0] = acc;
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an]() {
      T g = self->grad[0];
      for (auto& d : an->grad) d += g;
    };
  }
  return Tensor<T>::wrap(node);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  size_t n = a.numel();
  if (n == 0) shape_error("mean_all", "empty tensor");
  return scalar_mul(sum_all(a), T(1) / T(n));
}

// Sum over the last axis: [..., D] -> [...].
template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
  if (a.ndim() < 1) shape_error("sum_last", "input must have rank >= 1");
  size_t d = size_t(a.shape().back());
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto node = detail::new_node<T>("sum_last", out_shape, {a});
  size_t rows = a.numel() / d;
  const auto& av = a.values();
  for (size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (size_t j = 0; j < d; ++j) acc += av[r * d + j];
    node->value[r] = acc;
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an, rows, d]() {
      for (size_t r = 0; r < rows; ++r) {
        T g = self->grad[r];
        for (size_t j = 0; j < d; ++j) an->grad[r * d + j] += g;
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// ---- normalization ----------------------------------------------------------

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  size_t d = size_t(a.shape().back());
  auto node = detail::new_node<T>("softmax_last", a.shape(), {a});
  size_t rows = a.numel() / d;
  const auto& av = a.values();
  for (size_t r = 0; r < rows; ++r) {
    const T* row = av.data() + r * d;
    T* out = node->value.data() + r * d;
    T mx = row[0];
    for (size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T acc = 0;
    for (size_t j = 0; j < d; ++j) {
      out[j] = std::exp(row[j] - mx);
      acc += out[j];
    }
    for (size_t j = 0; j < d; ++j) out[j] /= acc;
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* an = a.node();
    node->backward_fn = [self, an, rows, d]() {
      for (size_t r = 0; r < rows; ++r) {
        const T* y = self->value.data() + r * d;
        const T* g = self->grad.data() + r * d;
        T dot = 0;
        for (size_t j = 0; j < d; ++j) dot += g[j] * y[j];
        for (size_t j = 0; j < d; ++j) an->grad[r * d + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// Layer normalization over the last axis with learned gain/bias.
template <typename T>
Tensor<T> layer_norm_last(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  size_t d = size_t(x.shape().back());
  if (gain.ndim() != 1 || bias.ndim() != 1 || size_t(gain.size(0)) != d || size_t(bias.size(0)) != d)
    shape_error("layer_norm", "gain/bias must have shape (" + std::to_string(d) + ")");
  auto node = detail::new_node<T>("layer_norm", x.shape(), {x, gain, bias});
  size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<T> inv_std(rows), xhat(x.numel());
  for (size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    for (size_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (size_t j = 0; j < d; ++j) {
      T c = row[j] - mean;
      var += c * c;
    }
    var /= T(d);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (size_t j = 0; j < d; ++j) {
      T xh = (row[j] - mean) * is;
      xhat[r * d + j] = xh;
      node->value[r * d + j] = xh * gv[j] + bv[j];
    }
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* xn = x.node();
    auto* gn = gain.node();
    auto* bn = bias.node();
    node->backward_fn = [self, xn, gn, bn, rows, d, inv_std = std::move(inv_std),
                         xhat = std::move(xhat)]() {
      for (size_t r = 0; r < rows; ++r) {
        const T* g = self->grad.data() + r * d;
        const T* xh = xhat.data() + r * d;
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (size_t j = 0; j < d; ++j) {
          T dxh = g[j] * gn->value[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xh[j];
          if (gn->requires_grad) gn->grad[j] += g[j] * xh[j];
          if (bn->requires_grad) bn->grad[j] += g[j];
        }
        if (xn->requires_grad) {
          T inv_d = T(1) / T(d);
          for (size_t j = 0; j < d; ++j) {
            T dxh = g[j] * gn->value[j];
            xn->grad[r * d + j] +=
                inv_std[r] * (dxh - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
          }
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// ---- dropout ----------------------------------------------------------------

// Inverted dropout. Identity when not training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, RngStream& rng, bool training) {
  if (rate < 0 || rate >= 1) shape_error("dropout", "rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  auto node = detail::new_node<T>("dropout", x.shape(), {x});
  std::vector<T> mask(x.numel());
  T keep_scale = T(1.0 / (1.0 - rate));
  const auto& xv = x.values();
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
    node->value[i] = xv[i] * mask[i];
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* xn = x.node();
    node->backward_fn = [self, xn, mask = std::move(mask)]() {
      for (size_t i = 0; i < mask.size(); ++i) xn->grad[i] += self->grad[i] * mask[i];
    };
  }
  return Tensor<T>::wrap(node);
}

// ---- convolution and interpolation -------------------------------------------

// 2D convolution, HWC layout. x: [H,W,Cin], w: [KH,KW,Cin,Cout], b: [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4 || b.ndim() != 1)
    shape_error("conv2d", "expected x[H,W,Cin], w[KH,KW,Cin,Cout], b[Cout]");
  int h = x.size(0), wd = x.size(1), cin = x.size(2);
  int kh = w.size(0), kw = w.size(1), cout = w.size(3);
  if (w.size(2) != cin || b.size(0) != cout)
    shape_error("conv2d", "channel mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  if (stride < 1) shape_error("conv2d", "stride must be >= 1");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1) shape_error("conv2d", "output would be empty");
  auto node = detail::new_node<T>("conv2d", {oh, ow, cout}, {x, w, b});
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = b.values().data();
  T* out = node->value.data();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      T* orow = out + (size_t(oy) * ow + ox) * cout;
      for (int co = 0; co < cout; ++co) orow[co] = bv[co];
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= wd) continue;
          const T* xpix = xv + (size_t(iy) * wd + ix) * cin;
          const T* wpix = wv + (size_t(ky) * kw + kx) * size_t(cin) * cout;
          for (int ci = 0; ci < cin; ++ci) {
            T xval = xpix[ci];
            const T* wrow = wpix + size_t(ci) * cout;
            for (int co = 0; co < cout; ++co) orow[co] += xval * wrow[co];
          }
        }
      }
    }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* xn = x.node();
    auto* wn = w.node();
    auto* bn = b.node();
    node->backward_fn = [self, xn, wn, bn, h, wd, cin, kh, kw, cout, oh, ow, stride, pad]() {
      const T* g = self->grad.data();
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const T* grow = g + (size_t(oy) * ow + ox) * cout;
          if (bn->requires_grad)
            for (int co = 0; co < cout; ++co) bn->grad[size_t(co)] += grow[co];
          for (int ky = 0; ky < kh; ++ky) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              size_t xoff = (size_t(iy) * wd + ix) * cin;
              size_t woff = (size_t(ky) * kw + kx) * size_t(cin) * cout;
              for (int ci = 0; ci < cin; ++ci) {
                const T* wrow = wn->value.data() + woff + size_t(ci) * cout;
                T xval = xn->value[xoff + size_t(ci)];
                T dx = 0;
                for (int co = 0; co < cout; ++co) {
                  dx += grow[co] * wrow[co];
                  if (wn->requires_grad) wn->grad[woff + size_t(ci) * cout + size_t(co)] += grow[co] * xval;
                }
                if (xn->requires_grad) xn->grad[xoff + size_t(ci)] += dx;
              }
            }
          }
        }
    };
  }
  return Tensor<T>::wrap(node);
}

namespace detail {

struct BilinearTap {
  size_t i00, i01, i10, i11;
  double w00, w01, w10, w11;
};

inline BilinearTap bilinear_tap(double u, double v, int w, int h) {
  u = std::min(std::max(u, 0.0), double(w - 1));
  v = std::min(std::max(v, 0.0), double(h - 1));
  int x0 = int(std::floor(u)), y0 = int(std::floor(v));
  x0 = std::min(x0, w - 1);
  y0 = std::min(y0, h - 1);
  int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  double fu = u - x0, fv = v - y0;
  BilinearTap t;
  t.i00 = size_t(y0) * w + x0;
  t.i01 = size_t(y0) * w + x1;
  t.i10 = size_t(y1) * w + x0;
  t.i11 = size_t(y1) * w + x1;
  t.w00 = (1 - fu) * (1 - fv);
  t.w01 = fu * (1 - fv);
  t.w10 = (1 - fu) * fv;
  t.w11 = fu * fv;
  return t;
}

}  // namespace detail

// Bilinear resize of an HWC map; sample centers follow the half-pixel
// convention src = (dst + 0.5) * in/out - 0.5, edge-clamped.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  if (x.ndim() != 3) shape_error("bilinear_resize", "expected [H,W,C]");
  if (out_h < 1 || out_w < 1) shape_error("bilinear_resize", "output size must be >= 1");
  int h = x.size(0), w = x.size(1), c = x.size(2);
  auto node = detail::new_node<T>("bilinear_resize", {out_h, out_w, c}, {x});
  std::vector<detail::BilinearTap> taps(size_t(out_h) * out_w);
  double sy = double(h) / out_h, sx = double(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox)
      taps[size_t(oy) * out_w + ox] =
          detail::bilinear_tap((ox + 0.5) * sx - 0.5, (oy + 0.5) * sy - 0.5, w, h);
  const T* xv = x.values().data();
  for (size_t p = 0; p < taps.size(); ++p) {
    const auto& t = taps[p];
    T* out = node->value.data() + p * c;
    for (int ch = 0; ch < c; ++ch)
      out[ch] = T(t.w00) * xv[t.i00 * c + ch] + T(t.w01) * xv[t.i01 * c + ch] +
                T(t.w10) * xv[t.i10 * c + ch] + T(t.w11) * xv[t.i11 * c + ch];
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* xn = x.node();
    node->backward_fn = [self, xn, taps = std::move(taps), c]() {
      for (size_t p = 0; p < taps.size(); ++p) {
        const auto& t = taps[p];
        const T* g = self->grad.data() + p * c;
        for (int ch = 0; ch < c; ++ch) {
          xn->grad[t.i00 * c + ch] += T(t.w00) * g[ch];
          xn->grad[t.i01 * c + ch] += T(t.w01) * g[ch];
          xn->grad[t.i10 * c + ch] += T(t.w10) * g[ch];
          xn->grad[t.i11 * c + ch] += T(t.w11) * g[ch];
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// Bilinear sampling of an HWC map at continuous (u, v) positions given in
// cell units (cell centers at integers), edge-clamped. Returns [N, C].
template <typename T>
Tensor<T> bilinear_gather(const Tensor<T>& x, const std::vector<std::pair<double, double>>& uv) {
  if (x.ndim() != 3) shape_error("bilinear_gather", "expected [H,W,C]");
  int h = x.size(0), w = x.size(1), c = x.size(2);
  auto node = detail::new_node<T>("bilinear_gather", {int(uv.size()), c}, {x});
  std::vector<detail::BilinearTap> taps(uv.size());
  for (size_t i = 0; i < uv.size(); ++i) taps[i] = detail::bilinear_tap(uv[i].first, uv[i].second, w, h);
  const T* xv = x.values().data();
  for (size_t i = 0; i < taps.size(); ++i) {
    const auto& t = taps[i];
    T* out = node->value.data() + i * c;
    for (int ch = 0; ch < c; ++ch)
      out[ch] = T(t.w00) * xv[t.i00 * c + ch] + T(t.w01) * xv[t.i01 * c + ch] +
                T(t.w10) * xv[t.i10 * c + ch] + T(t.w11) * xv[t.i11 * c + ch];
  }
  if (node->requires_grad) {
    auto* self = node.get();
    auto* xn = x.node();
    node->backward_fn = [self, xn, taps = std::move(taps), c]() {
      for (size_t i = 0; i < taps.size(); ++i) {
        const auto& t = taps[i];
        const T* g = self->grad.data() + i * c;
        for (int ch = 0; ch < c; ++ch) {
          xn->grad[t.i00 * c + ch] += T(t.w00) * g[ch];
          xn->grad[t.i01 * c + ch] += T(t.w01) * g[ch];
          xn->grad[t.i10 * c + ch] += T(t.w10) * g[ch];
          xn->grad[t.i11 * c + ch] += T(t.w11) * g[ch];
        }
      }
    };
  }
  return Tensor<T>::wrap(node);
}

// ---- robust regression loss ---------------------------------------------------

// Smooth L1 over valid entries, averaged:
//   mean_i { 0.5 d^2 / beta   if |d| <  beta
//            |d| - 0.5 beta   otherwise },  d = pred_i - target_i.
template <typename T>
Tensor<T> smooth_l1_masked(const Tensor<T>& pred, const std::vector<T>& target,
                           const std::vector<std::uint8_t>& valid, T beta) {
  if (pred.numel() != target.size() || pred.numel() != valid.size())
    shape_error("smooth_l1", "pred/target/mask size mismatch");
  if (!(beta > 0)) shape_error("smooth_l1", "beta must be > 0");
  size_t n_valid = 0;
  for (auto v : valid) n_valid += v != 0;
  if (n_valid == 0) throw std::domain_error("smooth_l1: no valid pixels");
  auto node = detail::new_node<T>("smooth_l1", {1}, {pred});
  const auto& pv = pred.values();
  T acc = 0;
  for (size_t i = 0; i < pv.size(); ++i) {
    if (!valid[i]) continue;
    T d = std::abs(pv[i] - target[i]);
    acc += d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta;
  }
  node->value[0] = acc / T(n_valid);
  if (node->requires_grad) {
    auto* self = node.get();
    auto* pn = pred.node();
    node->backward_fn = [self, pn, target, valid, beta, n_valid]() {
      T g = self->grad[0] / T(n_valid);
      for (size_t i = 0; i < pn->value.size(); ++i) {
        if (!valid[i]) continue;
        T d = pn->value[i] - target[i];
        T slope = std::abs(d) < beta ? d / beta : (d > 0 ? T(1) : T(-1));
        pn->grad[i] += g * slope;
      }
    };
  }
  return Tensor<T>::wrap(node);
}

}  // namespace raydepth
