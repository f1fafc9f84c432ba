#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "talnet/numerics/tensor.hpp"

namespace talnet {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank)
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
}

// y = f(x); backward multiplies by dfdx(x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D dfdx) {
  Buffer<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor<T>::make_result(x.shape(), std::move(out), name, {x}, [dfdx](Node<T>& self) {
    T* gx = grad_target(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * dfdx(xin[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a, b);
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "add", {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* g = grad_target(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a, b);
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node<T>& self) {
    if (T* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("mul", a, b);
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (T* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("div", a, b);
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "div", {a, b}, [](Node<T>& self) {
    const auto& bv = self.parents[1]->data;
    if (T* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / bv[i];
    if (T* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.data[i] / bv[i];
  });
}

/// alpha * x + beta
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T alpha, T beta) {
  return detail::unary(
      x, "affine", [=](T v) { return alpha * v + beta; }, [=](T, T) { return alpha; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T alpha) {
  return affine(x, alpha, T(0));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (detail::branch_trace().active)
    for (T v : x.data()) detail::trace_branch(v > T(0));
  return detail::unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(
      x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

/// max(x, lo); zero gradient where clamped.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  if (detail::branch_trace().active)
    for (T v : x.data()) detail::trace_branch(v < lo);
  return detail::unary(
      x, "clamp_min", [=](T v) { return v < lo ? lo : v; }, [=](T v, T) { return v < lo ? T(0) : T(1); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return Tensor<T>::make_result({1}, {acc}, "sum", {x}, [](Node<T>& self) {
    if (T* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis, "sum_axis");
  Buffer<T> out(s.outer * s.inner, T(0));
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += in[(o * s.extent + e) * s.inner + i];
  return Tensor<T>::make_result(detail::drop_axis(x.shape(), axis), std::move(out), "sum_axis", {x},
                                [s](Node<T>& self) {
                                  T* g = grad_target(self, 0);
                                  if (!g) return;
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t e = 0; e < s.extent; ++e)
                                      for (std::size_t i = 0; i < s.inner; ++i)
                                        g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
                                });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const auto extent = x.shape().at(axis);
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(extent));
}

/// Maximum along `axis`; the gradient goes to the first maximizing index.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis, "max_axis");
  Buffer<T> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      T bv = in[o * s.extent * s.inner + i];
      for (std::size_t e = 1; e < s.extent; ++e) {
        const T v = in[(o * s.extent + e) * s.inner + i];
        if (v > bv) bv = v, best = e;
      }
      out[o * s.inner + i] = bv;
      arg[o * s.inner + i] = (o * s.extent + best) * s.inner + i;
      detail::trace_branch(best);
    }
  return Tensor<T>::make_result(detail::drop_axis(x.shape(), axis), std::move(out), "max_axis", {x},
                                [arg = std::move(arg)](Node<T>& self) {
                                  if (T* g = grad_target(self, 0))
                                    for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
                                });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_at(x.shape(), axis, "softmax");
  Buffer<T> out(x.size());
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      T total = T(0);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(in[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  return Tensor<T>::make_result(x.shape(), std::move(out), "softmax", {x}, [s](Node<T>& self) {
    T* g = grad_target(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T dot = T(0);
        for (std::size_t e = 0; e < s.extent; ++e) dot += self.grad[base + e * s.inner] * self.data[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          g[k] += self.data[k] * (self.grad[k] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul", a.shape(), b.shape());
  Buffer<T> out(m * n);
  MatrixMap<T>(out.data(), m, n).noalias() = ConstMatrixMap<T>(a.data().data(), m, k) * ConstMatrixMap<T>(b.data().data(), k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node<T>& self) {
    ConstMatrixMap<T> dc(self.grad.data(), m, n);
    if (T* g = grad_target(self, 0))
      MatrixMap<T>(g, m, k).noalias() += dc * ConstMatrixMap<T>(self.parents[1]->data.data(), k, n).transpose();
    if (T* g = grad_target(self, 1))
      MatrixMap<T>(g, k, n).noalias() += ConstMatrixMap<T>(self.parents[0]->data.data(), m, k).transpose() * dc;
  });
}

/// x (rows, in) times weight (out, in) transposed, plus bias (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank("linear", x, 2);
  detail::require_rank("linear", weight, 2);
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) throw ShapeError("linear", x.shape(), weight.shape());
  if (bias.size() != out_dim) throw ShapeError("linear", weight.shape(), bias.shape());
  Buffer<T> out(rows * out_dim);
  MatrixMap<T> y(out.data(), rows, out_dim);
  y.noalias() = ConstMatrixMap<T>(x.data().data(), rows, in) * ConstMatrixMap<T>(weight.data().data(), out_dim, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);
  return Tensor<T>::make_result({rows, out_dim}, std::move(out), "linear", {x, weight, bias},
                                [rows, in, out_dim](Node<T>& self) {
                                  ConstMatrixMap<T> dy(self.grad.data(), rows, out_dim);
                                  if (T* g = grad_target(self, 0))
                                    MatrixMap<T>(g, rows, in).noalias() +=
                                        dy * ConstMatrixMap<T>(self.parents[1]->data.data(), out_dim, in);
                                  if (T* g = grad_target(self, 1))
                                    MatrixMap<T>(g, out_dim, in).noalias() +=
                                        dy.transpose() * ConstMatrixMap<T>(self.parents[0]->data.data(), rows, in);
                                  if (T* g = grad_target(self, 2))
                                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g, out_dim) += dy.colwise().sum();
                                });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  return Tensor<T>::make_result(std::move(shape), Buffer<T>(x.data().begin(), x.data().end()), "reshape", {x}, [](Node<T>& self) {
    if (T* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  Shape out_shape = ref;
  out_shape.at(axis) = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat", ref, p.shape());
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i]) throw ShapeError("concat", ref, p.shape());
    extents.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  const auto s = detail::split_at(out_shape, axis, "concat");
  Buffer<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    const std::size_t chunk = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(in.begin() + o * chunk, chunk, out.begin() + o * s.extent * s.inner + offset * s.inner);
    offset += extents[k];
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), "concat", parts,
                                [s, extents = std::move(extents)](Node<T>& self) {
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < extents.size(); ++k) {
                                    const std::size_t chunk = extents[k] * s.inner;
                                    if (T* g = grad_target(self, k))
                                      for (std::size_t o = 0; o < s.outer; ++o) {
                                        const T* src = self.grad.data() + o * s.extent * s.inner + offset * s.inner;
                                        for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                                      }
                                    offset += extents[k];
                                  }
                                });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto s = detail::split_at(x.shape(), axis, "slice");
  if (length == 0 || start + length > s.extent)
    throw ShapeError("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                  ") outside axis of " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Buffer<T> out(s.outer * length * s.inner);
  const auto in = x.data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(in.begin() + (o * s.extent + start) * s.inner, chunk, out.begin() + o * chunk);
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), "slice", {x},
                                [s, start, chunk](Node<T>& self) {
                                  T* g = grad_target(self, 0);
                                  if (!g) return;
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t i = 0; i < chunk; ++i)
                                      g[(o * s.extent + start) * s.inner + i] += self.grad[o * chunk + i];
                                });
}

/// Index `index` of `axis`, with that axis removed.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  return reshape(slice(x, axis, index, 1), detail::drop_axis(x.shape(), axis));
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  std::vector<Tensor<T>> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (axis > s.size()) throw ShapeError("stack", "axis out of range for " + to_string(s));
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, axis);
}

/// Inserts a new axis of extent `n` at `axis`, repeating the input along it.
template <typename T>
Tensor<T> expand(const Tensor<T>& x, std::size_t axis, std::size_t n) {
  Shape out_shape = x.shape();
  if (axis > out_shape.size()) throw ShapeError("expand", "axis out of range for " + to_string(out_shape));
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis; i < x.rank(); ++i) inner *= x.dim(i);
  Buffer<T> out(outer * n * inner);
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < n; ++r) std::copy_n(in.begin() + o * inner, inner, out.begin() + (o * n + r) * inner);
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), "expand", {x},
                                [outer, n, inner](Node<T>& self) {
                                  T* g = grad_target(self, 0);
                                  if (!g) return;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t r = 0; r < n; ++r)
                                      for (std::size_t i = 0; i < inner; ++i)
                                        g[o * inner + i] += self.grad[(o * n + r) * inner + i];
                                });
}

/// Multiplies every row x[b, ...] by the scalar s[b].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  const std::size_t rows = x.dim(0);
  if (s.size() != rows) throw ShapeError("scale_rows", x.shape(), s.shape());
  const std::size_t width = x.size() / rows;
  Buffer<T> out(x.size());
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t i = 0; i < width; ++i) out[b * width + i] = x[b * width + i] * s[b];
  return Tensor<T>::make_result(x.shape(), std::move(out), "scale_rows", {x, s}, [rows, width](Node<T>& self) {
    const auto& xv = self.parents[0]->data;
    const auto& sv = self.parents[1]->data;
    if (T* g = grad_target(self, 0))
      for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t i = 0; i < width; ++i) g[b * width + i] += self.grad[b * width + i] * sv[b];
    if (T* g = grad_target(self, 1))
      for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t i = 0; i < width; ++i) g[b] += self.grad[b * width + i] * xv[b * width + i];
  });
}

/// Flat-index gather: out[k] = x.flat[indices[k]]. Index extraction itself is
/// not differentiated.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::size_t> indices) {
  Buffer<T> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= x.size()) throw ShapeError("gather", "index " + std::to_string(indices[k]) + " outside " + to_string(x.shape()));
    out[k] = x[indices[k]];
  }
  const std::size_t n = std::max<std::size_t>(indices.size(), 1);
  if (indices.empty()) out.push_back(T(0));
  return Tensor<T>::make_result({n}, std::move(out), "gather", {x}, [idx = std::move(indices)](Node<T>& self) {
    if (T* g = grad_target(self, 0))
      for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += self.grad[k];
  });
}

/// D[i][j] = sum_k (x[i,k] - x[j,k])^2 for a (rows, dim) matrix.
template <typename T>
Tensor<T> pairwise_sq_dist(const Tensor<T>& x) {
  detail::require_rank("pairwise_sq_dist", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  Buffer<T> out(n * n, T(0));
  const auto v = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = v[i * d + k] - v[j * d + k];
        acc += diff * diff;
      }
      out[i * n + j] = acc;
    }
  return Tensor<T>::make_result({n, n}, std::move(out), "pairwise_sq_dist", {x}, [n, d](Node<T>& self) {
    T* g = grad_target(self, 0);
    if (!g) return;
    const auto& v = self.parents[0]->data;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T gij = self.grad[i * n + j];
        if (gij == T(0)) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = T(2) * gij * (v[i * d + k] - v[j * d + k]);
          g[i * d + k] += diff;
          g[j * d + k] -= diff;
        }
      }
  });
}

/// Reorders axes: output axis i is input axis `axes[i]`.
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute", "axis list does not match " + to_string(x.shape()));
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw ShapeError("permute", "invalid axis permutation for " + to_string(x.shape()));
    used[a] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_stride(r, 1), out_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * x.dim(i + 1);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  for (std::size_t i = r - 1; i-- > 0;) out_stride[i] = out_stride[i + 1] * out_shape[i + 1];
  // src[k] = flat input index of output element k
  std::vector<std::size_t> src(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t k = 0; k < src.size(); ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[axes[i]];
    src[k] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Buffer<T> out(x.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[src[k]];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), "permute", {x}, [src = std::move(src)](Node<T>& self) {
    if (T* g = grad_target(self, 0))
      for (std::size_t k = 0; k < src.size(); ++k) g[src[k]] += self.grad[k];
  });
}

/// a (m, k) times b (n, k) transposed.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul_nt", a, 2);
  detail::require_rank("matmul_nt", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeError("matmul_nt", a.shape(), b.shape());
  Buffer<T> out(m * n);
  MatrixMap<T>(out.data(), m, n).noalias() =
      ConstMatrixMap<T>(a.data().data(), m, k) * ConstMatrixMap<T>(b.data().data(), n, k).transpose();
  return Tensor<T>::make_result({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](Node<T>& self) {
    ConstMatrixMap<T> dc(self.grad.data(), m, n);
    if (T* g = grad_target(self, 0))
      MatrixMap<T>(g, m, k).noalias() += dc * ConstMatrixMap<T>(self.parents[1]->data.data(), n, k);
    if (T* g = grad_target(self, 1))
      MatrixMap<T>(g, n, k).noalias() += dc.transpose() * ConstMatrixMap<T>(self.parents[0]->data.data(), m, k);
  });
}

}  // namespace talnet
