#pragma once

#include <cstddef>
#include <vector>

#include "talnet/numerics/ops.hpp"

namespace talnet {

/// Stride-1 2-D convolution over (N, C, H, W) with square kernels and zero
/// padding. Lowered to im2col + one GEMM for the whole batch.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t pad) {
  detail::require_rank("conv2d", x, 4);
  detail::require_rank("conv2d", weight, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oc = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) throw ShapeError("conv2d", x.shape(), weight.shape());
  if (bias.size() != oc) throw ShapeError("conv2d", weight.shape(), bias.shape());
  if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d", x.shape(), weight.shape());
  const std::size_t oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
  const std::size_t plane = oh * ow, rows = c * k * k, cols = n * plane;

  Buffer<T> col(rows * cols, T(0));
  const auto in = x.data();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((ci * k + ky) * k + kx) * cols;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - static_cast<std::ptrdiff_t>(pad);
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[b * plane + y * ow + xx] = in[((b * c + ci) * h + sy) * w + sx];
            }
          }
      }

  RowMatrix<T> prod(oc, cols);
  prod.noalias() = ConstMatrixMap<T>(weight.data().data(), oc, rows) * ConstMatrixMap<T>(col.data(), rows, cols);
  Buffer<T> out(n * oc * plane);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o) {
      const T bo = bias[o];
      const T* src = prod.data() + o * cols + b * plane;
      T* dst = out.data() + (b * oc + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bo;
    }

  return Tensor<T>::make_result(
      {n, oc, oh, ow}, std::move(out), "conv2d", {x, weight, bias},
      [=, col = std::move(col)](Node<T>& self) {
        RowMatrix<T> dout(oc, cols);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < oc; ++o)
            std::copy_n(self.grad.data() + (b * oc + o) * plane, plane, dout.data() + o * cols + b * plane);
        if (T* g = grad_target(self, 1))
          MatrixMap<T>(g, oc, rows).noalias() += dout * ConstMatrixMap<T>(col.data(), rows, cols).transpose();
        if (T* g = grad_target(self, 2))
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(g, oc) += dout.rowwise().sum();
        if (T* g = grad_target(self, 0)) {
          RowMatrix<T> dcol(rows, cols);
          dcol.noalias() = ConstMatrixMap<T>(self.parents[1]->data.data(), oc, rows).transpose() * dout;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* src = dcol.data() + ((ci * k + ky) * k + kx) * cols;
                for (std::size_t b = 0; b < n; ++b)
                  for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                      const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - static_cast<std::ptrdiff_t>(pad);
                      if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                      g[((b * c + ci) * h + sy) * w + sx] += src[b * plane + y * ow + xx];
                    }
                  }
              }
        }
      });
}

/// Non-overlapping mean pooling with a (kh, kw) window over (N, C, H, W).
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kh, std::size_t kw) {
  detail::require_rank("avg_pool2d", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0)
    throw ShapeError("avg_pool2d", "window " + std::to_string(kh) + "x" + std::to_string(kw) +
                                       " does not tile " + to_string(x.shape()));
  const std::size_t oh = h / kh, ow = w / kw;
  const T norm = T(1) / static_cast<T>(kh * kw);
  Buffer<T> out(n * c * oh * ow, T(0));
  const auto in = x.data();
  for (std::size_t m = 0; m < n * c; ++m)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[(m * oh + y / kh) * ow + xx / kw] += in[(m * h + y) * w + xx] * norm;
  return Tensor<T>::make_result({n, c, oh, ow}, std::move(out), "avg_pool2d", {x}, [=](Node<T>& self) {
    T* g = grad_target(self, 0);
    if (!g) return;
    for (std::size_t m = 0; m < n * c; ++m)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) g[(m * h + y) * w + xx] += self.grad[(m * oh + y / kh) * ow + xx / kw] * norm;
  });
}

/// Adaptive mean pooling to a fixed (oh, ow) grid; input extents must be
/// multiples of the target.
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  detail::require_rank("adaptive_avg_pool2d", x, 4);
  if (oh == 0 || ow == 0 || x.dim(2) % oh != 0 || x.dim(3) % ow != 0)
    throw ShapeError("adaptive_avg_pool2d", "target " + std::to_string(oh) + "x" + std::to_string(ow) +
                                                " does not divide " + to_string(x.shape()));
  return avg_pool2d(x, x.dim(2) / oh, x.dim(3) / ow);
}

}  // namespace talnet
