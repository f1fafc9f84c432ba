#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "talnet/numerics/ops.hpp"

namespace talnet {

/// Bilinear sampling of (N, C, H, W) maps at per-sample points.
///
/// `grid` is (N, P, 2) holding (row, col) in pixel-centre coordinates: integer
/// coordinates land exactly on source cells. Points are clamped to the map, and
/// a clamped coordinate receives no gradient. Output is (N, C, P).
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& grid) {
  detail::require_rank("grid_sample", x, 4);
  detail::require_rank("grid_sample", grid, 3);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (grid.dim(0) != n || grid.dim(2) != 2) throw ShapeError("grid_sample", x.shape(), grid.shape());
  const std::size_t points = grid.dim(1);

  struct Tap {
    std::size_t y0, y1, x0, x1;
    T wy, wx;
    bool free_y, free_x;
  };
  std::vector<Tap> taps(n * points);
  const auto gv = grid.data();
  auto locate = [](T v, std::size_t extent, std::size_t& lo, std::size_t& hi, T& frac, bool& free) {
    const T top = static_cast<T>(extent - 1);
    free = v >= T(0) && v <= top;
    const T cv = std::clamp(v, T(0), top);
    lo = static_cast<std::size_t>(std::floor(cv));
    hi = std::min(lo + 1, extent - 1);
    frac = cv - static_cast<T>(lo);
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < points; ++p) {
      Tap& t = taps[b * points + p];
      locate(gv[(b * points + p) * 2], h, t.y0, t.y1, t.wy, t.free_y);
      locate(gv[(b * points + p) * 2 + 1], w, t.x0, t.x1, t.wx, t.free_x);
      detail::trace_branch((t.y0 << 20) ^ (t.x0 << 4) ^ (t.free_y << 1) ^ t.free_x);
    }

  Buffer<T> out(n * c * points);
  const auto in = x.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* m = in.data() + (b * c + ch) * h * w;
      for (std::size_t p = 0; p < points; ++p) {
        const Tap& t = taps[b * points + p];
        out[(b * c + ch) * points + p] = (T(1) - t.wy) * ((T(1) - t.wx) * m[t.y0 * w + t.x0] + t.wx * m[t.y0 * w + t.x1]) +
                                         t.wy * ((T(1) - t.wx) * m[t.y1 * w + t.x0] + t.wx * m[t.y1 * w + t.x1]);
      }
    }

  return Tensor<T>::make_result(
      {n, c, points}, std::move(out), "grid_sample", {x, grid}, [=, taps = std::move(taps)](Node<T>& self) {
        const auto& src = self.parents[0]->data;
        T* gx = grad_target(self, 0);
        T* gg = grad_target(self, 1);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* m = src.data() + (b * c + ch) * h * w;
            for (std::size_t p = 0; p < points; ++p) {
              const Tap& t = taps[b * points + p];
              const T go = self.grad[(b * c + ch) * points + p];
              if (gx) {
                T* gm = gx + (b * c + ch) * h * w;
                gm[t.y0 * w + t.x0] += go * (T(1) - t.wy) * (T(1) - t.wx);
                gm[t.y0 * w + t.x1] += go * (T(1) - t.wy) * t.wx;
                gm[t.y1 * w + t.x0] += go * t.wy * (T(1) - t.wx);
                gm[t.y1 * w + t.x1] += go * t.wy * t.wx;
              }
              if (gg) {
                const T v00 = m[t.y0 * w + t.x0], v01 = m[t.y0 * w + t.x1];
                const T v10 = m[t.y1 * w + t.x0], v11 = m[t.y1 * w + t.x1];
                if (t.free_y && t.y1 != t.y0)
                  gg[(b * points + p) * 2] += go * ((T(1) - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                if (t.free_x && t.x1 != t.x0)
                  gg[(b * points + p) * 2 + 1] += go * ((T(1) - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
              }
            }
          }
      });
}

/// Sampling grid for axis-aligned regions.
///
/// `bounds` is (M, 4) of normalized [top, left, height, width]; the result is
/// the (M, g*g, 2) lattice of cell centres of a g x g subdivision of each
/// region, expressed in pixel-centre coordinates of an (h, w) map.
template <typename T>
Tensor<T> region_grid(const Tensor<T>& bounds, std::size_t g, std::size_t h, std::size_t w) {
  detail::require_rank("region_grid", bounds, 2);
  if (bounds.dim(1) != 4) throw ShapeError("region_grid", "bounds must be (M, 4), got " + to_string(bounds.shape()));
  const std::size_t m = bounds.dim(0), points = g * g;
  const T fh = static_cast<T>(h), fw = static_cast<T>(w);
  auto frac = [g](std::size_t i) { return (static_cast<T>(i) + T(0.5)) / static_cast<T>(g); };
  Buffer<T> out(m * points * 2);
  const auto bv = bounds.data();
  for (std::size_t r = 0; r < m; ++r) {
    const T top = bv[r * 4], left = bv[r * 4 + 1], hh = bv[r * 4 + 2], ww = bv[r * 4 + 3];
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j) {
        out[(r * points + i * g + j) * 2] = (top + frac(i) * hh) * fh - T(0.5);
        out[(r * points + i * g + j) * 2 + 1] = (left + frac(j) * ww) * fw - T(0.5);
      }
  }
  return Tensor<T>::make_result({m, points, 2}, std::move(out), "region_grid", {bounds}, [=](Node<T>& self) {
    T* gb = grad_target(self, 0);
    if (!gb) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j) {
          const T gr = self.grad[(r * points + i * g + j) * 2] * fh;
          const T gc = self.grad[(r * points + i * g + j) * 2 + 1] * fw;
          gb[r * 4] += gr;
          gb[r * 4 + 2] += gr * frac(i);
          gb[r * 4 + 1] += gc;
          gb[r * 4 + 3] += gc * frac(j);
        }
  });
}

}  // namespace talnet
