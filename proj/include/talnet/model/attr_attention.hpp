#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "talnet/numerics/conv.hpp"
#include "talnet/numerics/grid_sample.hpp"
#include "talnet/numerics/parameter.hpp"

namespace talnet {

/// Axis-aligned affine map of the frame onto an attention region:
/// x_s = s_x * x + t_x (rows, extent H), y_s = s_y * y + t_y (columns, extent W).
struct AffineParams {
  double s_x = 1, s_y = 1, t_x = 0, t_y = 0;
};

struct AttentionRegion {
  std::array<std::array<double, 2>, 4> vertices{};  // images of (0,0), (H,0), (0,W), (H,W)
  double top = 0, left = 0, bottom = 1, right = 1;  // normalized by (H, W)
};

inline AttentionRegion region_vertices(const AffineParams& p, double H, double W) {
  AttentionRegion r;
  const std::array<std::array<double, 2>, 4> corners{{{0, 0}, {H, 0}, {0, W}, {H, W}}};
  for (std::size_t i = 0; i < 4; ++i)
    r.vertices[i] = {p.s_x * corners[i][0] + p.t_x, p.s_y * corners[i][1] + p.t_y};
  r.top = r.vertices[0][0] / H;
  r.left = r.vertices[0][1] / W;
  r.bottom = r.vertices[3][0] / H;
  r.right = r.vertices[3][1] / W;
  return r;
}

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Raw head output (s_x, s_y, t_x, t_y) squashed into an in-frame region:
/// s = max(sigmoid(raw_s), min_s), t = sigmoid(raw_t) * extent * (1 - s).
inline AffineParams squash_affine(const std::array<double, 4>& raw, double H, double W, double min_sx = 0,
                                  double min_sy = 0) {
  AffineParams p;
  p.s_x = std::max(logistic(raw[0]), min_sx);
  p.s_y = std::max(logistic(raw[1]), min_sy);
  p.t_x = logistic(raw[2]) * H * (1 - p.s_x);
  p.t_y = logistic(raw[3]) * W * (1 - p.s_y);
  return p;
}

/// Tensor form of squash_affine, in normalized units: raw (M, 4) ->
/// bounds (M, 4) = [top, left, height, width].
template <typename T>
Tensor<T> squash_bounds(const Tensor<T>& raw, T min_h, T min_w) {
  if (raw.rank() != 2 || raw.dim(1) != 4) throw ShapeError("squash_bounds", raw.shape(), Shape{raw.dim(0), 4});
  const auto sh = clamp_min(sigmoid(slice(raw, 1, 0, 1)), min_h);
  const auto sw = clamp_min(sigmoid(slice(raw, 1, 1, 1)), min_w);
  const auto s = concat<T>({sh, sw}, 1);
  const auto t = mul(sigmoid(slice(raw, 1, 2, 2)), affine(s, T(-1), T(1)));
  return concat<T>({t, s}, 1);
}

struct SpatialAttentionConfig {
  std::size_t in_channels = 64;         // Cf of the feature map
  std::size_t map_height = 8, map_width = 4;
  std::size_t primitive_channels = 64;  // 1x1 conv producing T_p
  std::size_t conv1 = 32, conv2 = 16, kernel = 5;
  std::size_t pool_h = 4, pool_w = 2;
  std::size_t fc = 32;
  std::size_t grid = 4;  // g x g samples per region
  std::size_t d_v = 64;
  double region_init_logit = 2.1972245773362196;  // sigmoid = 0.9
  bool enabled = true;  // false: every region is the full frame
};

template <typename T>
struct SpatialAttentionOutput {
  Tensor<T> primitive;              // T_p, (F, P, Hm, Wm)
  std::vector<Tensor<T>> bounds;    // per attribute, (F, 4) [top, left, height, width]
  std::vector<Tensor<T>> features;  // per attribute, v for every frame, (F, d_v)
};

/// Per-attribute affine region prediction on the primitive map and bilinear
/// region pooling into initial attribute features.
template <typename T>
class SpatialAttention {
 public:
  SpatialAttention(const SpatialAttentionConfig& cfg, std::size_t num_attributes, ParameterStore<T>& store,
                   const std::string& prefix = "att.spatial.")
      : cfg_(cfg), n_(num_attributes) {
    if (cfg_.map_height % cfg_.pool_h || cfg_.map_width % cfg_.pool_w)
      throw std::invalid_argument("feature map not divisible by the attention pooling grid");
    const std::size_t p = cfg_.primitive_channels, k = cfg_.kernel;
    wp_ = store.add(prefix + "primitive.W", {p, cfg_.in_channels, 1, 1}, InitSpec::relu_uniform(cfg_.in_channels));
    bp_ = store.add(prefix + "primitive.b", {p}, InitSpec::zeros());
    const double b = cfg_.region_init_logit;
    for (std::size_t a = 0; a < n_; ++a) {
      const std::string h = prefix + "head" + std::to_string(a) + ".";
      Head hd;
      if (cfg_.enabled) {
        hd.w1 = store.add(h + "conv1.W", {cfg_.conv1, p, k, k}, InitSpec::relu_uniform(p * k * k));
        hd.b1 = store.add(h + "conv1.b", {cfg_.conv1}, InitSpec::zeros());
        hd.w2 = store.add(h + "conv2.W", {cfg_.conv2, cfg_.conv1, k, k}, InitSpec::relu_uniform(cfg_.conv1 * k * k));
        hd.b2 = store.add(h + "conv2.b", {cfg_.conv2}, InitSpec::zeros());
        const std::size_t flat = cfg_.conv2 * cfg_.pool_h * cfg_.pool_w;
        hd.w3 = store.add(h + "fc1.W", {cfg_.fc, flat}, InitSpec::relu_uniform(flat));
        hd.b3 = store.add(h + "fc1.b", {cfg_.fc}, InitSpec::zeros());
        hd.w4 = store.add(h + "fc2.W", {4, cfg_.fc}, InitSpec::zeros());
        hd.b4 = store.add(h + "fc2.b", {4}, InitSpec::constant(std::vector<double>{b, b, 0, 0}));
      }
      hd.wv = store.add(h + "proj.W", {cfg_.d_v, p}, InitSpec::unit_uniform(p));
      hd.bv = store.add(h + "proj.b", {cfg_.d_v}, InitSpec::zeros());
      heads_.push_back(hd);
    }
  }

  const SpatialAttentionConfig& config() const { return cfg_; }
  std::size_t num_attributes() const { return n_; }

  Tensor<T> primitive_map(const Tensor<T>& fm) const { return relu(conv2d(fm, wp_, bp_, 0)); }

  /// Raw 4-vector (s_x, s_y, t_x, t_y) per frame, (F, 4).
  Tensor<T> predict_affine(const Tensor<T>& tp, std::size_t attribute) const {
    const Head& h = heads_.at(attribute);
    if (!cfg_.enabled) throw std::logic_error("spatial attention disabled: no affine heads");
    return head_tail(relu(conv2d(tp, h.w1, h.b1, cfg_.kernel / 2)), attribute);
  }

  /// Raw affine outputs of every head. The first convolutions of all heads
  /// run as one stacked convolution.
  std::vector<Tensor<T>> predict_affine_all(const Tensor<T>& tp) const {
    if (!cfg_.enabled) throw std::logic_error("spatial attention disabled: no affine heads");
    std::vector<Tensor<T>> w, b, out;
    for (const auto& h : heads_) {
      w.push_back(h.w1);
      b.push_back(h.b1);
    }
    const auto x = relu(conv2d(tp, concat(w, 0), concat(b, 0), cfg_.kernel / 2));
    for (std::size_t a = 0; a < n_; ++a) out.push_back(head_tail(slice(x, 1, a * cfg_.conv1, cfg_.conv1), a));
    return out;
  }

  /// Normalized region bounds per frame, (F, 4). Extents never fall below
  /// one feature-map cell.
  Tensor<T> region_bounds(const Tensor<T>& tp, std::size_t attribute) const {
    if (!cfg_.enabled) return full_frame(tp.dim(0));
    return squash(tp, predict_affine(tp, attribute));
  }

  /// g x g bilinear samples over each frame's region, averaged, then
  /// projected to d_v. (F, d_v).
  Tensor<T> extract_region_feature(const Tensor<T>& tp, const Tensor<T>& bounds, std::size_t attribute) const {
    const Head& h = heads_.at(attribute);
    const auto grid = region_grid(bounds, cfg_.grid, tp.dim(2), tp.dim(3));
    const auto pooled = mean_axis(grid_sample(tp, grid), 2);
    return linear(pooled, h.wv, h.bv);
  }

  SpatialAttentionOutput<T> forward(const Tensor<T>& fm) const {
    SpatialAttentionOutput<T> out;
    out.primitive = primitive_map(fm);
    std::vector<Tensor<T>> raw;
    if (cfg_.enabled) raw = predict_affine_all(out.primitive);
    for (std::size_t a = 0; a < n_; ++a) {
      out.bounds.push_back(cfg_.enabled ? squash(out.primitive, raw[a]) : full_frame(out.primitive.dim(0)));
      out.features.push_back(extract_region_feature(out.primitive, out.bounds.back(), a));
    }
    return out;
  }

 private:
  struct Head {
    Tensor<T> w1, b1, w2, b2, w3, b3, w4, b4, wv, bv;
  };

  Tensor<T> head_tail(const Tensor<T>& conv1_out, std::size_t attribute) const {
    const Head& h = heads_.at(attribute);
    const std::size_t frames = conv1_out.dim(0);
    auto x = relu(conv2d(conv1_out, h.w2, h.b2, cfg_.kernel / 2));
    x = adaptive_avg_pool2d(x, cfg_.pool_h, cfg_.pool_w);
    x = reshape(x, {frames, cfg_.conv2 * cfg_.pool_h * cfg_.pool_w});
    x = relu(linear(x, h.w3, h.b3));
    return linear(x, h.w4, h.b4);
  }

  static Tensor<T> squash(const Tensor<T>& tp, const Tensor<T>& raw) {
    return squash_bounds(raw, T(1) / static_cast<T>(tp.dim(2)), T(1) / static_cast<T>(tp.dim(3)));
  }

  static Tensor<T> full_frame(std::size_t frames) {
    std::vector<T> v;
    for (std::size_t f = 0; f < frames; ++f) v.insert(v.end(), {T(0), T(0), T(1), T(1)});
    return Tensor<T>({frames, 4}, std::move(v));
  }

  SpatialAttentionConfig cfg_;
  std::size_t n_;
  Tensor<T> wp_, bp_;
  std::vector<Head> heads_;
};

/// Text table of region bounds: one row per (frame, attribute) with the
/// normalized box and its frame-space vertices.
template <typename T>
void write_region_table(std::ostream& os, const std::vector<Tensor<T>>& bounds, const std::vector<std::string>& names,
                        double H, double W) {
  os << "frame\tattribute\ttop\tleft\tbottom\tright\tx0\ty0\tx1\ty1\n";
  os << std::setprecision(6);
  if (bounds.empty()) return;
  for (std::size_t f = 0; f < bounds[0].dim(0); ++f)
    for (std::size_t a = 0; a < bounds.size(); ++a) {
      const auto& b = bounds[a];
      const double top = b[f * 4], left = b[f * 4 + 1], hh = b[f * 4 + 2], ww = b[f * 4 + 3];
      os << f << "\t" << names.at(a) << "\t" << top << "\t" << left << "\t" << top + hh << "\t" << left + ww << "\t"
         << top * H << "\t" << left * W << "\t" << (top + hh) * H << "\t" << (left + ww) * W << "\n";
    }
}

}  // namespace talnet
