#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "talnet/numerics/ops.hpp"
#include "talnet/numerics/parameter.hpp"

namespace talnet {

/// Standard GRU: z = sig(Wz [h, x]), r = sig(Wr [h, x]),
/// h~ = tanh(Wh [r*h, x]), h' = (1 - z) * h + z * h~ (all with biases).
template <typename T>
class GRUCell {
 public:
  GRUCell(std::size_t d_in, std::size_t d, ParameterStore<T>& store, const std::string& prefix) : d_in_(d_in), d_(d) {
    for (const char* g : {"Wz", "Wr", "Wh"}) {
      w_.push_back(store.add(prefix + g, {d, d + d_in}, InitSpec::uniform(d + d_in)));
      b_.push_back(store.add(prefix + "b" + std::string(g + 1), {d}, InitSpec::zeros()));
    }
  }

  std::size_t input_size() const { return d_in_; }
  std::size_t hidden_size() const { return d_; }

  struct Blocks {
    Tensor<T> input_w, input_b;  // (3d, d_in), (3d): z, r, candidate
    Tensor<T> hidden_w;          // (2d, d): [z; r]
    Tensor<T> cand_w;            // (d, d)
  };

  Blocks blocks() const {
    Blocks k;
    std::vector<Tensor<T>> in;
    for (const auto& w : w_) in.push_back(slice(w, 1, d_, d_in_));
    k.input_w = concat(in, 0);
    k.input_b = concat(b_, 0);
    k.hidden_w = concat<T>({slice(w_[0], 1, 0, d_), slice(w_[1], 1, 0, d_)}, 0);
    k.cand_w = slice(w_[2], 1, 0, d_);
    return k;
  }

  Tensor<T> project_input(const Blocks& k, const Tensor<T>& x) const { return linear(x, k.input_w, k.input_b); }

  /// One step from precomputed input contributions `p` (B, 3d).
  Tensor<T> step(const Blocks& k, const Tensor<T>& p, const Tensor<T>& h) const {
    const auto gh = matmul_nt(h, k.hidden_w);
    const auto z = sigmoid(add(slice(p, 1, 0, d_), slice(gh, 1, 0, d_)));
    const auto r = sigmoid(add(slice(p, 1, d_, d_), slice(gh, 1, d_, d_)));
    const auto cand = tanh(add(slice(p, 1, 2 * d_, d_), matmul_nt(mul(r, h), k.cand_w)));
    return add(mul(affine(z, T(-1), T(1)), h), mul(z, cand));
  }

 private:
  std::size_t d_in_, d_;
  std::vector<Tensor<T>> w_, b_;
};

/// Runs the GRU over x (T, B, d_in) from h_0 = 0; returns all states (T, B, d).
template <typename T>
Tensor<T> gru_encode(const GRUCell<T>& cell, const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(2) != cell.input_size())
    throw ShapeError("gru_encode", x.shape(), Shape{0, 0, cell.input_size()});
  const std::size_t t_len = x.dim(0), b = x.dim(1);
  const auto k = cell.blocks();
  const auto p = cell.project_input(k, reshape(x, {t_len * b, x.dim(2)}));
  std::vector<Tensor<T>> states;
  Tensor<T> h({b, cell.hidden_size()});
  for (std::size_t t = 0; t < t_len; ++t) {
    h = cell.step(k, slice(p, 0, t * b, b), h);
    states.push_back(h);
  }
  return stack(states, 0);
}

/// Mean over the leading (time) axis.
template <typename T>
Tensor<T> temporal_pool(const Tensor<T>& states) {
  return mean_axis(states, 0);
}

/// Equal-height horizontal bands of (F, C, Hm, Wm), top to bottom.
template <typename T>
std::vector<Tensor<T>> stripe_split(const Tensor<T>& fm, std::size_t stripes) {
  if (fm.rank() != 4) throw ShapeError("stripe_split", "expected (F, C, H, W), got " + to_string(fm.shape()));
  if (stripes == 0 || fm.dim(2) % stripes)
    throw ShapeError("stripe_split", "height " + std::to_string(fm.dim(2)) + " not divisible into " +
                                         std::to_string(stripes) + " stripes");
  const std::size_t h = fm.dim(2) / stripes;
  std::vector<Tensor<T>> out;
  for (std::size_t s = 0; s < stripes; ++s) out.push_back(slice(fm, 2, s * h, h));
  return out;
}

/// Spatial mean of (F, C, h, w) -> (F, C).
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  return mean_axis(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 2);
}

struct AppearanceConfig {
  std::size_t in_channels = 64, map_height = 8;
  std::size_t stripes = 4;
  std::size_t d_g = 64, d_p = 64;
  std::size_t num_classes = 20;
  bool use_gru = true;           // false: temporal mean of per-frame vectors
  bool per_part_gru = false;     // true: one local GRU per stripe

  void validate() const {
    if (stripes == 0 || map_height % stripes) throw std::invalid_argument("feature-map height not divisible by stripe count");
    if (num_classes == 0) throw std::invalid_argument("appearance branch needs at least one identity class");
  }
};

template <typename T>
struct AppearanceOutput {
  Tensor<T> global;                   // (B, d_g)
  std::vector<Tensor<T>> parts;       // stripes x (B, d_p)
  Tensor<T> global_logits;            // (B, G)
  std::vector<Tensor<T>> part_logits; // stripes x (B, G)
  Tensor<T> f_app;                    // (B, d_g + stripes * d_p)
};

template <typename T>
class AppearanceBranch {
 public:
  AppearanceBranch(const AppearanceConfig& cfg, ParameterStore<T>& store, const std::string& prefix = "app.") : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c = cfg_.in_channels, g = cfg_.num_classes;
    wg_ = store.add(prefix + "reduce_global.W", {cfg_.d_g, c}, InitSpec::relu_uniform(c));
    bg_ = store.add(prefix + "reduce_global.b", {cfg_.d_g}, InitSpec::zeros());
    wp_ = store.add(prefix + "reduce_part.W", {cfg_.d_p, c}, InitSpec::relu_uniform(c));
    bp_ = store.add(prefix + "reduce_part.b", {cfg_.d_p}, InitSpec::zeros());
    if (cfg_.use_gru) {
      global_gru_.emplace(cfg_.d_g, cfg_.d_g, store, prefix + "gru_global.");
      const std::size_t cells = cfg_.per_part_gru ? cfg_.stripes : 1;
      for (std::size_t s = 0; s < cells; ++s)
        local_gru_.emplace_back(cfg_.d_p, cfg_.d_p, store,
                                prefix + (cfg_.per_part_gru ? "gru_local" + std::to_string(s) + "." : std::string("gru_local.")));
    }
    cls_w_.push_back(store.add(prefix + "cls_global.W", {g, cfg_.d_g}, InitSpec::uniform(cfg_.d_g)));
    cls_b_.push_back(store.add(prefix + "cls_global.b", {g}, InitSpec::zeros()));
    for (std::size_t s = 0; s < cfg_.stripes; ++s) {
      const std::string p = prefix + "cls_part" + std::to_string(s);
      cls_w_.push_back(store.add(p + ".W", {g, cfg_.d_p}, InitSpec::uniform(cfg_.d_p)));
      cls_b_.push_back(store.add(p + ".b", {g}, InitSpec::zeros()));
    }
  }

  const AppearanceConfig& config() const { return cfg_; }

  /// Spatial mean then 1x1 reduction + ReLU: (F, C, h, w) -> (F, d).
  Tensor<T> pool_and_reduce(const Tensor<T>& region, bool global) const {
    return relu(linear(spatial_mean(region), global ? wg_ : wp_, global ? bg_ : bp_));
  }

  /// fm: (B*T, C, Hm, Wm), clip-major rows.
  AppearanceOutput<T> forward(const Tensor<T>& fm, std::size_t clips) const {
    if (fm.rank() != 4 || fm.dim(1) != cfg_.in_channels || fm.dim(2) != cfg_.map_height || fm.dim(0) % clips)
      throw ShapeError("appearance", fm.shape(), Shape{clips, cfg_.in_channels, cfg_.map_height, 0});
    const std::size_t t_len = fm.dim(0) / clips;
    auto time_major = [&](const Tensor<T>& per_frame) {
      return permute(reshape(per_frame, {clips, t_len, per_frame.dim(1)}), {1, 0, 2});
    };

    AppearanceOutput<T> out;
    const auto g_seq = time_major(pool_and_reduce(fm, true));
    std::vector<Tensor<T>> p_seq;
    for (const auto& band : stripe_split(fm, cfg_.stripes)) p_seq.push_back(time_major(pool_and_reduce(band, false)));

    if (!cfg_.use_gru) {
      out.global = temporal_pool(g_seq);
      for (const auto& p : p_seq) out.parts.push_back(temporal_pool(p));
    } else {
      out.global = temporal_pool(gru_encode(*global_gru_, g_seq));
      if (cfg_.per_part_gru) {
        for (std::size_t s = 0; s < p_seq.size(); ++s) out.parts.push_back(temporal_pool(gru_encode(local_gru_[s], p_seq[s])));
      } else {
        // The shared local GRU runs all stripes as one batch.
        const auto pooled = temporal_pool(gru_encode(local_gru_[0], concat(p_seq, 1)));
        for (std::size_t s = 0; s < p_seq.size(); ++s) out.parts.push_back(slice(pooled, 0, s * clips, clips));
      }
    }
    out.global_logits = linear(out.global, cls_w_[0], cls_b_[0]);
    for (std::size_t s = 0; s < out.parts.size(); ++s) out.part_logits.push_back(linear(out.parts[s], cls_w_[s + 1], cls_b_[s + 1]));
    std::vector<Tensor<T>> all{out.global};
    all.insert(all.end(), out.parts.begin(), out.parts.end());
    out.f_app = concat(all, 1);
    return out;
  }

 private:
  AppearanceConfig cfg_;
  Tensor<T> wg_, bg_, wp_, bp_;
  std::optional<GRUCell<T>> global_gru_;
  std::vector<GRUCell<T>> local_gru_;
  std::vector<Tensor<T>> cls_w_, cls_b_;
};

}  // namespace talnet
