#pragma once

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "talnet/numerics/ops.hpp"
#include "talnet/numerics/parameter.hpp"

namespace talnet {

/// Gated recurrence over the (attribute, time) lattice. Each gate and the
/// candidate read the attribute predecessor h_{a-1,t}, the temporal
/// predecessor h_{a,t-1} and the input x_{a,t}.
template <typename T>
class TSGRUCell {
 public:
  /// Update-gate biases start at `update_bias_init`; the default puts both
  /// update gates near 0.25 so the candidate keeps half the weight.
  TSGRUCell(std::size_t d_in, std::size_t d, ParameterStore<T>& store, const std::string& prefix,
            double update_bias_init = -1.0986122886681098)
      : d_in_(d_in), d_(d) {
    const std::size_t gate_in = d + d_in;
    for (const char* g : {"Wz_A", "Wz_T", "Wr_A", "Wr_T"}) {
      const bool update = g[1] == 'z';
      w_.push_back(store.add(prefix + g, {d, gate_in}, InitSpec::uniform(gate_in)));
      b_.push_back(store.add(prefix + "b" + std::string(g + 1), {d},
                             update && update_bias_init != 0 ? InitSpec::constant(update_bias_init) : InitSpec::zeros()));
    }
    w_.push_back(store.add(prefix + "Wh", {d, 2 * d + d_in}, InitSpec::unit_uniform(2 * d + d_in)));
    b_.push_back(store.add(prefix + "bh", {d}, InitSpec::zeros()));
  }

  std::size_t input_size() const { return d_in_; }
  std::size_t hidden_size() const { return d_; }

  /// Weight blocks split by operand, rebuilt once per forward pass.
  struct Blocks {
    Tensor<T> input_w, input_b;  // (5d, d_in), (5d): z_A, z_T, r_A, r_T, candidate
    Tensor<T> attr_w, time_w;    // (2d, d): [z_A; r_A] and [z_T; r_T] on the predecessors
    Tensor<T> cand_attr_w, cand_time_w;  // (d, d)
  };

  Blocks blocks() const {
    const std::size_t d = d_;
    Blocks k;
    std::vector<Tensor<T>> in;
    for (std::size_t g = 0; g < 4; ++g) in.push_back(slice(w_[g], 1, d, d_in_));
    in.push_back(slice(w_[4], 1, 2 * d, d_in_));
    k.input_w = concat(in, 0);
    k.input_b = concat(b_, 0);
    k.attr_w = concat<T>({slice(w_[0], 1, 0, d), slice(w_[2], 1, 0, d)}, 0);
    k.time_w = concat<T>({slice(w_[1], 1, 0, d), slice(w_[3], 1, 0, d)}, 0);
    k.cand_attr_w = slice(w_[4], 1, 0, d);
    k.cand_time_w = slice(w_[4], 1, d, d);
    return k;
  }

  /// Input contributions of every gate for a batch of inputs, (R, 5d).
  Tensor<T> project_input(const Blocks& k, const Tensor<T>& x) const { return linear(x, k.input_w, k.input_b); }

  /// One lattice step from precomputed input contributions `p` (B, 5d).
  /// With `a_s`/`a_t` (B), the update coefficients become a_S*z_A and a_T*z_T.
  Tensor<T> step(const Blocks& k, const Tensor<T>& p, const Tensor<T>& h_attr, const Tensor<T>& h_time,
                 const Tensor<T>* a_s = nullptr, const Tensor<T>* a_t = nullptr, bool normalize_gates = false) const {
    const std::size_t d = d_;
    const auto ga = matmul_nt(h_attr, k.attr_w);
    const auto gt = matmul_nt(h_time, k.time_w);
    auto z_a = sigmoid(add(slice(p, 1, 0, d), slice(ga, 1, 0, d)));
    auto z_t = sigmoid(add(slice(p, 1, d, d), slice(gt, 1, 0, d)));
    const auto r_a = sigmoid(add(slice(p, 1, 2 * d, d), slice(ga, 1, d, d)));
    const auto r_t = sigmoid(add(slice(p, 1, 3 * d, d), slice(gt, 1, d, d)));
    const auto cand = tanh(add(add(slice(p, 1, 4 * d, d), matmul_nt(mul(r_a, h_attr), k.cand_attr_w)),
                               matmul_nt(mul(r_t, h_time), k.cand_time_w)));
    if (normalize_gates) {
      const auto total = clamp_min(add(z_a, z_t), T(1));
      z_a = div(z_a, total);
      z_t = div(z_t, total);
    }
    if (a_s) z_a = scale_rows(z_a, *a_s);
    if (a_t) z_t = scale_rows(z_t, *a_t);
    const auto keep = affine(add(z_a, z_t), T(-1), T(1));
    return add(add(mul(z_a, h_attr), mul(z_t, h_time)), mul(keep, cand));
  }

 private:
  std::size_t d_in_, d_;
  std::vector<Tensor<T>> w_, b_;
};

/// Single step on raw inputs: x (B, d_in), predecessors (B, d).
template <typename T>
Tensor<T> ts_gru_step(const TSGRUCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_attr, const Tensor<T>& h_time,
                      bool normalize_gates = false) {
  const auto k = cell.blocks();
  return cell.step(k, cell.project_input(k, x), h_attr, h_time, nullptr, nullptr, normalize_gates);
}

namespace ts_detail {
template <typename T>
void require_finite(const Tensor<T>& h, std::size_t a, std::size_t t) {
  for (T v : h.data())
    if (!std::isfinite(v))
      throw NumericalError("ts_gru step (" + std::to_string(a) + ", " + std::to_string(t) + ") produced a non-finite value");
}

/// Fills the lattice in row-major (a, t) order. `x` is (N, T, B, d_in);
/// `a_s`/`a_t`, when given, are (N, T, B). Returns (N, T, B, d).
template <typename T>
Tensor<T> run_lattice(const TSGRUCell<T>& cell, const Tensor<T>& x, const Tensor<T>* a_s, const Tensor<T>* a_t,
                      bool normalize_gates) {
  if (x.rank() != 4 || x.dim(3) != cell.input_size())
    throw ShapeError("ts_gru lattice", x.shape(), Shape{0, 0, 0, cell.input_size()});
  const std::size_t n = x.dim(0), t_len = x.dim(1), b = x.dim(2), d = cell.hidden_size();
  const auto k = cell.blocks();
  const auto p = cell.project_input(k, reshape(x, {n * t_len * b, x.dim(3)}));
  std::optional<Tensor<T>> as2, at2;
  if (a_s) as2 = reshape(*a_s, {n * t_len, b});
  if (a_t) at2 = reshape(*a_t, {n * t_len, b});
  const Tensor<T> zero({b, d});
  std::vector<Tensor<T>> h(n * t_len);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t c = a * t_len + t;
      const auto& ha = a ? h[c - t_len] : zero;
      const auto& ht = t ? h[c - 1] : zero;
      std::optional<Tensor<T>> cs, ct;
      if (as2) cs = select(*as2, 0, c);
      if (at2) ct = select(*at2, 0, c);
      h[c] = cell.step(k, slice(p, 0, c * b, b), ha, ht, cs ? &*cs : nullptr, ct ? &*ct : nullptr, normalize_gates);
      require_finite(h[c], a, t);
    }
  return reshape(stack(h, 0), {n, t_len, b, d});
}
}  // namespace ts_detail

/// First TS-GRU pass over initial attribute features v (N, T, B, d_v).
template <typename T>
Tensor<T> first_pass(const TSGRUCell<T>& cell, const Tensor<T>& v, bool normalize_gates = false) {
  return ts_detail::run_lattice<T>(cell, v, nullptr, nullptr, normalize_gates);
}

template <typename T>
struct ContextMemory {
  Tensor<T> f_s;  // (N, B, d): mean over time per attribute
  Tensor<T> f_t;  // (T, B, d): mean over attributes per frame
};

template <typename T>
ContextMemory<T> build_context(const Tensor<T>& grid) {
  if (grid.rank() != 4) throw ShapeError("build_context", "grid must be (N, T, B, d), got " + to_string(grid.shape()));
  return {mean_axis(grid, 1), mean_axis(grid, 0)};
}

template <typename T>
struct AttentionScores {
  Tensor<T> e_s, e_t;  // (N, T, B) energies
  Tensor<T> a_s, a_t;  // a_s sums to 1 over attributes, a_t over time
};

/// Two-layer scorers e = w1 . relu(W2 [h, F] + b2) for the semantic and
/// temporal attention.
template <typename T>
class ContextAttention {
 public:
  ContextAttention(std::size_t d, std::size_t d_att, ParameterStore<T>& store, const std::string& prefix) {
    w_a2_ = store.add(prefix + "W_a2", {d_att, 2 * d}, InitSpec::relu_uniform(2 * d));
    b_a2_ = store.add(prefix + "b_a2", {d_att}, InitSpec::zeros());
    w_a1_ = store.add(prefix + "W_a1", {1, d_att}, InitSpec::uniform(d_att));
    w_t2_ = store.add(prefix + "W_t2", {d_att, 2 * d}, InitSpec::relu_uniform(2 * d));
    b_t2_ = store.add(prefix + "b_t2", {d_att}, InitSpec::zeros());
    w_t1_ = store.add(prefix + "W_t1", {1, d_att}, InitSpec::uniform(d_att));
  }

  AttentionScores<T> operator()(const Tensor<T>& grid, const ContextMemory<T>& mem) const {
    const std::size_t n = grid.dim(0), t = grid.dim(1), b = grid.dim(2), d = grid.dim(3);
    auto energy = [&](const Tensor<T>& context, const Tensor<T>& w2, const Tensor<T>& b2, const Tensor<T>& w1) {
      const auto joined = reshape(concat<T>({grid, context}, 3), {n * t * b, 2 * d});
      return reshape(matmul_nt(relu(linear(joined, w2, b2)), w1), {n, t, b});
    };
    AttentionScores<T> s;
    s.e_s = energy(expand(mem.f_s, 1, t), w_a2_, b_a2_, w_a1_);
    s.e_t = energy(expand(mem.f_t, 0, n), w_t2_, b_t2_, w_t1_);
    s.a_s = softmax(s.e_s, 0);
    s.a_t = softmax(s.e_t, 1);
    return s;
  }

 private:
  Tensor<T> w_a2_, b_a2_, w_a1_, w_t2_, b_t2_, w_t1_;
};

/// Second pass: Eq.3-style gates of `cell` on input x (N, T, B, d_in), with
/// the update coefficients scaled by the attention scores. Without scores the
/// pass is a plain TS-GRU lattice.
template <typename T>
Tensor<T> second_pass(const TSGRUCell<T>& cell, const Tensor<T>& x, const AttentionScores<T>* scores,
                      bool normalize_gates = false) {
  if (!scores) return ts_detail::run_lattice<T>(cell, x, nullptr, nullptr, normalize_gates);
  return ts_detail::run_lattice<T>(cell, x, &scores->a_s, &scores->a_t, normalize_gates);
}

/// Last-frame column h'_{a,T} of a grid, (N, B, d).
template <typename T>
Tensor<T> attribute_readout(const Tensor<T>& grid) {
  return select(grid, 1, grid.dim(1) - 1);
}

/// One m_n-way classifier per attribute.
template <typename T>
class AttributeHeads {
 public:
  AttributeHeads(std::size_t d, const std::vector<std::size_t>& categories, ParameterStore<T>& store,
                 const std::string& prefix) {
    for (std::size_t a = 0; a < categories.size(); ++a) {
      const std::string p = prefix + std::to_string(a);
      w_.push_back(store.add(p + ".W", {categories[a], d}, InitSpec::uniform(d)));
      b_.push_back(store.add(p + ".b", {categories[a]}, InitSpec::zeros()));
    }
  }

  std::size_t size() const { return w_.size(); }

  /// features[a] is (B, d); returns per-attribute logits (B, m_a).
  std::vector<Tensor<T>> operator()(const std::vector<Tensor<T>>& features) const {
    if (features.size() != w_.size()) throw ShapeError("attribute_heads", "expected one feature per attribute");
    std::vector<Tensor<T>> out;
    for (std::size_t a = 0; a < w_.size(); ++a) out.push_back(linear(features[a], w_[a], b_[a]));
    return out;
  }

 private:
  std::vector<Tensor<T>> w_, b_;
};

struct TSContextConfig {
  std::size_t d_in = 64, d = 64, d_att = 64;
  bool normalize_gates = false;
  bool second_pass_reads_v = false;  // default: the second pass consumes first-pass h
  bool use_context_memory = true;    // false: second pass runs with a_S = a_T = 1
};

template <typename T>
struct TSContextOutput {
  Tensor<T> grid1, grid2;  // (N, T, B, d)
  ContextMemory<T> memory;
  std::optional<AttentionScores<T>> scores;
  Tensor<T> readout;  // (N, B, d)
};

template <typename T>
class TSContextBlock {
 public:
  TSContextBlock(const TSContextConfig& cfg, ParameterStore<T>& store, const std::string& prefix = "att.ts.")
      : cfg_(cfg),
        cell1_(cfg.d_in, cfg.d, store, prefix + "gru1."),
        cell2_(cfg.second_pass_reads_v ? cfg.d_in : cfg.d, cfg.d, store, prefix + "gru2.") {
    if (cfg_.use_context_memory) attention_.emplace(cfg.d, cfg.d_att, store, prefix + "context.");
  }

  const TSContextConfig& config() const { return cfg_; }
  const TSGRUCell<T>& cell1() const { return cell1_; }
  const TSGRUCell<T>& cell2() const { return cell2_; }

  /// v: (N, T, B, d_v) in processing order.
  TSContextOutput<T> forward(const Tensor<T>& v) const {
    TSContextOutput<T> out;
    out.grid1 = first_pass(cell1_, v, cfg_.normalize_gates);
    out.memory = build_context(out.grid1);
    if (attention_) out.scores = (*attention_)(out.grid1, out.memory);
    const Tensor<T>& x2 = cfg_.second_pass_reads_v ? v : out.grid1;
    out.grid2 = second_pass(cell2_, x2, out.scores ? &*out.scores : nullptr, cfg_.normalize_gates);
    out.readout = attribute_readout(out.grid2);
    return out;
  }

 private:
  TSContextConfig cfg_;
  TSGRUCell<T> cell1_, cell2_;
  std::optional<ContextAttention<T>> attention_;
};

/// Text dump of the attention matrices of clip `clip`: one table per score
/// kind, rows are attributes, columns frames.
template <typename T>
void write_attention_tables(std::ostream& os, const AttentionScores<T>& s, std::size_t clip,
                            const std::vector<std::string>& attribute_names) {
  const std::size_t n = s.a_s.dim(0), t = s.a_s.dim(1), b = s.a_s.dim(2);
  os << std::setprecision(6);
  for (const auto& [label, m] : {std::pair{"a_S", &s.a_s}, std::pair{"a_T", &s.a_t}}) {
    os << "# " << label << "\nattribute";
    for (std::size_t j = 0; j < t; ++j) os << "\tt" << j;
    os << "\n";
    for (std::size_t a = 0; a < n; ++a) {
      os << attribute_names.at(a);
      for (std::size_t j = 0; j < t; ++j) os << "\t" << (*m)[(a * t + j) * b + clip];
      os << "\n";
    }
  }
}

}  // namespace talnet
