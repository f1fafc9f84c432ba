#pragma once

// Plain-loop reference implementations used by the unit tests and the
// acceptance binary. Nothing here calls into the autodiff engine.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major rows

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// W (rows x cols) restricted to columns [c0, c0 + x.size()) times x.
inline Vec matvec(const Mat& w, const Vec& x, std::size_t c0 = 0) {
  Vec out(w.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) out[i] += w[i][c0 + j] * x[j];
  return out;
}

inline Mat to_mat(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
  Mat m(rows, Vec(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = flat[i * cols + j];
  return m;
}

// ---------------------------------------------------------------- TS-GRU

/// Gate matrices are (d, d + d_in) over [predecessor, x]; Wh is
/// (d, 2d + d_in) over [r_A * h_attr, r_T * h_time, x].
struct TSGRUWeights {
  Mat wz_a, wz_t, wr_a, wr_t, wh;
  Vec bz_a, bz_t, br_a, br_t, bh;
};

inline Vec ts_gru_step(const TSGRUWeights& w, const Vec& x, const Vec& ha, const Vec& ht, double as = 1, double at = 1,
                       bool normalize = false) {
  const std::size_t d = ha.size();
  Vec out(d), r_a(d), r_t(d), z_a(d), z_t(d);
  for (std::size_t i = 0; i < d; ++i) {
    double za = w.bz_a[i], zt = w.bz_t[i], ra = w.br_a[i], rt = w.br_t[i];
    for (std::size_t j = 0; j < d; ++j) {
      za += w.wz_a[i][j] * ha[j];
      zt += w.wz_t[i][j] * ht[j];
      ra += w.wr_a[i][j] * ha[j];
      rt += w.wr_t[i][j] * ht[j];
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
      za += w.wz_a[i][d + j] * x[j];
      zt += w.wz_t[i][d + j] * x[j];
      ra += w.wr_a[i][d + j] * x[j];
      rt += w.wr_t[i][d + j] * x[j];
    }
    z_a[i] = sigmoid(za);
    z_t[i] = sigmoid(zt);
    r_a[i] = sigmoid(ra);
    r_t[i] = sigmoid(rt);
  }
  for (std::size_t i = 0; i < d; ++i) {
    double c = w.bh[i];
    for (std::size_t j = 0; j < d; ++j) c += w.wh[i][j] * r_a[j] * ha[j] + w.wh[i][d + j] * r_t[j] * ht[j];
    for (std::size_t j = 0; j < x.size(); ++j) c += w.wh[i][2 * d + j] * x[j];
    c = std::tanh(c);
    double za = z_a[i], zt = z_t[i];
    if (normalize) {
      const double s = std::max(za + zt, 1.0);
      za /= s;
      zt /= s;
    }
    za *= as;
    zt *= at;
    out[i] = za * ha[i] + zt * ht[i] + (1 - za - zt) * c;
  }
  return out;
}

/// grid[a][t] is a hidden vector; x[a][t] the input. Scores, when non-empty,
/// are indexed [a][t].
using Grid = std::vector<std::vector<Vec>>;

inline Grid lattice(const TSGRUWeights& w, const Grid& x, std::size_t d, const Mat& a_s = {}, const Mat& a_t = {},
                    bool normalize = false) {
  const std::size_t n = x.size(), t_len = x[0].size();
  Grid h(n, std::vector<Vec>(t_len));
  const Vec zero(d, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t < t_len; ++t) {
      const Vec& ha = a ? h[a - 1][t] : zero;
      const Vec& ht = t ? h[a][t - 1] : zero;
      h[a][t] = ts_gru_step(w, x[a][t], ha, ht, a_s.empty() ? 1 : a_s[a][t], a_t.empty() ? 1 : a_t[a][t], normalize);
    }
  return h;
}

/// f_s[a] = mean over t, f_t[t] = mean over a.
inline std::pair<std::vector<Vec>, std::vector<Vec>> build_context(const Grid& h) {
  const std::size_t n = h.size(), t_len = h[0].size(), d = h[0][0].size();
  std::vector<Vec> fs(n, Vec(d, 0.0)), ft(t_len, Vec(d, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t k = 0; k < d; ++k) {
        fs[a][k] += h[a][t][k] / static_cast<double>(t_len);
        ft[t][k] += h[a][t][k] / static_cast<double>(n);
      }
  return {fs, ft};
}

/// e = w1 . relu(W2 [h, context] + b2).
inline double energy(const Mat& w2, const Vec& b2, const Vec& w1, const Vec& h, const Vec& ctx) {
  double e = 0;
  for (std::size_t i = 0; i < w2.size(); ++i) {
    double u = b2[i];
    for (std::size_t j = 0; j < h.size(); ++j) u += w2[i][j] * h[j] + w2[i][h.size() + j] * ctx[j];
    e += w1[i] * std::max(u, 0.0);
  }
  return e;
}

struct Scores {
  Mat a_s, a_t;  // [a][t]
};

/// a_S softmax over attributes per frame, a_T softmax over frames per
/// attribute.
inline Scores attention_scores(const Grid& h, const Mat& wa2, const Vec& ba2, const Vec& wa1, const Mat& wt2,
                               const Vec& bt2, const Vec& wt1) {
  const auto [fs, ft] = build_context(h);
  const std::size_t n = h.size(), t_len = h[0].size();
  Mat es(n, Vec(t_len)), et(n, Vec(t_len));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t < t_len; ++t) {
      es[a][t] = energy(wa2, ba2, wa1, h[a][t], fs[a]);
      et[a][t] = energy(wt2, bt2, wt1, h[a][t], ft[t]);
    }
  Scores s{Mat(n, Vec(t_len)), Mat(n, Vec(t_len))};
  for (std::size_t t = 0; t < t_len; ++t) {
    double z = 0;
    for (std::size_t a = 0; a < n; ++a) z += std::exp(es[a][t]);
    for (std::size_t a = 0; a < n; ++a) s.a_s[a][t] = std::exp(es[a][t]) / z;
  }
  for (std::size_t a = 0; a < n; ++a) {
    double z = 0;
    for (std::size_t t = 0; t < t_len; ++t) z += std::exp(et[a][t]);
    for (std::size_t t = 0; t < t_len; ++t) s.a_t[a][t] = std::exp(et[a][t]) / z;
  }
  return s;
}

// ---------------------------------------------------------------- GRU

/// Gates (d, d + d_in) over [h, x]; candidate over [r * h, x].
struct GRUWeights {
  Mat wz, wr, wh;
  Vec bz, br, bh;
};

inline Vec gru_step(const GRUWeights& w, const Vec& x, const Vec& h) {
  const std::size_t d = h.size();
  Vec z(d), r(d), out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double zi = w.bz[i], ri = w.br[i];
    for (std::size_t j = 0; j < d; ++j) {
      zi += w.wz[i][j] * h[j];
      ri += w.wr[i][j] * h[j];
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
      zi += w.wz[i][d + j] * x[j];
      ri += w.wr[i][d + j] * x[j];
    }
    z[i] = sigmoid(zi);
    r[i] = sigmoid(ri);
  }
  for (std::size_t i = 0; i < d; ++i) {
    double c = w.bh[i];
    for (std::size_t j = 0; j < d; ++j) c += w.wh[i][j] * r[j] * h[j];
    for (std::size_t j = 0; j < x.size(); ++j) c += w.wh[i][d + j] * x[j];
    out[i] = (1 - z[i]) * h[i] + z[i] * std::tanh(c);
  }
  return out;
}

/// xs[t] is the input at step t; returns every state.
inline std::vector<Vec> gru_encode(const GRUWeights& w, const std::vector<Vec>& xs, std::size_t d) {
  std::vector<Vec> hs;
  Vec h(d, 0.0);
  for (const auto& x : xs) {
    h = gru_step(w, x, h);
    hs.push_back(h);
  }
  return hs;
}

// ---------------------------------------------------------------- regions

/// Homogeneous-coordinate form: [s_x 0 t_x; 0 s_y t_y] applied to the four
/// frame corners (0,0), (H,0), (0,W), (H,W).
inline std::array<std::array<double, 2>, 4> region_vertices(double sx, double sy, double tx, double ty, double H,
                                                            double W) {
  const double theta[2][3] = {{sx, 0, tx}, {0, sy, ty}};
  const double corners[4][3] = {{0, 0, 1}, {H, 0, 1}, {0, W, 1}, {H, W, 1}};
  std::array<std::array<double, 2>, 4> out{};
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 2; ++r) {
      double v = 0;
      for (int k = 0; k < 3; ++k) v += theta[r][k] * corners[c][k];
      out[c][r] = v;
    }
  return out;
}

/// Bilinear sample of a (H, W) plane; integer coordinates hit cells exactly
/// and points outside are clamped onto the border.
inline double bilinear(const std::vector<double>& plane, std::size_t H, std::size_t W, double row, double col) {
  const double r = std::clamp(row, 0.0, static_cast<double>(H - 1)), c = std::clamp(col, 0.0, static_cast<double>(W - 1));
  double v = 0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double wr = std::max(0.0, 1 - std::abs(r - static_cast<double>(i)));
      const double wc = std::max(0.0, 1 - std::abs(c - static_cast<double>(j)));
      v += wr * wc * plane[i * W + j];
    }
  return v;
}

// ---------------------------------------------------------------- losses

inline double sq_dist(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct TripletChoice {
  std::vector<std::size_t> pos, neg;
  double loss = 0;
};

/// Enumerates every (anchor, positive, negative) triple and keeps, per
/// anchor, the one with the largest margin violation m + D(a,p) - D(a,n);
/// among equal violations the lowest positive index, then the lowest
/// negative index wins.
inline TripletChoice brute_force_triplet(const std::vector<Vec>& f, const std::vector<int>& labels, double margin) {
  const std::size_t n = f.size();
  TripletChoice out{std::vector<std::size_t>(n), std::vector<std::size_t>(n), 0};
  for (std::size_t a = 0; a < n; ++a) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < n; ++p) {
      if (labels[p] != labels[a]) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        const double v = margin + sq_dist(f[a], f[p]) - sq_dist(f[a], f[q]);
        if (v > best) {
          best = v;
          out.pos[a] = p;
          out.neg[a] = q;
        }
      }
    }
    out.loss += std::max(best, 0.0);
  }
  return out;
}

/// -mean_r log((1 - eps) softmax(logits_r)[y_r] + eps / G).
inline double smoothed_ce(const Mat& logits, const std::vector<int>& y, double eps) {
  double total = 0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    const std::size_t g = logits[r].size();
    double mx = logits[r][0];
    for (double v : logits[r]) mx = std::max(mx, v);
    double z = 0;
    for (double v : logits[r]) z += std::exp(v - mx);
    const double q = std::exp(logits[r][static_cast<std::size_t>(y[r])] - mx) / z;
    total += -std::log((1 - eps) * q + eps / static_cast<double>(g));
  }
  return total / static_cast<double>(logits.size());
}

// ---------------------------------------------------------------- retrieval

struct Item {
  int identity = 0, camera = 0;
  Vec app, att;
};

inline double fused(const Item& a, const Item& b, double lambda) {
  return sq_dist(a.app, b.app) + lambda * lambda * sq_dist(a.att, b.att);
}

struct Metrics {
  std::vector<double> cmc;
  double map = 0;
  std::size_t evaluated = 0;
};

/// For every query the valid gallery excludes same-identity same-camera
/// entries. Position of gallery item g = number of valid items strictly
/// closer, plus equally close items with a lower index.
inline Metrics brute_force_metrics(const std::vector<Item>& queries, const std::vector<Item>& gallery, double lambda) {
  Metrics m;
  m.cmc.assign(gallery.size(), 0.0);
  double ap_total = 0;
  for (const auto& q : queries) {
    std::vector<std::size_t> valid;
    for (std::size_t g = 0; g < gallery.size(); ++g)
      if (!(gallery[g].identity == q.identity && gallery[g].camera == q.camera)) valid.push_back(g);
    auto position = [&](std::size_t g) {
      std::size_t pos = 0;
      const double dg = fused(q, gallery[g], lambda);
      for (auto o : valid) {
        const double d = fused(q, gallery[o], lambda);
        if (d < dg || (d == dg && o < g)) ++pos;
      }
      return pos;
    };
    std::vector<std::size_t> hits;
    for (auto g : valid)
      if (gallery[g].identity == q.identity) hits.push_back(position(g));
    if (hits.empty()) continue;
    std::sort(hits.begin(), hits.end());
    ++m.evaluated;
    for (std::size_t k = hits[0]; k < m.cmc.size(); ++k) m.cmc[k] += 1;
    double ap = 0;
    for (std::size_t i = 0; i < hits.size(); ++i) ap += static_cast<double>(i + 1) / static_cast<double>(hits[i] + 1);
    ap_total += ap / static_cast<double>(hits.size());
  }
  if (m.evaluated) {
    for (auto& v : m.cmc) v /= static_cast<double>(m.evaluated);
    m.map = ap_total / static_cast<double>(m.evaluated);
  }
  return m;
}

}  // namespace oracle
