#pragma once

// Randomised comparisons of library routines against the plain-loop
// oracles. Shared by the unit tests (few instances) and the acceptance
// binary (full counts).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "talnet/losses.hpp"
#include "talnet/model/appearance.hpp"
#include "talnet/model/attr_attention.hpp"
#include "talnet/model/ts_context.hpp"
#include "talnet/retrieval.hpp"

namespace checks {

using namespace talnet;
using oracle::Mat;
using oracle::Vec;

struct Result {
  std::size_t instances = 0;
  double max_error = 0;
  std::size_t mismatches = 0;  // exact comparisons that failed
  double tolerance = 0;

  bool passed() const { return instances > 0 && mismatches == 0 && max_error <= tolerance; }

  void record(double a, double b) {
    const double e = std::abs(a - b);
    if (!(e <= max_error)) max_error = std::isnan(e) ? INFINITY : std::max(max_error, e);
  }

  std::string summary() const {
    std::ostringstream os;
    os << instances << " instances, max abs error " << max_error << " (tol " << tolerance << ")";
    if (mismatches) os << ", " << mismatches << " exact mismatches";
    return os.str();
  }
};

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scale * normal(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

inline void randomize(ParameterStore<double>& store, Rng& rng, double scale) {
  for (auto& p : store.all())
    for (auto& v : p.tensor.data()) v = scale * normal(rng);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

inline Mat mat(const ParameterStore<double>& s, const std::string& name) {
  const auto& t = s.get(name);
  return oracle::to_mat(t.values(), t.dim(0), t.dim(1));
}

inline Vec vec(const ParameterStore<double>& s, const std::string& name) { return s.get(name).values(); }

inline oracle::TSGRUWeights ts_weights(const ParameterStore<double>& s, const std::string& p) {
  return {mat(s, p + "Wz_A"), mat(s, p + "Wz_T"), mat(s, p + "Wr_A"), mat(s, p + "Wr_T"), mat(s, p + "Wh"),
          vec(s, p + "bz_A"), vec(s, p + "bz_T"), vec(s, p + "br_A"), vec(s, p + "br_T"), vec(s, p + "bh")};
}

/// Row `r` of a (R, d) tensor.
inline Vec row(const Tensor<double>& t, std::size_t r) {
  const std::size_t w = t.size() / t.dim(0);
  return Vec(t.data().begin() + r * w, t.data().begin() + (r + 1) * w);
}

/// (N, T, B, d) tensor -> grid for batch entry b.
inline oracle::Grid grid_of(const Tensor<double>& t, std::size_t b) {
  const std::size_t n = t.dim(0), tl = t.dim(1), bs = t.dim(2), d = t.dim(3);
  oracle::Grid g(n, std::vector<Vec>(tl, Vec(d)));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t j = 0; j < tl; ++j)
      for (std::size_t k = 0; k < d; ++k) g[a][j][k] = t[((a * tl + j) * bs + b) * d + k];
  return g;
}

inline Mat scores_of(const Tensor<double>& t, std::size_t b) {
  const std::size_t n = t.dim(0), tl = t.dim(1), bs = t.dim(2);
  Mat m(n, Vec(tl));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t j = 0; j < tl; ++j) m[a][j] = t[(a * tl + j) * bs + b];
  return m;
}

// ------------------------------------------------------------ equations

inline Result ts_gru_step_matches(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
  Result res;
  res.tolerance = tol;
  Rng rng = derive_rng(seed, "check/ts_gru_step");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t d_in = pick(rng, 1, 6), d = pick(rng, 1, 6), b = pick(rng, 1, 3);
    const bool normalize = i % 2;
    ParameterStore<double> store;
    TSGRUCell<double> cell(d_in, d, store, "c.");
    randomize(store, rng, 0.7);
    const auto x = random_tensor(rng, {b, d_in}), ha = random_tensor(rng, {b, d}), ht = random_tensor(rng, {b, d});
    const auto out = ts_gru_step(cell, x, ha, ht, normalize);
    const auto w = ts_weights(store, "c.");
    for (std::size_t r = 0; r < b; ++r) {
      const auto ref = oracle::ts_gru_step(w, row(x, r), row(ha, r), row(ht, r), 1, 1, normalize);
      for (std::size_t k = 0; k < d; ++k) res.record(out[r * d + k], ref[k]);
    }
    ++res.instances;
  }
  return res;
}

/// Random attention scores of shape (N, T, B), normalised like the real
/// ones so the lattice sees realistic values.
inline AttentionScores<double> random_scores(Rng& rng, std::size_t n, std::size_t t, std::size_t b) {
  AttentionScores<double> s;
  s.e_s = random_tensor(rng, {n, t, b});
  s.e_t = random_tensor(rng, {n, t, b});
  s.a_s = softmax(s.e_s, 0);
  s.a_t = softmax(s.e_t, 1);
  return s;
}

inline Result second_pass_matches(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
  Result res;
  res.tolerance = tol;
  Rng rng = derive_rng(seed, "check/second_pass");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = pick(rng, 1, 4), t = pick(rng, 1, 5), b = pick(rng, 1, 3), d_in = pick(rng, 1, 5),
                      d = pick(rng, 1, 5);
    const bool normalize = i % 3 == 2;
    ParameterStore<double> store;
    TSGRUCell<double> cell(d_in, d, store, "c.");
    randomize(store, rng, 0.6);
    const auto x = random_tensor(rng, {n, t, b, d_in});
    const auto scores = random_scores(rng, n, t, b);
    const auto out = second_pass(cell, x, &scores, normalize);
    const auto w = ts_weights(store, "c.");
    for (std::size_t bb = 0; bb < b; ++bb) {
      const auto ref = oracle::lattice(w, grid_of(x, bb), d, scores_of(scores.a_s, bb), scores_of(scores.a_t, bb), normalize);
      const auto got = grid_of(out, bb);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t j = 0; j < t; ++j)
          for (std::size_t k = 0; k < d; ++k) res.record(got[a][j][k], ref[a][j][k]);
    }
    ++res.instances;
  }
  return res;
}

inline Result build_context_matches(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
  Result res;
  res.tolerance = tol;
  Rng rng = derive_rng(seed, "check/build_context");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = pick(rng, 1, 5), t = pick(rng, 1, 6), b = pick(rng, 1, 3), d = pick(rng, 1, 6);
    const auto h = random_tensor(rng, {n, t, b, d});
    const auto mem = build_context(h);
    for (std::size_t bb = 0; bb < b; ++bb) {
      const auto [fs, ft] = oracle::build_context(grid_of(h, bb));
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t k = 0; k < d; ++k) res.record(mem.f_s[(a * b + bb) * d + k], fs[a][k]);
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t k = 0; k < d; ++k) res.record(mem.f_t[(j * b + bb) * d + k], ft[j][k]);
    }
    ++res.instances;
  }
  return res;
}

struct ScoreCheck {
  Result match, normalization;
};

/// Compares attention scores with the oracle and checks that a_S sums to
/// one over attributes and a_T over frames.
inline ScoreCheck attention_scores_match(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
  ScoreCheck res;
  res.match.tolerance = tol;
  res.normalization.tolerance = tol;
  Rng rng = derive_rng(seed, "check/attention_scores");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = pick(rng, 1, 5), t = pick(rng, 1, 6), b = pick(rng, 1, 3), d = pick(rng, 1, 5),
                      d_att = pick(rng, 1, 5);
    ParameterStore<double> store;
    ContextAttention<double> att(d, d_att, store, "ctx.");
    randomize(store, rng, 1.0);
    const auto h = random_tensor(rng, {n, t, b, d}, 1.5);
    const auto s = att(h, build_context(h));
    const Vec wa1 = vec(store, "ctx.W_a1"), wt1 = vec(store, "ctx.W_t1");
    for (std::size_t bb = 0; bb < b; ++bb) {
      const auto ref = oracle::attention_scores(grid_of(h, bb), mat(store, "ctx.W_a2"), vec(store, "ctx.b_a2"), wa1,
                                                mat(store, "ctx.W_t2"), vec(store, "ctx.b_t2"), wt1);
      const auto as = scores_of(s.a_s, bb), at = scores_of(s.a_t, bb);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t j = 0; j < t; ++j) {
          res.match.record(as[a][j], ref.a_s[a][j]);
          res.match.record(at[a][j], ref.a_t[a][j]);
        }
      for (std::size_t j = 0; j < t; ++j) {
        double col = 0;
        for (std::size_t a = 0; a < n; ++a) col += as[a][j];
        res.normalization.record(col, 1.0);
      }
      for (std::size_t a = 0; a < n; ++a) {
        double r = 0;
        for (std::size_t j = 0; j < t; ++j) r += at[a][j];
        res.normalization.record(r, 1.0);
      }
    }
    ++res.match.instances;
    ++res.normalization.instances;
  }
  return res;
}

inline Result gru_encode_matches(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
  Result res;
  res.tolerance = tol;
  Rng rng = derive_rng(seed, "check/gru_encode");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t t = pick(rng, 1, 8), b = pick(rng, 1, 3), d_in = pick(rng, 1, 6), d = pick(rng, 1, 6);
    ParameterStore<double> store;
    GRUCell<double> cell(d_in, d, store, "g.");
    randomize(store, rng, 0.7);
    const auto x = random_tensor(rng, {t, b, d_in});
    const auto hs = gru_encode(cell, x);
    const oracle::GRUWeights w{mat(store, "g.Wz"), mat(store, "g.Wr"), mat(store, "g.Wh"),
                               vec(store, "g.bz"), vec(store, "g.br"), vec(store, "g.bh")};
    for (std::size_t bb = 0; bb < b; ++bb) {
      std::vector<Vec> xs;
      for (std::size_t j = 0; j < t; ++j) xs.push_back(Vec(x.data().begin() + (j * b + bb) * d_in,
                                                           x.data().begin() + (j * b + bb + 1) * d_in));
      const auto ref = oracle::gru_encode(w, xs, d);
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t k = 0; k < d; ++k) res.record(hs[(j * b + bb) * d + k], ref[j][k]);
    }
    ++res.instances;
  }
  return res;
}

/// region_vertices against the homogeneous-matrix oracle, and the tensor
/// squashing path against squash_affine.
inline Result region_vertices_match(std::size_t instances, std::uint64_t seed, double tol = 1e-6) {
  Result res;
  res.tolerance = tol;
  Rng rng = derive_rng(seed, "check/region_vertices");
  for (std::size_t i = 0; i < instances; ++i) {
    const double H = static_cast<double>(pick(rng, 2, 64)), W = static_cast<double>(pick(rng, 2, 64));
    const AffineParams p{uniform(rng, 0.05, 1), uniform(rng, 0.05, 1), uniform(rng, -5, 20), uniform(rng, -5, 20)};
    const auto r = region_vertices(p, H, W);
    const auto ref = oracle::region_vertices(p.s_x, p.s_y, p.t_x, p.t_y, H, W);
    for (int c = 0; c < 4; ++c)
      for (int k = 0; k < 2; ++k) res.record(r.vertices[c][k], ref[c][k]);
    res.record(r.top, ref[0][0] / H);
    res.record(r.left, ref[0][1] / W);
    res.record(r.bottom, ref[3][0] / H);
    res.record(r.right, ref[3][1] / W);

    const std::array<double, 4> raw{3 * normal(rng), 3 * normal(rng), 3 * normal(rng), 3 * normal(rng)};
    const auto sq = squash_affine(raw, H, W, 1 / H, 1 / W);
    const auto box = region_vertices(sq, H, W);
    const auto bounds = squash_bounds(Tensor<double>({1, 4}, std::vector<double>(raw.begin(), raw.end())), 1 / H, 1 / W);
    res.record(bounds[0], box.top);
    res.record(bounds[1], box.left);
    res.record(bounds[0] + bounds[2], box.bottom);
    res.record(bounds[1] + bounds[3], box.right);
    ++res.instances;
  }
  return res;
}

// ------------------------------------------------------------ losses

/// Batch-hard mining and loss against brute-force enumeration of all
/// triplets. Even instances use small integer features so distances tie
/// often and are exact in floating point; the comparison is then exact.
inline Result triplet_matches_brute_force(std::size_t instances, std::uint64_t seed) {
  Result res;
  res.tolerance = 1e-12;
  Rng rng = derive_rng(seed, "check/triplet");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t ids = pick(rng, 2, 4), v = pick(rng, 2, 4), dim = pick(rng, 1, 4), n = ids * v;
    const bool integer = i % 2 == 0;
    std::vector<Vec> f(n, Vec(dim));
    std::vector<double> flat;
    for (auto& r : f)
      for (auto& x : r) {
        x = integer ? static_cast<double>(static_cast<int>(uniform_index(rng, 5)) - 2) : normal(rng);
        flat.push_back(x);
      }
    // Shuffled labels: the oracle must not rely on contiguous blocks.
    std::vector<int> labels;
    for (std::size_t a = 0; a < ids; ++a)
      for (std::size_t b = 0; b < v; ++b) labels.push_back(static_cast<int>(a));
    for (std::size_t k = n - 1; k > 0; --k) std::swap(labels[k], labels[uniform_index(rng, k + 1)]);
    const double margin = integer ? 0.5 : uniform(rng, 0, 1);

    const auto ref = oracle::brute_force_triplet(f, labels, margin);
    std::vector<double> dist(n * n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) dist[a * n + b] = oracle::sq_dist(f[a], f[b]);
    const auto [pos, neg] = mine_batch_hard(dist, labels);
    for (std::size_t a = 0; a < n; ++a)
      if (pos[a] != a * n + ref.pos[a] || neg[a] != a * n + ref.neg[a]) ++res.mismatches;
    const double loss = triplet_batch_hard(Tensor<double>({n, dim}, flat), labels, margin).item();
    if (integer) {
      if (loss != ref.loss) ++res.mismatches;
    } else {
      res.record(loss, ref.loss);
    }
    ++res.instances;
  }
  return res;
}

struct SmoothingCheck {
  Result plain_ce, uniform_log_g, oracle_match;
};

inline SmoothingCheck label_smoothing_identities(std::size_t instances, std::uint64_t seed) {
  SmoothingCheck res;
  res.plain_ce.tolerance = 1e-7;
  res.uniform_log_g.tolerance = 1e-6;
  res.oracle_match.tolerance = 1e-9;
  Rng rng = derive_rng(seed, "check/label_smoothing");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t rows = pick(rng, 1, 6), g = pick(rng, 2, 12);
    const auto logits = random_tensor(rng, {rows, g}, 3.0);
    std::vector<int> y;
    for (std::size_t r = 0; r < rows; ++r) y.push_back(static_cast<int>(uniform_index(rng, g)));

    double plain = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      double mx = -INFINITY;
      for (std::size_t k = 0; k < g; ++k) mx = std::max(mx, logits[r * g + k]);
      double z = 0;
      for (std::size_t k = 0; k < g; ++k) z += std::exp(logits[r * g + k] - mx);
      plain += -(logits[r * g + static_cast<std::size_t>(y[r])] - mx - std::log(z));
    }
    res.plain_ce.record(ce_label_smooth(logits, y, 0.0).item(), plain / static_cast<double>(rows));

    const double eps = uniform(rng, 0, 0.9);
    const Tensor<double> flat({rows, g}, std::vector<double>(rows * g, normal(rng)));
    res.uniform_log_g.record(ce_label_smooth(flat, y, eps).item(), std::log(static_cast<double>(g)));

    res.oracle_match.record(ce_label_smooth(logits, y, eps).item(),
                            oracle::smoothed_ce(oracle::to_mat(logits.values(), rows, g), y, eps));
    ++res.plain_ce.instances;
    ++res.uniform_log_g.instances;
    ++res.oracle_match.instances;
  }
  return res;
}

// ------------------------------------------------------------ retrieval

inline EmbeddingRecord to_record(const oracle::Item& it, int id) { return {id, it.identity, it.camera, it.app, it.att}; }

/// Gallery with few identities and cameras and coarse features, so ties and
/// skipped queries both occur.
inline std::vector<oracle::Item> random_items(Rng& rng, std::size_t count, std::size_t ids, std::size_t dim_app,
                                              std::size_t dim_att, bool coarse) {
  std::vector<oracle::Item> items(count);
  for (auto& it : items) {
    it.identity = static_cast<int>(uniform_index(rng, ids));
    it.camera = static_cast<int>(uniform_index(rng, 3));
    it.app.resize(dim_app);
    it.att.resize(dim_att);
    for (auto& x : it.app) x = coarse ? static_cast<double>(uniform_index(rng, 3)) : normal(rng);
    for (auto& x : it.att) x = coarse ? static_cast<double>(uniform_index(rng, 3)) : normal(rng);
  }
  return items;
}

struct RetrievalCheck {
  Result metrics;
  std::size_t non_monotone = 0;
};

inline RetrievalCheck cmc_map_match(std::size_t instances, std::uint64_t seed) {
  RetrievalCheck res;
  res.metrics.tolerance = 1e-12;
  Rng rng = derive_rng(seed, "check/cmc_map");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t nq = pick(rng, 1, 10), ng = pick(rng, 1, 30), ids = pick(rng, 1, 6);
    const std::size_t da = pick(rng, 1, 4), dt = pick(rng, 0, 3);
    const bool coarse = i % 2 == 0;
    const double lambda = i % 4 == 1 ? 0.0 : uniform(rng, 0, 1);
    const auto q = random_items(rng, nq, ids, da, dt, coarse), g = random_items(rng, ng, ids, da, dt, coarse);
    std::vector<EmbeddingRecord> qr, gr;
    for (std::size_t k = 0; k < nq; ++k) qr.push_back(to_record(q[k], static_cast<int>(k)));
    for (std::size_t k = 0; k < ng; ++k) gr.push_back(to_record(g[k], static_cast<int>(100 + k)));

    const auto got = evaluate(qr, gr, Protocol::multi_shot, lambda);
    const auto ref = oracle::brute_force_metrics(q, g, lambda);
    if (got.evaluated != ref.evaluated) ++res.metrics.mismatches;
    if (ref.evaluated) {
      if (got.cmc.size() != ref.cmc.size()) {
        ++res.metrics.mismatches;
      } else {
        for (std::size_t k = 0; k < ref.cmc.size(); ++k) res.metrics.record(got.cmc[k], ref.cmc[k]);
      }
      res.metrics.record(got.map, ref.map);
      for (std::size_t k = 1; k < got.cmc.size(); ++k)
        if (got.cmc[k] < got.cmc[k - 1]) ++res.non_monotone;
    }
    ++res.metrics.instances;
  }
  return res;
}

struct FusedCheck {
  Result decomposition;
  std::size_t ranking_mismatches = 0;
  std::size_t rankings = 0;
};

/// S = ||d_app||^2 + lambda^2 ||d_att||^2, and lambda = 0 ranks exactly as
/// appearance alone.
inline FusedCheck fused_distance_properties(std::size_t instances, std::uint64_t seed) {
  FusedCheck res;
  res.decomposition.tolerance = 1e-6;
  Rng rng = derive_rng(seed, "check/fused");
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t da = pick(rng, 1, 16), dt = pick(rng, 1, 16);
    const auto items = random_items(rng, pick(rng, 3, 20), pick(rng, 1, 5), da, dt, i % 2 == 0);
    const double lambda = uniform(rng, 0, 2);
    for (std::size_t a = 0; a + 1 < items.size(); ++a) {
      const auto ra = to_record(items[a], 0), rb = to_record(items[a + 1], 1);
      double app = 0, att = 0;
      for (std::size_t k = 0; k < da; ++k) app += std::pow(ra.f_app[k] - rb.f_app[k], 2);
      for (std::size_t k = 0; k < dt; ++k) att += std::pow(ra.f_att[k] - rb.f_att[k], 2);
      res.decomposition.record(fused_distance(ra, rb, lambda), app + lambda * lambda * att);
    }
    std::vector<EmbeddingRecord> with_att, app_only;
    for (std::size_t k = 0; k < items.size(); ++k) {
      with_att.push_back(to_record(items[k], static_cast<int>(k)));
      app_only.push_back(with_att.back());
      app_only.back().f_att.clear();
    }
    const auto r0 = evaluate(with_att, with_att, Protocol::pairwise, 0.0, true);
    const auto r1 = evaluate(app_only, app_only, Protocol::pairwise, 0.0, true);
    for (std::size_t q = 0; q < r0.rankings.size(); ++q) {
      ++res.rankings;
      if (r0.rankings[q].order != r1.rankings[q].order) ++res.ranking_mismatches;
    }
    ++res.decomposition.instances;
  }
  return res;
}

}  // namespace checks
