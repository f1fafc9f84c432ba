#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "talnet/model/talnet.hpp"
#include "talnet/numerics/ops.hpp"

namespace talnet {

struct LossWeights {
  double margin = 0.3;        // triplet margin
  double epsilon = 0.1;       // label smoothing
  double lambda_total = 0.3;  // weight of the attribute loss
  double lambda_sim = 0.3;    // weight of attribute features in the fused distance
  bool squared_distance = true;
  bool triplet_on_concat = false;  // one triplet term on [g, p_1..p_H] instead of one per feature

  void validate() const {
    if (margin < 0) throw std::invalid_argument("triplet margin must be >= 0");
    if (epsilon < 0 || epsilon >= 1) throw std::invalid_argument("label smoothing must lie in [0, 1)");
    if (lambda_total < 0 || lambda_sim < 0) throw std::invalid_argument("loss weights must be >= 0");
  }
};

/// I identities with V clips each, identity blocks contiguous.
struct BatchStructure {
  std::size_t identities = 0, clips_per_identity = 0;

  std::vector<int> labels() const {
    std::vector<int> l;
    for (std::size_t i = 0; i < identities; ++i)
      for (std::size_t v = 0; v < clips_per_identity; ++v) l.push_back(static_cast<int>(i));
    return l;
  }
};

/// For each anchor, the hardest positive (largest distance, same label,
/// anchor included) and hardest negative (smallest distance, other label).
/// Ties go to the lowest index. Returns flat indices into the (n, n) matrix.
template <typename T>
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> mine_batch_hard(const std::vector<T>& dist,
                                                                              const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> pos(n), neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::size_t> hp, hn;
    for (std::size_t j = 0; j < n; ++j) {
      const T v = dist[i * n + j];
      if (labels[j] == labels[i]) {
        if (!hp || v > dist[i * n + *hp]) hp = j;
      } else if (!hn || v < dist[i * n + *hn]) {
        hn = j;
      }
    }
    if (!hn) throw std::invalid_argument("batch-hard triplet needs at least two identities");
    pos[i] = i * n + *hp;
    neg[i] = i * n + *hn;
  }
  return {pos, neg};
}

/// Sum over anchors of [margin + D(hardest positive) - D(hardest negative)]_+.
template <typename T>
Tensor<T> triplet_batch_hard(const Tensor<T>& features, const std::vector<int>& labels, double margin,
                             bool squared = true) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw ShapeError("triplet_batch_hard", features.shape(), Shape{labels.size(), 0});
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("batch-hard triplet needs I >= 2 identities");
  for (const auto& [id, c] : counts)
    if (c < 2) throw std::invalid_argument("batch-hard triplet needs V >= 2 clips per identity");

  const auto d2 = pairwise_sq_dist(features);
  const auto [pos, neg] = mine_batch_hard(d2.values(), labels);
  auto hp = gather(d2, pos), hn = gather(d2, neg);
  if (!squared) {
    hp = sqrt(clamp_min(hp, T(1e-12)));
    hn = sqrt(clamp_min(hn, T(1e-12)));
  }
  return sum(relu(affine(sub(hp, hn), T(1), static_cast<T>(margin))));
}

template <typename T>
Tensor<T> triplet_batch_hard(const Tensor<T>& features, const BatchStructure& s, double margin, bool squared = true) {
  if (s.identities < 2 || s.clips_per_identity < 2) throw std::invalid_argument("batch-hard triplet needs I >= 2 and V >= 2");
  return triplet_batch_hard(features, s.labels(), margin, squared);
}

/// -mean over rows of log((1 - eps) * q_y + eps / G), q = softmax(logits).
template <typename T>
Tensor<T> ce_label_smooth(const Tensor<T>& logits, const std::vector<int>& targets, double epsilon) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw ShapeError("ce_label_smooth", logits.shape(), Shape{targets.size(), 0});
  const std::size_t g = logits.dim(1);
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= g)
      throw std::out_of_range("ce_label_smooth: target " + std::to_string(targets[r]) + " outside " + std::to_string(g) + " classes");
    idx.push_back(r * g + static_cast<std::size_t>(targets[r]));
  }
  const auto q = gather(softmax(logits, 1), idx);
  const T eps = static_cast<T>(epsilon);
  return scale(mean(log(affine(q, T(1) - eps, eps / static_cast<T>(g)))), T(-1));
}

template <typename T>
struct LossTerms {
  Tensor<T> tri, ide, att, total;  // att / tri / ide are undefined when their branch is off
};

/// Triplet and identity terms over the global feature and every stripe.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> appearance_loss(const AppearanceOutput<T>& app, const std::vector<int>& labels,
                                                const LossWeights& w) {
  Tensor<T> tri;
  if (w.triplet_on_concat) {
    tri = triplet_batch_hard(app.f_app, labels, w.margin, w.squared_distance);
  } else {
    tri = triplet_batch_hard(app.global, labels, w.margin, w.squared_distance);
    for (const auto& p : app.parts) tri = add(tri, triplet_batch_hard(p, labels, w.margin, w.squared_distance));
  }
  Tensor<T> ide = ce_label_smooth(app.global_logits, labels, w.epsilon);
  for (const auto& q : app.part_logits) ide = add(ide, ce_label_smooth(q, labels, w.epsilon));
  return {tri, ide};
}

/// Sum over attributes of the smoothed CE; targets[r][n] is row r's label
/// for attribute n.
template <typename T>
Tensor<T> attribute_loss(const std::vector<Tensor<T>>& logits, const std::vector<std::vector<int>>& targets,
                         double epsilon) {
  if (logits.empty()) throw std::invalid_argument("attribute loss needs at least one head");
  Tensor<T> total;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    std::vector<int> col;
    for (const auto& row : targets) col.push_back(row.at(n));
    const auto term = ce_label_smooth(logits[n], col, epsilon);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_app, const Tensor<T>& l_att, double lambda) {
  return add(l_app, scale(l_att, static_cast<T>(lambda)));
}

/// Full objective for one batch. `identity_labels` are class indices in
/// [0, G); `attribute_labels[r]` the attribute vector of row r.
template <typename T>
LossTerms<T> compute_losses(const ModelOutput<T>& out, const std::vector<int>& identity_labels,
                            const std::vector<std::vector<int>>& attribute_labels, const LossWeights& w,
                            bool include_attributes = true) {
  LossTerms<T> terms;
  Tensor<T> l_app;
  if (out.app) {
    auto [tri, ide] = appearance_loss(*out.app, identity_labels, w);
    terms.tri = tri;
    terms.ide = ide;
    l_app = add(tri, ide);
  }
  if (include_attributes && !out.attr_logits.empty()) terms.att = attribute_loss(out.attr_logits, attribute_labels, w.epsilon);
  if (l_app.defined() && terms.att.defined()) {
    terms.total = total_loss(l_app, terms.att, w.lambda_total);
  } else if (l_app.defined()) {
    terms.total = l_app;
  } else if (terms.att.defined()) {
    terms.total = terms.att;
  } else {
    throw std::invalid_argument("no loss terms: both branches are off");
  }
  return terms;
}

}  // namespace talnet
