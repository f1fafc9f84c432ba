#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "talnet/losses.hpp"
#include "talnet/model/talnet.hpp"
#include "talnet/numerics/grad_check.hpp"

namespace talnet {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
  double seconds = 0;
};

namespace diag_detail {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = scale * normal(rng);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

/// Re-draws every parameter from N(0, scale^2) so zero-initialised layers
/// also carry gradient.
inline void randomize(ParameterStore<double>& store, Rng& rng, double scale) {
  for (auto& p : store.all())
    for (auto& v : p.tensor.data()) v = scale * normal(rng);
}

inline std::vector<NamedTensor> named(const ParameterStore<double>& store) {
  std::vector<NamedTensor> out;
  for (const auto& p : store.all()) out.emplace_back(p.name, p.tensor);
  return out;
}

/// Fixed random projection of a tensor to a scalar.
inline Tensor<double> probe(const Tensor<double>& x, const Tensor<double>& weights) {
  return sum(mul(x, weights));
}

inline GradCheckCase timed(const std::string& name, const std::function<GradCheckReport()>& run) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckCase c{name, run(), 0};
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return c;
}

}  // namespace diag_detail

/// Finite-difference checks of every trainable block on small random
/// instances, in double precision.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 1, const GradCheckOptions& base = {}) {
  using namespace diag_detail;
  std::vector<GradCheckCase> cases;
  GradCheckOptions opt = base;
  opt.seed = seed;

  cases.push_back(timed("backbone", [&] {
    Rng rng = derive_rng(seed, "gc/backbone");
    ParameterStore<double> store;
    BackboneConfig cfg;
    cfg.in_channels = 2;
    cfg.height = 16;
    cfg.width = 16;
    cfg.channels = {3, 4};
    Backbone<double> bb(cfg, store);
    store.initialize(seed);
    const auto x = random_tensor(rng, {2, 2, 16, 16});
    const auto w = random_tensor(rng, {2, 4, 4, 4});
    return grad_check([&] { return probe(bb.forward(x), w); }, named(store), opt);
  }));

  cases.push_back(timed("spatial_attention", [&] {
    Rng rng = derive_rng(seed, "gc/spatial");
    ParameterStore<double> store;
    SpatialAttentionConfig cfg;
    cfg.in_channels = 3;
    cfg.map_height = 8;
    cfg.map_width = 4;
    cfg.primitive_channels = 4;
    cfg.conv1 = 3;
    cfg.conv2 = 2;
    cfg.fc = 5;
    cfg.d_v = 3;
    SpatialAttention<double> sa(cfg, 2, store);
    randomize(store, rng, 0.4);
    const auto fm = random_tensor(rng, {3, 3, 8, 4});
    const auto w = random_tensor(rng, {3, 3});
    return grad_check(
        [&] {
          const auto out = sa.forward(fm);
          return add(probe(out.features[0], w), probe(out.features[1], w));
        },
        named(store), opt);
  }));

  cases.push_back(timed("ts_gru_lattice", [&] {
    Rng rng = derive_rng(seed, "gc/lattice");
    ParameterStore<double> store;
    TSGRUCell<double> cell(5, 8, store, "gru.");
    randomize(store, rng, 0.3);
    const auto v = random_tensor(rng, {3, 4, 2, 5});
    const auto w = random_tensor(rng, {3, 4, 2, 8});
    return grad_check([&] { return probe(first_pass(cell, v), w); }, named(store), opt);
  }));

  cases.push_back(timed("ts_context_second_pass", [&] {
    Rng rng = derive_rng(seed, "gc/context");
    ParameterStore<double> store;
    TSContextConfig cfg;
    cfg.d_in = 5;
    cfg.d = 8;
    cfg.d_att = 6;
    TSContextBlock<double> block(cfg, store);
    AttributeHeads<double> heads(8, {2, 3, 2}, store, "heads.");
    randomize(store, rng, 0.3);
    const auto v = random_tensor(rng, {3, 4, 2, 5});
    const std::vector<std::vector<int>> targets{{1, 0, 1}, {0, 2, 0}};
    return grad_check(
        [&] {
          const auto out = block.forward(v);
          std::vector<Tensor<double>> feats;
          for (std::size_t a = 0; a < 3; ++a) feats.push_back(select(out.readout, 0, a));
          return attribute_loss(heads(feats), targets, 0.1);
        },
        named(store), opt);
  }));

  cases.push_back(timed("appearance_branch", [&] {
    Rng rng = derive_rng(seed, "gc/appearance");
    ParameterStore<double> store;
    AppearanceConfig cfg;
    cfg.in_channels = 3;
    cfg.map_height = 4;
    cfg.stripes = 4;
    cfg.d_g = 4;
    cfg.d_p = 3;
    cfg.num_classes = 3;
    AppearanceBranch<double> app(cfg, store);
    randomize(store, rng, 0.4);
    const auto fm = random_tensor(rng, {6 * 3, 3, 4, 2});
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    LossWeights lw;
    lw.margin = 5.0;  // keeps every hinge active
    return grad_check(
        [&] {
          const auto out = app.forward(fm, 6);
          auto [tri, ide] = appearance_loss(out, labels, lw);
          return add(tri, ide);
        },
        named(store), opt);
  }));

  cases.push_back(timed("triplet_loss", [&] {
    Rng rng = derive_rng(seed, "gc/triplet");
    const auto f = random_tensor(rng, {6, 4}, 1.0, true);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    return grad_check([&] { return triplet_batch_hard(f, labels, 3.0); }, {{"features", f}}, opt);
  }));

  cases.push_back(timed("label_smoothed_ce", [&] {
    Rng rng = derive_rng(seed, "gc/ce");
    const auto logits = random_tensor(rng, {5, 3}, 1.0, true);
    const std::vector<int> targets{0, 2, 1, 1, 0};
    return grad_check([&] { return ce_label_smooth(logits, targets, 0.1); }, {{"logits", logits}}, opt);
  }));

  cases.push_back(timed("full_model", [&] {
    Rng rng = derive_rng(seed, "gc/model");
    ModelConfig mc;
    mc.backbone.channels = {3, 4, 5};
    mc.backbone.height = 16;
    mc.backbone.width = 16;
    mc.clip_length = 3;
    mc.primitive_channels = 4;
    mc.d_v = 4;
    mc.d = 4;
    mc.d_att = 3;
    mc.d_g = 3;
    mc.d_p = 3;
    mc.num_classes = 2;
    TALNet<double> net(mc);
    net.initialize(seed);
    const std::size_t clips = 4;
    const auto x = random_tensor(rng, {clips * 3, 3, 16, 16}, 0.5);
    const std::vector<int> ids{0, 0, 1, 1};
    const std::vector<std::vector<int>> attrs{{0, 1, 0, 2}, {0, 1, 0, 2}, {1, 0, 1, 0}, {1, 0, 1, 0}};
    GradCheckOptions o = opt;
    o.max_coords_per_param = std::min<std::size_t>(opt.max_coords_per_param, 30);
    return grad_check([&] { return compute_losses(net.forward(x, clips), ids, attrs, LossWeights{}).total; },
                      named(net.parameters()), o);
  }));

  return cases;
}

inline bool write_gradcheck_report(std::ostream& os, const std::vector<GradCheckCase>& cases) {
  bool ok = true;
  for (const auto& c : cases) {
    ok = ok && c.report.passed;
    os << c.name << ": " << c.report.summary() << " (" << c.seconds << " s)\n";
  }
  os << (ok ? "all gradient checks passed" : "gradient check FAILED") << "\n";
  return ok;
}

}  // namespace talnet
