#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "talnet/data/schema.hpp"
#include "talnet/model/appearance.hpp"
#include "talnet/model/attr_attention.hpp"
#include "talnet/model/backbone.hpp"
#include "talnet/model/ts_context.hpp"
#include "talnet/numerics/random.hpp"

namespace talnet {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t clip_length = 8;
  std::size_t primitive_channels = 64, region_grid = 4;
  std::size_t d_v = 64, d = 64, d_att = 64;
  std::size_t d_g = 64, d_p = 64, stripes = 4;
  std::size_t num_classes = 20;
  AttributeSchema schema = synthetic_schema();

  bool use_app = true;
  bool use_att = true;
  bool use_spatial_attention = true;
  bool use_ts_context = true;
  bool use_context_memory = true;
  bool use_gru = true;
  bool normalize_gates = false;
  bool second_pass_reads_v = false;
  bool per_part_gru = false;
  bool precomputed_features = false;  // inputs are feature maps; the backbone is skipped

  void validate() const {
    backbone.validate();
    if (precomputed_features && (backbone.pooled_blocks != 0 || backbone.channels.size() != 1))
      throw std::invalid_argument("precomputed features need a single-entry channel list and no pooling");
    if (!use_app && !use_att) throw std::invalid_argument("at least one of use_app / use_att must be enabled");
    if (clip_length == 0) throw std::invalid_argument("clip length must be positive");
    if (use_att) schema.validate();
    if (use_att && !use_ts_context && d_v != d) throw std::invalid_argument("without the TS context block d_v must equal d");
  }

  /// Every field that changes parameter shapes or the forward computation.
  std::string canonical() const {
    std::ostringstream os;
    os << "in=" << backbone.in_channels << "x" << backbone.height << "x" << backbone.width << ";bb=";
    for (auto c : backbone.channels) os << c << ",";
    os << ";pool=" << backbone.pooled_blocks << ";T=" << clip_length << ";P=" << primitive_channels
       << ";g=" << region_grid << ";dv=" << d_v << ";d=" << d << ";datt=" << d_att << ";dg=" << d_g << ";dp=" << d_p
       << ";H=" << stripes << ";G=" << num_classes << ";order=" << to_string(schema.order) << ";attrs=";
    for (const auto& a : schema.attributes) os << a.name << "/" << a.category_count() << ",";
    os << ";flags=" << use_app << use_att << use_spatial_attention << use_ts_context << use_context_memory << use_gru
       << normalize_gates << second_pass_reads_v << per_part_gru << precomputed_features;
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }
};

template <typename T>
struct ModelOutput {
  std::optional<AppearanceOutput<T>> app;
  std::vector<Tensor<T>> attr_features;  // schema order, (B, d)
  std::vector<Tensor<T>> attr_logits;    // schema order, (B, m_n)
  Tensor<T> f_att;                       // (B, N * d)
  std::vector<Tensor<T>> region_bounds;  // schema order, (B * T, 4)
  std::optional<AttentionScores<T>> scores;  // lattice (processing) order, (N, T, B)
};

/// Backbone feeding an appearance branch and an attribute branch.
template <typename T>
class TALNet {
 public:
  explicit TALNet(const ModelConfig& cfg) : cfg_((cfg.validate(), cfg)) {
    if (!cfg_.precomputed_features) backbone_.emplace(cfg_.backbone, store_);
    const auto& bb = cfg_.backbone;
    if (cfg_.use_app) {
      AppearanceConfig ac;
      ac.in_channels = bb.out_channels();
      ac.map_height = bb.out_height();
      ac.stripes = cfg_.stripes;
      ac.d_g = cfg_.d_g;
      ac.d_p = cfg_.d_p;
      ac.num_classes = cfg_.num_classes;
      ac.use_gru = cfg_.use_gru;
      ac.per_part_gru = cfg_.per_part_gru;
      app_.emplace(ac, store_);
    }
    if (cfg_.use_att) {
      order_ = processing_order(cfg_.schema);
      SpatialAttentionConfig sc;
      sc.in_channels = bb.out_channels();
      sc.map_height = bb.out_height();
      sc.map_width = bb.out_width();
      sc.primitive_channels = cfg_.primitive_channels;
      sc.grid = cfg_.region_grid;
      sc.d_v = cfg_.d_v;
      sc.enabled = cfg_.use_spatial_attention;
      spatial_.emplace(sc, cfg_.schema.size(), store_);
      if (cfg_.use_ts_context) {
        TSContextConfig tc;
        tc.d_in = cfg_.d_v;
        tc.d = cfg_.d;
        tc.d_att = cfg_.d_att;
        tc.normalize_gates = cfg_.normalize_gates;
        tc.second_pass_reads_v = cfg_.second_pass_reads_v;
        tc.use_context_memory = cfg_.use_context_memory;
        ts_.emplace(tc, store_);
      }
      heads_.emplace(cfg_.use_ts_context ? cfg_.d : cfg_.d_v, cfg_.schema.category_counts(), store_, "att.heads.");
    }
  }

  TALNet(const TALNet&) = delete;
  TALNet& operator=(const TALNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  bool has_backbone() const { return backbone_.has_value(); }
  const Backbone<T>& backbone() const { return *backbone_; }
  const std::vector<std::size_t>& attribute_order() const { return order_; }

  void initialize(std::uint64_t seed) { store_.initialize(seed); }

  /// frames: (clips * T, C, H, W), clip-major; feature maps when the model
  /// takes precomputed features.
  /// `attributes = false` skips the attribute branch (appearance-only stage).
  ModelOutput<T> forward(const Tensor<T>& frames, std::size_t clips, bool attributes = true) const {
    return forward_features(backbone_ ? backbone_->forward(frames) : frames, clips, attributes);
  }

  /// Entry point for precomputed feature maps (clips * T, Cf, Hm, Wm).
  ModelOutput<T> forward_features(const Tensor<T>& fm, std::size_t clips, bool attributes = true) const {
    const auto& bb = cfg_.backbone;
    if (fm.rank() != 4 || fm.dim(1) != bb.out_channels() || fm.dim(2) != bb.out_height() || fm.dim(3) != bb.out_width() ||
        clips == 0 || fm.dim(0) != clips * cfg_.clip_length)
      throw ShapeError("talnet", fm.shape(), Shape{clips * cfg_.clip_length, bb.out_channels(), bb.out_height(), bb.out_width()});
    ModelOutput<T> out;
    if (app_) out.app = app_->forward(fm, clips);
    if (spatial_ && attributes) attribute_branch(fm, clips, out);
    return out;
  }

 private:
  void attribute_branch(const Tensor<T>& fm, std::size_t clips, ModelOutput<T>& out) const {
    const std::size_t t_len = cfg_.clip_length, n = cfg_.schema.size();
    auto sa = spatial_->forward(fm);
    out.region_bounds = sa.bounds;
    out.attr_features.resize(n);
    if (ts_) {
      std::vector<Tensor<T>> lattice_rows;
      for (std::size_t k = 0; k < n; ++k)
        lattice_rows.push_back(reshape(sa.features[order_[k]], {clips, t_len, cfg_.d_v}));
      const auto v = permute(stack(lattice_rows, 0), {0, 2, 1, 3});  // (N, T, B, d_v)
      auto ts = ts_->forward(v);
      for (std::size_t k = 0; k < n; ++k) out.attr_features[order_[k]] = select(ts.readout, 0, k);
      out.scores = std::move(ts.scores);
    } else {
      for (std::size_t a = 0; a < n; ++a)
        out.attr_features[a] = mean_axis(reshape(sa.features[a], {clips, t_len, cfg_.d_v}), 1);
    }
    out.attr_logits = (*heads_)(out.attr_features);
    out.f_att = concat(out.attr_features, 1);
  }

  ModelConfig cfg_;
  ParameterStore<T> store_;
  std::optional<Backbone<T>> backbone_;
  std::optional<AppearanceBranch<T>> app_;
  std::optional<SpatialAttention<T>> spatial_;
  std::optional<TSContextBlock<T>> ts_;
  std::optional<AttributeHeads<T>> heads_;
  std::vector<std::size_t> order_;
};

}  // namespace talnet
