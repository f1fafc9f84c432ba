#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "talnet/config.hpp"
#include "talnet/data/video.hpp"
#include "talnet/losses.hpp"
#include "talnet/model/talnet.hpp"
#include "talnet/numerics/checkpoint.hpp"
#include "talnet/retrieval.hpp"

namespace talnet {

/// SGD with momentum and L2 weight decay in the PyTorch formulation:
/// g += wd * w; v = mu * v + g; w -= lr * (nesterov ? g + mu * v : v).
template <typename T>
class SGD {
 public:
  SGD(ParameterStore<T>& store, const OptimConfig& cfg) : store_(store), cfg_(cfg) {
    for (const auto& p : store_.all()) velocity_.emplace_back(p.tensor.size(), T(0));
  }

  /// Updates every parameter accepted by `trainable`; the others keep both
  /// their values and their momentum. Each tensor's gradient is rescaled to
  /// norm at most max_grad_norm.
  void step(double lr, const std::function<bool(const std::string&)>& trainable) {
    const T mu = static_cast<T>(cfg_.momentum), wd = static_cast<T>(cfg_.weight_decay), rate = static_cast<T>(lr);
    auto& params = store_.all();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!trainable(p.name)) continue;
      auto w = p.tensor.data();
      const bool has = p.tensor.has_grad();
      T clip = T(1);
      if (has && cfg_.max_grad_norm > 0) {
        double sq = 0;
        for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
        if (std::sqrt(sq) > cfg_.max_grad_norm) clip = static_cast<T>(cfg_.max_grad_norm / std::sqrt(sq));
      }
      auto& v = velocity_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const T g = (has ? p.tensor.grad()[k] * clip : T(0)) + wd * w[k];
        v[k] = mu * v[k] + g;
        w[k] -= rate * (cfg_.nesterov ? g + mu * v[k] : v[k]);
      }
    }
  }

 private:
  ParameterStore<T>& store_;
  OptimConfig cfg_;
  std::vector<std::vector<T>> velocity_;
};

struct StepRecord {
  std::size_t step = 0;
  int stage = 1;
  std::size_t epoch = 0;
  double tri = NAN, ide = NAN, att = NAN, total = NAN;
};

struct EpochRecord {
  std::size_t epoch = 0;  // global, from 1
  int stage = 1;
  double lr = 0;
  double tri = NAN, ide = NAN, att = NAN, total = NAN;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t stage1_epochs_run = 0;
  bool stage1_plateaued = false;
  double seconds = 0;
};

namespace train_detail {
inline std::string field(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}
}  // namespace train_detail

/// step,L_tri,L_ide,L_att,L; terms of a disabled branch are left empty.
inline void write_step_csv(std::ostream& os, const TrainLog& log) {
  using train_detail::field;
  os << "step,L_tri,L_ide,L_att,L\n";
  for (const auto& s : log.steps)
    os << s.step << "," << field(s.tri) << "," << field(s.ide) << "," << field(s.att) << "," << field(s.total) << "\n";
}

inline void write_epoch_csv(std::ostream& os, const TrainLog& log) {
  using train_detail::field;
  os << "epoch,stage,lr,L_tri,L_ide,L_att,L\n";
  for (const auto& e : log.epochs)
    os << e.epoch << "," << e.stage << "," << field(e.lr) << "," << field(e.tri) << "," << field(e.ide) << ","
       << field(e.att) << "," << field(e.total) << "\n";
}

/// Writes to a sibling temporary file and renames it over `path`, so a
/// reader never sees a half-written checkpoint.
template <typename T>
void save_checkpoint_atomic(const std::string& path, const TALNet<T>& model, const TrainConfig& cfg,
                            std::map<std::string, std::string> extra = {}) {
  auto meta = config_meta(cfg);
  meta.merge(extra);
  const std::string tmp = path + ".tmp";
  save_checkpoint(tmp, model.parameters(), cfg.optim.seed, model.config().hash(), meta);
  std::filesystem::rename(tmp, path);
}

/// Model configuration for a dataset: the schema comes from the data, the
/// class count from its identities.
inline ModelConfig model_config_for(const TrainConfig& cfg, const Dataset& train_set) {
  ModelConfig m = cfg.model;
  m.schema = train_set.schema;
  m.num_classes = train_set.identities().size();
  m.backbone.in_channels = train_set.shape.channels;
  m.backbone.height = train_set.shape.height;
  m.backbone.width = train_set.shape.width;
  if (m.precomputed_features) {
    m.backbone.channels = {train_set.shape.channels};
    m.backbone.pooled_blocks = 0;
  }
  return m;
}

/// Replaces every frame of `ds` by its backbone feature map, giving a dataset
/// for models with `precomputed_features` set.
template <typename T>
Dataset feature_dataset(const Backbone<T>& backbone, const Dataset& ds) {
  const auto& bc = backbone.config();
  Dataset out{ds.schema, FrameShape{bc.out_channels(), bc.out_height(), bc.out_width()}, {}};
  NoGradGuard guard;
  for (const auto& s : ds.sequences) {
    Tensor<T> frames({s.frame_count(), ds.shape.channels, ds.shape.height, ds.shape.width},
                     std::vector<T>(s.pixels.begin(), s.pixels.end()));
    const auto fm = backbone.forward(frames);
    VideoSequence f{s.sequence_id, s.identity, s.camera, s.attribute_labels, out.shape, {}};
    f.pixels.assign(fm.data().begin(), fm.data().end());
    out.sequences.push_back(std::move(f));
  }
  return out;
}

/// Rebuilds a model from a checkpoint written by `train`.
template <typename T>
std::pair<TrainConfig, std::unique_ptr<TALNet<T>>> load_model(const std::string& path) {
  const auto ck = load_checkpoint<T>(path);
  TrainConfig cfg = config_from_meta(ck.meta);
  auto model = std::make_unique<TALNet<T>>(cfg.model);
  if (model->config().hash() != ck.model_config_hash)
    throw CheckpointError(path + ": model configuration hash does not match its metadata");
  apply_checkpoint(ck, model->parameters());
  return {cfg, std::move(model)};
}

struct TrainOptions {
  std::string out_dir;              // empty: no files written
  std::ostream* progress = nullptr;  // one line per epoch
};

namespace train_detail {

inline bool is_attribute_param(const std::string& name) { return name.rfind("att.", 0) == 0; }

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return NAN;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace train_detail

/// True once the mean of the last `window` epoch losses improves on the mean
/// of the `window` epochs before it by less than `tol` (relative).
inline bool loss_plateaued(const std::vector<double>& history, std::size_t window, double tol) {
  if (window == 0 || history.size() < 2 * window) return false;
  const auto end = history.end();
  const double now = std::accumulate(end - window, end, 0.0) / window;
  const double before = std::accumulate(end - 2 * window, end - window, 0.0) / window;
  return (before - now) / std::abs(before) < tol;
}

/// Two-stage optimisation. Stage 1 trains the backbone and appearance branch
/// until its epoch budget runs out or the epoch loss plateaus; stage 2
/// trains everything jointly with one step decay of the learning rate.
///
/// Throws NumericalError on a non-finite loss after writing the current
/// (last good) parameters to the checkpoint.
template <typename T>
TrainLog train(TALNet<T>& model, const TrainConfig& cfg, const Dataset& train_set, const TrainOptions& opt = {}) {
  cfg.validate();
  const auto& mc = model.config();
  const auto start = std::chrono::steady_clock::now();
  TrainLog log;

  std::map<int, int> class_of;
  for (int id : train_set.identities()) class_of.emplace(id, static_cast<int>(class_of.size()));
  if (mc.use_app && class_of.size() != mc.num_classes)
    throw ConfigError("model has " + std::to_string(mc.num_classes) + " identity classes but the training set has " +
                      std::to_string(class_of.size()));

  const ClipPool pool(train_set, mc.clip_length);
  const std::size_t batch = cfg.optim.batch_identities * cfg.optim.clips_per_identity;
  const std::size_t steps_per_epoch =
      cfg.optim.steps_per_epoch ? cfg.optim.steps_per_epoch : std::max<std::size_t>(1, pool.clip_count() / batch);

  SGD<T> sgd(model.parameters(), cfg.optim);
  Rng rng = derive_rng(cfg.optim.seed, "batches");
  const std::string ckpt = opt.out_dir.empty() ? "" : (std::filesystem::path(opt.out_dir) / "checkpoint.txt").string();
  std::ofstream step_csv, epoch_csv;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    step_csv.open(std::filesystem::path(opt.out_dir) / "losses.csv");
    epoch_csv.open(std::filesystem::path(opt.out_dir) / "epochs.csv");
    step_csv << "step,L_tri,L_ide,L_att,L\n";
    epoch_csv << "epoch,stage,lr,L_tri,L_ide,L_att,L\n";
  }

  std::size_t step = 0, epoch = 0;
  auto run_epoch = [&](int stage, double lr) {
    ++epoch;
    const bool joint = stage == 2;
    std::vector<double> tri, ide, att, total;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      auto clips = pk_sample(pool, cfg.optim.batch_identities, cfg.optim.clips_per_identity, rng);
      std::vector<int> labels;
      std::vector<std::vector<int>> attrs;
      for (auto& c : clips) {
        c = random_erase(std::move(c), cfg.optim.erase_prob, rng);
        labels.push_back(class_of.at(c.identity));
        attrs.push_back(c.attribute_labels);
      }
      const bool with_att = joint && mc.use_att;
      const auto out = model.forward(clips_to_tensor<T>(clips), clips.size(), with_att);
      auto terms = compute_losses(out, labels, attrs, cfg.loss, with_att);

      StepRecord rec;
      rec.step = ++step;
      rec.stage = stage;
      rec.epoch = epoch;
      rec.total = terms.total.item();
      if (terms.tri.defined()) rec.tri = terms.tri.item();
      if (terms.ide.defined()) rec.ide = terms.ide.item();
      if (terms.att.defined()) rec.att = terms.att.item();
      if (step_csv.is_open())
        step_csv << rec.step << "," << train_detail::field(rec.tri) << "," << train_detail::field(rec.ide) << ","
                 << train_detail::field(rec.att) << "," << train_detail::field(rec.total) << "\n";
      log.steps.push_back(rec);
      if (!std::isfinite(rec.total)) {
        if (!ckpt.empty()) save_checkpoint_atomic(ckpt, model, cfg, {{"status", "aborted"}});
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
      }

      model.parameters().zero_grad();
      terms.total.backward();
      sgd.step(lr, [&](const std::string& name) { return joint || !train_detail::is_attribute_param(name); });
      tri.push_back(rec.tri);
      ide.push_back(rec.ide);
      att.push_back(rec.att);
      total.push_back(rec.total);
    }
    EpochRecord e{epoch, stage, lr, train_detail::mean_of(tri), train_detail::mean_of(ide), train_detail::mean_of(att),
                  train_detail::mean_of(total)};
    log.epochs.push_back(e);
    if (epoch_csv.is_open()) {
      epoch_csv << e.epoch << "," << e.stage << "," << train_detail::field(e.lr) << "," << train_detail::field(e.tri) << ","
                << train_detail::field(e.ide) << "," << train_detail::field(e.att) << "," << train_detail::field(e.total)
                << "\n";
      epoch_csv.flush();
      step_csv.flush();
    }
    if (opt.progress) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::ostringstream line;
      line << "epoch " << e.epoch << " stage " << stage << " lr " << lr << " loss " << e.total << " (" << std::fixed
           << std::setprecision(1) << secs << " s)\n";
      *opt.progress << line.str() << std::flush;
    }
    if (!ckpt.empty() && cfg.optim.checkpoint_every && epoch % cfg.optim.checkpoint_every == 0)
      save_checkpoint_atomic(ckpt, model, cfg);
    return e.total;
  };

  const bool stage1 = mc.use_app && cfg.optim.stage != Stage::joint;
  if (stage1) {
    std::vector<double> history;
    for (std::size_t e = 0; e < cfg.optim.stage1_epochs; ++e) {
      history.push_back(run_epoch(1, cfg.optim.lr));
      ++log.stage1_epochs_run;
      if (loss_plateaued(history, cfg.optim.plateau_window, cfg.optim.plateau_tol)) {
        log.stage1_plateaued = true;
        break;
      }
    }
  }
  if (cfg.optim.stage != Stage::appearance_only)
    for (std::size_t e = 0; e < cfg.optim.epochs; ++e)
      run_epoch(2, e < cfg.optim.decay_epoch ? cfg.optim.lr : cfg.optim.lr * cfg.optim.decay_factor);

  if (!ckpt.empty()) save_checkpoint_atomic(ckpt, model, cfg, {{"status", "complete"}});
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

/// Descriptor of every sequence in `ds`. Random-sample pooling draws its
/// frames from a stream tied to `seed` and the sequence id.
template <typename T>
std::vector<EmbeddingRecord> describe_dataset(const TALNet<T>& model, const Dataset& ds, Pooling pooling,
                                              std::uint64_t seed = 1) {
  std::vector<EmbeddingRecord> recs;
  for (const auto& s : ds.sequences) {
    Rng rng = derive_rng(seed, "random-sample/" + std::to_string(s.sequence_id));
    recs.push_back(video_descriptor(s, model, model.config().clip_length, pooling, &rng));
  }
  return recs;
}

/// Every test sequence queries all the others.
template <typename T>
RankingResult evaluate_model(const TALNet<T>& model, const Dataset& test_set, const TrainConfig& cfg,
                             std::optional<Pooling> pooling = std::nullopt) {
  const auto recs = describe_dataset(model, test_set, pooling.value_or(cfg.eval.pooling), cfg.optim.seed);
  return evaluate(recs, recs, cfg.eval.protocol, cfg.loss.lambda_sim);
}

/// Raw-pixel nearest-neighbour baseline on the same protocol.
inline RankingResult evaluate_raw_pixels(const Dataset& test_set, Protocol protocol) {
  std::vector<EmbeddingRecord> recs;
  for (const auto& s : test_set.sequences) recs.push_back(raw_pixel_descriptor(s));
  return evaluate(recs, recs, protocol, 0.0);
}

struct Variant {
  std::string name;
  std::function<void(ModelConfig&)> apply;
  bool pooling_rows = false;  // also evaluate max and random-sample pooling
};

/// The comparison set: full model, each branch alone, and the branch
/// ablations.
inline std::vector<Variant> default_variants() {
  return {
      {"TALNet", [](ModelConfig&) {}, true},
      {"TALNet_w/o_App", [](ModelConfig& m) { m.use_app = false; }},
      {"TALNet_w/o_Att", [](ModelConfig& m) { m.use_att = false; }},
      {"AppNet_w/o_GRU", [](ModelConfig& m) { m.use_att = false; m.use_gru = false; }},
      {"AttNet_w/o_ST",
       [](ModelConfig& m) {
         m.use_app = false;
         m.use_spatial_attention = false;
         m.use_ts_context = false;
       }},
      {"AttNet_w/o_T", [](ModelConfig& m) { m.use_app = false; m.use_ts_context = false; }},
      {"AttNet_w/o_C", [](ModelConfig& m) { m.use_app = false; m.use_context_memory = false; }},
  };
}

inline std::vector<Variant> select_variants(const std::vector<std::string>& names) {
  const auto all = default_variants();
  if (names.empty()) return all;
  std::vector<Variant> out;
  for (const auto& n : names) {
    auto it = std::find_if(all.begin(), all.end(), [&](const Variant& v) { return v.name == n; });
    if (it == all.end()) throw ConfigError("unknown ablation variant: " + n);
    out.push_back(*it);
  }
  return out;
}

struct AblationRow {
  std::string variant;
  Pooling pooling = Pooling::mean;
  std::vector<double> rank1, map;  // one entry per seed

  double mean_rank1() const { return train_detail::mean_of(rank1); }
  double mean_map() const { return train_detail::mean_of(map); }
};

/// Trains every variant once per seed on the same split and evaluates it.
/// Variants flagged for pooling rows are also scored with max and
/// random-sample pooling.
template <typename T = float>
std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<Variant>& variants, const Dataset& train_set,
                                const Dataset& test_set, const TrainOptions& opt = {}) {
  std::vector<AblationRow> rows;
  auto row = [&](const std::string& name, Pooling p) -> AblationRow& {
    for (auto& r : rows)
      if (r.variant == name && r.pooling == p) return r;
    rows.push_back({name, p, {}, {}});
    return rows.back();
  };
  for (const auto& v : variants) {
    for (auto seed : base.seeds) {
      TrainConfig cfg = base;
      cfg.optim.seed = seed;
      v.apply(cfg.model);
      cfg.model = model_config_for(cfg, train_set);
      TALNet<T> model(cfg.model);
      model.initialize(seed);
      TrainOptions o = opt;
      if (!opt.out_dir.empty()) {
        std::string dir = v.name;
        std::replace(dir.begin(), dir.end(), '/', '_');
        o.out_dir = (std::filesystem::path(opt.out_dir) / (dir + "_seed" + std::to_string(seed))).string();
      }
      if (opt.progress) *opt.progress << "== " << v.name << " seed " << seed << "\n";
      train(model, cfg, train_set, o);
      std::vector<Pooling> poolings{Pooling::mean};
      if (v.pooling_rows) poolings = {Pooling::mean, Pooling::max, Pooling::random_sample};
      for (auto p : poolings) {
        const auto r = evaluate_model(model, test_set, cfg, p);
        auto& dst = row(v.name, p);
        dst.rank1.push_back(r.rank(1));
        dst.map.push_back(r.map);
        if (opt.progress) *opt.progress << "   " << to_string(p) << " Rank-1 " << r.rank(1) << " mAP " << r.map << "\n";
      }
    }
  }
  return rows;
}

inline void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,pooling,seeds,rank1,mAP";
  std::size_t n = 0;
  for (const auto& r : rows) n = std::max(n, r.rank1.size());
  for (std::size_t s = 0; s < n; ++s) os << ",rank1_s" << s + 1;
  os << "\n" << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.variant << "," << to_string(r.pooling) << "," << r.rank1.size() << "," << r.mean_rank1() << "," << r.mean_map();
    for (double v : r.rank1) os << "," << v;
    os << "\n";
  }
}

}  // namespace talnet
