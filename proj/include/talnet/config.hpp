#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "talnet/data/synthetic.hpp"
#include "talnet/losses.hpp"
#include "talnet/model/talnet.hpp"
#include "talnet/retrieval.hpp"

namespace talnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Stage { two_stage, appearance_only, joint };

inline Stage parse_stage(const std::string& s) {
  if (s == "two-stage") return Stage::two_stage;
  if (s == "appearance-only") return Stage::appearance_only;
  if (s == "joint") return Stage::joint;
  throw ConfigError("unknown stage: " + s);
}

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::two_stage: return "two-stage";
    case Stage::appearance_only: return "appearance-only";
    case Stage::joint: return "joint";
  }
  return "two-stage";
}

struct DataConfig {
  std::string dir;  // load from disk when set, otherwise generate
  int train_identities = 20;
  int test_identities = 20;
  int seqs_per_identity = 4;
  int frames_per_seq = 32;
  double noise = 0.05;
  double occlusion_prob = 0.1;
  double camera_variation = 0.5;
  std::uint64_t seed = 1;

  /// Training identities come first; test identities follow with their own
  /// ids and sequence numbers under the same seed, so cameras are shared.
  SyntheticOptions synthetic(bool test) const {
    SyntheticOptions o;
    o.num_identities = test ? test_identities : train_identities;
    o.seqs_per_identity = seqs_per_identity;
    o.frames_per_seq = frames_per_seq;
    o.noise = noise;
    o.occlusion_prob = occlusion_prob;
    o.camera_variation = camera_variation;
    o.seed = seed;
    o.first_identity = test ? train_identities : 0;
    o.first_sequence = test ? train_identities * seqs_per_identity : 0;
    return o;
  }
};

struct OptimConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  bool nesterov = true;
  Stage stage = Stage::two_stage;
  std::size_t stage1_epochs = 40;   // budget; the plateau rule may stop earlier
  std::size_t epochs = 60;          // joint epochs
  std::size_t decay_epoch = 45;     // joint epoch after which lr is multiplied by decay_factor
  double decay_factor = 0.1;
  std::size_t plateau_window = 5;
  double plateau_tol = 1e-3;
  std::size_t steps_per_epoch = 0;  // 0: training clips / batch size
  std::size_t batch_identities = 8;
  std::size_t clips_per_identity = 4;
  double erase_prob = 0.3;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 10;  // epochs
  double max_grad_norm = 5;           // 0 disables clipping
};

struct EvalConfig {
  Protocol protocol = Protocol::multi_shot;
  Pooling pooling = Pooling::mean;
};

struct TrainConfig {
  DataConfig data;
  ModelConfig model;
  LossWeights loss;
  OptimConfig optim;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};  // ablation repeats

  void validate() const {
    model.validate();
    loss.validate();
    if (optim.decay_epoch > optim.epochs) throw ConfigError("decay_epoch must not exceed epochs");
    if (optim.lr < 0 || optim.weight_decay < 0 || optim.momentum < 0 || optim.momentum >= 1)
      throw ConfigError("invalid optimizer settings");
    if (optim.batch_identities < 2 || optim.clips_per_identity < 2)
      throw ConfigError("batch-hard triplet needs at least 2 identities and 2 clips per identity");
    if (optim.erase_prob < 0 || optim.erase_prob > 1) throw ConfigError("erase_prob must lie in [0, 1]");
    if (data.train_identities <= 0 || data.test_identities <= 0 || data.seqs_per_identity <= 0 || data.frames_per_seq <= 0)
      throw ConfigError("data counts must be positive");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
  }
};

namespace config_detail {

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  V v{};
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + text + "'");
  } else {
    is >> v;
    if (!is || !(is >> std::ws).eof()) throw ConfigError(key + ": cannot parse '" + text + "'");
    if constexpr (std::is_unsigned_v<V>)
      if (text.find('-') != std::string::npos) throw ConfigError(key + ": must be non-negative");
  }
  return v;
}

template <typename V>
std::string format_value(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }
}

inline std::string join_schema(const AttributeSchema& s) {
  std::string out;
  for (const auto& a : s.attributes) {
    if (!out.empty()) out += ";";
    out += a.name + ":";
    for (std::size_t k = 0; k < a.categories.size(); ++k) out += (k ? "|" : "") + a.categories[k];
  }
  return out;
}

inline AttributeSchema split_schema(const std::string& text, OrderPolicy order) {
  AttributeSchema s;
  s.order = order;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("model.attributes: expected name:cat|cat, got '" + item + "'");
    Attribute a{item.substr(0, colon), {}};
    std::istringstream cs(item.substr(colon + 1));
    std::string c;
    while (std::getline(cs, c, '|')) a.categories.push_back(c);
    s.attributes.push_back(std::move(a));
  }
  return s;
}

}  // namespace config_detail

/// Flat `section.key` view of a TrainConfig used by config files, CLI
/// overrides and checkpoint metadata.
class ConfigKeys {
 public:
  explicit ConfigKeys(TrainConfig& c) {
    auto& d = c.data;
    bind("data.dir", d.dir);
    bind("data.train_identities", d.train_identities);
    bind("data.test_identities", d.test_identities);
    bind("data.seqs_per_identity", d.seqs_per_identity);
    bind("data.frames_per_seq", d.frames_per_seq);
    bind("data.noise", d.noise);
    bind("data.occlusion_prob", d.occlusion_prob);
    bind("data.camera_variation", d.camera_variation);
    bind("data.seed", d.seed);

    auto& m = c.model;
    bind("model.in_channels", m.backbone.in_channels);
    bind("model.height", m.backbone.height);
    bind("model.width", m.backbone.width);
    custom("model.channels",
           [&m] {
             std::string s;
             for (auto ch : m.backbone.channels) s += (s.empty() ? "" : ",") + std::to_string(ch);
             return s;
           },
           [&m](const std::string& v) {
             std::vector<std::size_t> ch;
             std::istringstream is(v);
             std::string tok;
             while (std::getline(is, tok, ',')) ch.push_back(config_detail::parse_value<std::size_t>("model.channels", tok));
             if (ch.empty()) throw ConfigError("model.channels must list at least one width");
             m.backbone.channels = ch;
           });
    bind("model.pooled_blocks", m.backbone.pooled_blocks);
    bind("model.clip_length", m.clip_length);
    bind("model.primitive_channels", m.primitive_channels);
    bind("model.region_grid", m.region_grid);
    bind("model.d_v", m.d_v);
    bind("model.d", m.d);
    bind("model.d_att", m.d_att);
    bind("model.d_g", m.d_g);
    bind("model.d_p", m.d_p);
    bind("model.stripes", m.stripes);
    bind("model.num_classes", m.num_classes);
    custom("model.attributes", [&m] { return config_detail::join_schema(m.schema); },
           [&m](const std::string& v) { m.schema = config_detail::split_schema(v, m.schema.order); });
    custom("model.order_policy", [&m] { return to_string(m.schema.order); },
           [&m](const std::string& v) { m.schema.order = parse_order_policy(v); });
    bind("model.use_app", m.use_app);
    bind("model.use_att", m.use_att);
    bind("model.use_spatial_attention", m.use_spatial_attention);
    bind("model.use_ts_context", m.use_ts_context);
    bind("model.use_context_memory", m.use_context_memory);
    bind("model.use_gru", m.use_gru);
    bind("model.normalize_gates", m.normalize_gates);
    bind("model.second_pass_reads_v", m.second_pass_reads_v);
    bind("model.per_part_gru", m.per_part_gru);
    bind("model.precomputed_features", m.precomputed_features);

    auto& l = c.loss;
    bind("loss.margin", l.margin);
    bind("loss.epsilon", l.epsilon);
    bind("loss.lambda_total", l.lambda_total);
    bind("loss.lambda_sim", l.lambda_sim);
    bind("loss.squared_distance", l.squared_distance);
    bind("loss.triplet_on_concat", l.triplet_on_concat);

    auto& o = c.optim;
    bind("train.lr", o.lr);
    bind("train.weight_decay", o.weight_decay);
    bind("train.momentum", o.momentum);
    bind("train.nesterov", o.nesterov);
    custom("train.stage", [&o] { return to_string(o.stage); }, [&o](const std::string& v) { o.stage = parse_stage(v); });
    bind("train.stage1_epochs", o.stage1_epochs);
    bind("train.epochs", o.epochs);
    bind("train.decay_epoch", o.decay_epoch);
    bind("train.decay_factor", o.decay_factor);
    bind("train.plateau_window", o.plateau_window);
    bind("train.plateau_tol", o.plateau_tol);
    bind("train.steps_per_epoch", o.steps_per_epoch);
    bind("train.batch_identities", o.batch_identities);
    bind("train.clips_per_identity", o.clips_per_identity);
    bind("train.erase_prob", o.erase_prob);
    bind("train.seed", o.seed);
    bind("train.checkpoint_every", o.checkpoint_every);
    bind("train.max_grad_norm", o.max_grad_norm);
    custom("train.seeds",
           [&c] {
             std::string s;
             for (auto v : c.seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
             return s;
           },
           [&c](const std::string& v) {
             std::vector<std::uint64_t> seeds;
             std::istringstream is(v);
             std::string tok;
             while (std::getline(is, tok, ',')) seeds.push_back(config_detail::parse_value<std::uint64_t>("train.seeds", tok));
             c.seeds = seeds;
           });

    auto& e = c.eval;
    custom("eval.protocol", [&e] { return std::string(e.protocol == Protocol::multi_shot ? "multi-shot" : "pairwise"); },
           [&e](const std::string& v) { e.protocol = parse_protocol(v); });
    custom("eval.pooling", [&e] { return to_string(e.pooling); }, [&e](const std::string& v) { e.pooling = parse_pooling(v); });
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
    try {
      it->second.set(value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      throw ConfigError(key + ": " + ex.what());
    }
  }

  std::string get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
    return it->second.get();
  }

  /// Applies one `key=value` assignment.
  void assign(const std::string& line) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, e] : entries_) out[k] = e.get();
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

 private:
  struct Entry {
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
  };

  template <typename V>
  void bind(const std::string& key, V& field) {
    if constexpr (std::is_same_v<V, std::string>) {
      custom(key, [&field] { return field; }, [&field](const std::string& v) { field = v; });
    } else {
      custom(key, [&field] { return config_detail::format_value(field); },
             [&field, key](const std::string& v) { field = config_detail::parse_value<V>(key, v); });
    }
  }

  void custom(const std::string& key, std::function<std::string()> get, std::function<void(const std::string&)> set) {
    entries_[key] = {std::move(get), std::move(set)};
  }

  std::map<std::string, Entry> entries_;
};

/// Reads `key = value` lines; blank lines and `#` comments are ignored.
inline void load_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  ConfigKeys keys(cfg);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (ConfigKeys::trim(line).empty()) continue;
    try {
      keys.assign(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void write_config(std::ostream& os, const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  for (const auto& [k, v] : ConfigKeys(copy).to_map()) os << k << " = " << v << "\n";
}

/// Config keys stored in checkpoint metadata.
inline std::map<std::string, std::string> config_meta(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : ConfigKeys(copy).to_map())
    if (!v.empty()) meta[k] = v;
  return meta;
}

/// Rebuilds the configuration recorded in a checkpoint's metadata.
inline TrainConfig config_from_meta(const std::map<std::string, std::string>& meta) {
  TrainConfig cfg;
  ConfigKeys keys(cfg);
  for (const auto& [k, v] : meta)
    if (keys.has(k)) keys.set(k, v);
  return cfg;
}

}  // namespace talnet
