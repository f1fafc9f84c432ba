#pragma once

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "talnet/numerics/parameter.hpp"

namespace talnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text container, one parameter per record:
///
///   TALNET-CHECKPOINT
///   format_version 1
///   seed <u64>
///   model_config_hash <16 hex digits>
///   meta <key> <value>            (zero or more)
///   param <name> <rank> <extents...>
///   <row-major values, shortest round-trip decimal, space separated>
///
/// Shortest round-trip formatting makes save/load bit-exact for float and
/// double.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };

  int format_version = kFormatVersion;
  std::uint64_t seed = 0;
  std::uint64_t model_config_hash = 0;
  std::map<std::string, std::string> meta;
  std::vector<Entry> entries;
};

namespace detail {
template <typename T>
void append_number(std::string& out, T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store, std::uint64_t seed,
                     std::uint64_t config_hash, const std::map<std::string, std::string>& meta = {}) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out << "TALNET-CHECKPOINT\n";
  out << "format_version " << Checkpoint::kFormatVersion << "\n";
  out << "seed " << seed << "\n";
  out << "model_config_hash " << detail::hex64(config_hash) << "\n";
  for (const auto& [k, v] : meta) out << "meta " << k << " " << v << "\n";
  std::string line;
  for (const auto& p : store.all()) {
    out << "param " << p.name << " " << p.tensor.rank();
    for (auto e : p.tensor.shape()) out << " " << e;
    out << "\n";
    line.clear();
    for (std::size_t i = 0; i < p.tensor.size(); ++i) {
      if (i) line += ' ';
      detail::append_number(line, p.tensor[i]);
    }
    out << line << "\n";
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

/// Parses a checkpoint. Values are read at the precision of `T` so that a
/// float checkpoint reloads into a float model without double rounding.
template <typename T = float>
Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  Checkpoint ck;
  std::string line;
  if (!std::getline(in, line) || line != "TALNET-CHECKPOINT") throw CheckpointError(path + ": not a checkpoint file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format_version") {
      ls >> ck.format_version;
      if (ck.format_version != Checkpoint::kFormatVersion)
        throw CheckpointError(path + ": unsupported format_version " + std::to_string(ck.format_version));
    } else if (key == "seed") {
      ls >> ck.seed;
    } else if (key == "model_config_hash") {
      std::string hex;
      ls >> hex;
      ck.model_config_hash = std::stoull(hex, nullptr, 16);
    } else if (key == "meta") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      ck.meta[k] = v;
    } else if (key == "param") {
      Checkpoint::Entry e;
      std::size_t rank = 0;
      ls >> e.name >> rank;
      e.shape.resize(rank);
      for (auto& d : e.shape) ls >> d;
      if (!ls || rank == 0) throw CheckpointError(path + ": malformed param header: " + line);
      std::string values;
      if (!std::getline(in, values)) throw CheckpointError(path + ": missing values for " + e.name);
      const std::size_t n = numel(e.shape);
      e.values.reserve(n);
      const char* p = values.data();
      const char* end = values.data() + values.size();
      while (p < end) {
        while (p < end && *p == ' ') ++p;
        if (p >= end) break;
        T v{};
        auto res = std::from_chars(p, end, v);
        if (res.ec != std::errc()) throw CheckpointError(path + ": bad number in " + e.name);
        e.values.push_back(static_cast<double>(v));
        p = res.ptr;
      }
      if (e.values.size() != n) throw CheckpointError(path + ": value count mismatch for " + e.name);
      ck.entries.push_back(std::move(e));
    } else {
      throw CheckpointError(path + ": unknown record '" + key + "'");
    }
  }
  return ck;
}

/// Copies checkpoint values into `store`. Every parameter of the store must be
/// present with the same shape.
template <typename T>
void apply_checkpoint(const Checkpoint& ck, ParameterStore<T>& store) {
  std::map<std::string, const Checkpoint::Entry*> by_name;
  for (const auto& e : ck.entries) by_name[e.name] = &e;
  for (auto& p : store.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape())
      throw CheckpointError("shape mismatch for " + p.name + ": " + to_string(it->second->shape) + " vs " +
                            to_string(p.tensor.shape()));
    for (std::size_t i = 0; i < p.tensor.size(); ++i) p.tensor[i] = static_cast<T>(it->second->values[i]);
  }
  if (by_name.size() != store.size()) throw CheckpointError("checkpoint has parameters the model does not");
}

}  // namespace talnet
