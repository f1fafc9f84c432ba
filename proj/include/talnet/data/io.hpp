#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "talnet/data/video.hpp"

namespace talnet {

/// On-disk dataset layout:
///
///   annotations.tsv   one row per identity, attribute columns name(cat|cat|...)
///   manifest.tsv      sequence_id, identity, camera, frame_count, path
///   frames/*.f32      raw native-endian float32, row-major (frames, C, H, W)
///
/// Lines starting with '#' are comments, except the recognised directives
/// "# order_policy <policy>" (annotations) and "# frame_shape C H W"
/// (manifest).
namespace io_detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": expected an integer, got '" + s + "'");
  }
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

}  // namespace io_detail

struct AnnotationTable {
  AttributeSchema schema;
  std::map<int, std::vector<int>> labels;  // identity -> category indices
};

inline void write_annotations(const std::filesystem::path& path, const AttributeSchema& schema,
                              const std::map<int, std::vector<int>>& labels) {
  auto out = io_detail::open_out(path);
  out << "# order_policy " << to_string(schema.order) << "\n";
  out << "identity";
  for (const auto& a : schema.attributes) {
    out << "\t" << a.name << "(";
    for (std::size_t k = 0; k < a.categories.size(); ++k) out << (k ? "|" : "") << a.categories[k];
    out << ")";
  }
  out << "\n";
  for (const auto& [id, l] : labels) {
    out << id;
    for (int v : l) out << "\t" << v;
    out << "\n";
  }
}

inline AnnotationTable read_annotations(const std::filesystem::path& path) {
  auto in = io_detail::open_in(path);
  AnnotationTable table;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key, value;
      ls >> key >> value;
      if (key == "order_policy") table.schema.order = parse_order_policy(value);
      continue;
    }
    const auto cells = io_detail::split(line, '\t');
    if (!header) {
      if (cells.empty() || cells[0] != "identity") throw DataError(where + ": header must start with 'identity'");
      for (std::size_t i = 1; i < cells.size(); ++i) {
        const auto& c = cells[i];
        const auto open = c.find('('), close = c.rfind(')');
        if (open == std::string::npos || close != c.size() - 1 || open == 0)
          throw DataError(where + ": attribute column must look like name(cat1|cat2)");
        table.schema.attributes.push_back({c.substr(0, open), io_detail::split(c.substr(open + 1, close - open - 1), '|')});
      }
      table.schema.validate();
      header = true;
      continue;
    }
    if (cells.size() != table.schema.size() + 1)
      throw DataError(where + ": expected " + std::to_string(table.schema.size() + 1) + " columns");
    const int id = io_detail::parse_int(cells[0], where);
    std::vector<int> l;
    for (std::size_t n = 0; n < table.schema.size(); ++n) {
      const int v = io_detail::parse_int(cells[n + 1], where);
      if (v < 0 || static_cast<std::size_t>(v) >= table.schema.attributes[n].category_count())
        throw DataError(where + ": category index " + std::to_string(v) + " out of range for " +
                        table.schema.attributes[n].name);
      l.push_back(v);
    }
    if (!table.labels.emplace(id, std::move(l)).second)
      throw DataError(where + ": identity " + std::to_string(id) + " annotated twice");
  }
  if (!header) throw DataError(path.string() + ": missing header row");
  return table;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir / "frames");
  std::map<int, std::vector<int>> labels;
  for (const auto& s : ds.sequences) labels[s.identity] = s.attribute_labels;
  write_annotations(dir / "annotations.tsv", ds.schema, labels);

  auto manifest = io_detail::open_out(dir / "manifest.tsv");
  manifest << "# frame_shape " << ds.shape.channels << " " << ds.shape.height << " " << ds.shape.width << "\n";
  manifest << "sequence_id\tidentity\tcamera\tframe_count\tpath\n";
  for (const auto& s : ds.sequences) {
    const std::string rel = "frames/seq_" + std::to_string(s.sequence_id) + ".f32";
    manifest << s.sequence_id << "\t" << s.identity << "\t" << s.camera << "\t" << s.frame_count() << "\t" << rel << "\n";
    auto out = io_detail::open_out(dir / rel, std::ios::binary);
    out.write(reinterpret_cast<const char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size() * sizeof(float)));
    if (!out) throw DataError("failed writing " + (dir / rel).string());
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const AnnotationTable table = read_annotations(dir / "annotations.tsv");
  Dataset ds;
  ds.schema = table.schema;
  const auto manifest_path = dir / "manifest.tsv";
  auto in = io_detail::open_in(manifest_path);
  std::string line;
  bool header = false, have_shape = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = manifest_path.string() + ":" + std::to_string(lineno);
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      if (key == "frame_shape") {
        ls >> ds.shape.channels >> ds.shape.height >> ds.shape.width;
        if (!ls || ds.shape.pixels() == 0) throw DataError(where + ": malformed frame_shape");
        have_shape = true;
      }
      continue;
    }
    const auto cells = io_detail::split(line, '\t');
    if (!header) {
      header = true;
      if (cells.size() != 5 || cells[0] != "sequence_id") throw DataError(where + ": unexpected manifest header");
      continue;
    }
    if (!have_shape) throw DataError(where + ": frame_shape directive must precede sequences");
    if (cells.size() != 5) throw DataError(where + ": expected 5 columns");
    VideoSequence s;
    s.sequence_id = io_detail::parse_int(cells[0], where);
    s.identity = io_detail::parse_int(cells[1], where);
    s.camera = io_detail::parse_int(cells[2], where);
    const int frames = io_detail::parse_int(cells[3], where);
    if (frames <= 0) throw DataError(where + ": frame_count must be positive");
    auto it = table.labels.find(s.identity);
    if (it == table.labels.end()) throw DataError(where + ": identity " + cells[1] + " has no annotation row");
    s.attribute_labels = it->second;
    s.shape = ds.shape;
    s.pixels.resize(static_cast<std::size_t>(frames) * ds.shape.pixels());
    const auto frame_path = dir / cells[4];
    std::ifstream fin(frame_path, std::ios::binary);
    if (!fin) throw DataError(where + ": cannot open " + frame_path.string());
    const auto bytes = static_cast<std::streamsize>(s.pixels.size() * sizeof(float));
    fin.read(reinterpret_cast<char*>(s.pixels.data()), bytes);
    if (fin.gcount() != bytes || fin.peek() != std::char_traits<char>::eof())
      throw DataError(where + ": " + frame_path.string() + " does not hold " + cells[3] + " frames of the declared shape");
    ds.sequences.push_back(std::move(s));
  }
  if (!header) throw DataError(manifest_path.string() + ": missing header row");
  ds.validate();
  return ds;
}

}  // namespace talnet
