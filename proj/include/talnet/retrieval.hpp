#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "talnet/data/video.hpp"
#include "talnet/model/talnet.hpp"

namespace talnet {

struct EmbeddingRecord {
  int sequence_id = 0;
  int identity = 0;
  int camera = 0;
  std::vector<double> f_app;
  std::vector<double> f_att;
};

/// ||a.app - b.app||^2 + lambda^2 ||a.att - b.att||^2; smaller is closer.
inline double fused_distance(const EmbeddingRecord& a, const EmbeddingRecord& b, double lambda_sim) {
  if (a.f_app.size() != b.f_app.size() || a.f_att.size() != b.f_att.size())
    throw std::invalid_argument("fused_distance: descriptor dimensions differ");
  double app = 0, att = 0;
  for (std::size_t i = 0; i < a.f_app.size(); ++i) app += (a.f_app[i] - b.f_app[i]) * (a.f_app[i] - b.f_app[i]);
  for (std::size_t i = 0; i < a.f_att.size(); ++i) att += (a.f_att[i] - b.f_att[i]) * (a.f_att[i] - b.f_att[i]);
  return app + lambda_sim * lambda_sim * att;
}

enum class Protocol { multi_shot, pairwise };

inline Protocol parse_protocol(const std::string& s) {
  if (s == "multi-shot") return Protocol::multi_shot;
  if (s == "pairwise") return Protocol::pairwise;
  throw std::invalid_argument("unknown protocol: " + s);
}

struct QueryRanking {
  std::size_t query = 0;
  std::vector<std::size_t> order;  // gallery indices, ascending distance
  std::vector<double> distances;
};

struct RankingResult {
  std::vector<double> cmc;  // cmc[k-1] = Rank-k
  double map = 0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // queries without any valid true match
  std::vector<QueryRanking> rankings;

  double rank(std::size_t k) const {
    if (cmc.empty()) return 0;
    return cmc[std::min(k, cmc.size()) - 1];
  }
};

/// Ranks the gallery for every query. Multi-shot drops gallery entries that
/// share both identity and camera with the query; pairwise keeps everything.
/// Distance ties are broken by gallery index.
inline RankingResult evaluate(const std::vector<EmbeddingRecord>& queries, const std::vector<EmbeddingRecord>& gallery,
                              Protocol protocol, double lambda_sim, bool keep_rankings = false) {
  RankingResult res;
  if (gallery.empty()) throw std::invalid_argument("evaluate: empty gallery");
  std::vector<double> hits(gallery.size(), 0.0);
  double ap_sum = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    QueryRanking r;
    r.query = qi;
    std::vector<double> dist(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (protocol == Protocol::multi_shot && gallery[g].identity == q.identity && gallery[g].camera == q.camera) continue;
      dist[g] = fused_distance(q, gallery[g], lambda_sim);
      r.order.push_back(g);
    }
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (auto g : r.order) r.distances.push_back(dist[g]);

    std::size_t found = 0, first = 0;
    double precision_sum = 0;
    for (std::size_t k = 0; k < r.order.size(); ++k)
      if (gallery[r.order[k]].identity == q.identity) {
        if (found == 0) first = k;
        ++found;
        precision_sum += static_cast<double>(found) / static_cast<double>(k + 1);
      }
    if (found == 0) {
      ++res.skipped;
      continue;
    }
    ++res.evaluated;
    for (std::size_t k = first; k < hits.size(); ++k) hits[k] += 1;
    ap_sum += precision_sum / static_cast<double>(found);
    if (keep_rankings) res.rankings.push_back(std::move(r));
  }
  if (res.evaluated) {
    res.cmc.resize(gallery.size());
    for (std::size_t k = 0; k < hits.size(); ++k) res.cmc[k] = hits[k] / static_cast<double>(res.evaluated);
    res.map = ap_sum / static_cast<double>(res.evaluated);
  }
  return res;
}

enum class Pooling { mean, max, random_sample };

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  if (s == "random" || s == "random-sample") return Pooling::random_sample;
  throw std::invalid_argument("unknown pooling: " + s);
}

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    case Pooling::random_sample: return "random-sample";
  }
  return "mean";
}

/// Clip-level f_app / f_att for a batch of clips, one row per clip.
template <typename T>
std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> clip_features(const TALNet<T>& model,
                                                                                           const std::vector<VideoClip>& clips) {
  NoGradGuard guard;
  const auto out = model.forward(clips_to_tensor<T>(clips), clips.size());
  std::vector<std::vector<double>> app(clips.size()), att(clips.size());
  auto rows = [&](const Tensor<T>& t, std::vector<std::vector<double>>& dst) {
    const std::size_t w = t.size() / clips.size();
    for (std::size_t c = 0; c < clips.size(); ++c) dst[c].assign(t.data().begin() + c * w, t.data().begin() + (c + 1) * w);
  };
  if (out.app) rows(out.app->f_app, app);
  if (out.f_att.defined()) rows(out.f_att, att);
  return {app, att};
}

/// Video descriptor: mean (or max) of clip features over the sequence's
/// clips, or the features of one clip built from T randomly chosen frames.
template <typename T>
EmbeddingRecord video_descriptor(const VideoSequence& seq, const TALNet<T>& model, std::size_t t_len,
                                 Pooling pooling = Pooling::mean, Rng* rng = nullptr) {
  EmbeddingRecord rec{seq.sequence_id, seq.identity, seq.camera, {}, {}};
  std::vector<VideoClip> clips;
  if (pooling == Pooling::random_sample) {
    if (!rng) throw std::invalid_argument("random-sample pooling needs an rng");
    std::vector<std::size_t> frames(seq.frame_count());
    std::iota(frames.begin(), frames.end(), 0);
    const std::size_t take = std::min(t_len, frames.size());
    for (std::size_t i = 0; i < take; ++i) std::swap(frames[i], frames[i + uniform_index(*rng, frames.size() - i)]);
    frames.resize(take);
    std::sort(frames.begin(), frames.end());
    VideoClip c = split_clips(seq, t_len).front();
    const std::size_t stride = seq.shape.pixels();
    for (std::size_t f = 0; f < t_len; ++f)
      std::copy_n(seq.frame(frames[std::min(f, take - 1)]), stride, c.pixels.begin() + f * stride);
    clips.push_back(std::move(c));
  } else {
    clips = split_clips(seq, t_len);
  }
  const auto [app, att] = clip_features(model, clips);
  auto pool = [&](const std::vector<std::vector<double>>& rows) {
    std::vector<double> v(rows.front());
    for (std::size_t c = 1; c < rows.size(); ++c)
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = pooling == Pooling::max ? std::max(v[i], rows[c][i]) : v[i] + rows[c][i];
    if (pooling != Pooling::max)
      for (auto& x : v) x /= static_cast<double>(rows.size());
    return v;
  };
  rec.f_app = pool(app);
  rec.f_att = pool(att);
  return rec;
}

/// Raw-pixel descriptor: the sequence's mean frame as one flat vector.
inline EmbeddingRecord raw_pixel_descriptor(const VideoSequence& seq) {
  EmbeddingRecord rec{seq.sequence_id, seq.identity, seq.camera, std::vector<double>(seq.shape.pixels(), 0.0), {}};
  for (std::size_t f = 0; f < seq.frame_count(); ++f)
    for (std::size_t i = 0; i < rec.f_app.size(); ++i) rec.f_app[i] += seq.frame(f)[i];
  for (auto& v : rec.f_app) v /= static_cast<double>(seq.frame_count());
  return rec;
}

inline void write_embeddings(const std::string& path, const std::vector<EmbeddingRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  const std::size_t na = recs.empty() ? 0 : recs[0].f_app.size(), nt = recs.empty() ? 0 : recs[0].f_att.size();
  out << "# dims app " << na << " att " << nt << "\n";
  out << "sequence_id\tidentity\tcamera";
  for (std::size_t i = 0; i < na; ++i) out << "\tapp" << i;
  for (std::size_t i = 0; i < nt; ++i) out << "\tatt" << i;
  out << "\n" << std::setprecision(9);
  for (const auto& r : recs) {
    out << r.sequence_id << "\t" << r.identity << "\t" << r.camera;
    for (double v : r.f_app) out << "\t" << v;
    for (double v : r.f_att) out << "\t" << v;
    out << "\n";
  }
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line, word;
  std::size_t na = 0, nt = 0;
  std::vector<EmbeddingRecord> recs;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      ls >> word >> word;
      if (word == "dims") ls >> word >> na >> word >> nt;
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    EmbeddingRecord r;
    ls >> r.sequence_id >> r.identity >> r.camera;
    r.f_app.resize(na);
    r.f_att.resize(nt);
    for (auto& v : r.f_app) ls >> v;
    for (auto& v : r.f_att) ls >> v;
    if (!ls) throw DataError(path + ": malformed embedding row");
    recs.push_back(std::move(r));
  }
  return recs;
}

inline void write_metrics_csv(std::ostream& os, const RankingResult& r) {
  os << "rank1,rank5,rank10,rank20,mAP,queries,skipped\n";
  os << std::setprecision(6) << r.rank(1) << "," << r.rank(5) << "," << r.rank(10) << "," << r.rank(20) << "," << r.map
     << "," << r.evaluated << "," << r.skipped << "\n";
}

inline void write_report(std::ostream& os, const RankingResult& r, const std::string& title) {
  os << title << "\n";
  os << std::fixed << std::setprecision(4);
  os << "  queries evaluated: " << r.evaluated << " (skipped: " << r.skipped << ")\n";
  for (std::size_t k : {1, 5, 10, 20}) os << "  Rank-" << k << ": " << r.rank(k) << "\n";
  os << "  mAP:     " << r.map << "\n";
  os.unsetf(std::ios::floatfield);
}

}  // namespace talnet
