#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "talnet/data/schema.hpp"
#include "talnet/numerics/random.hpp"
#include "talnet/numerics/tensor.hpp"

namespace talnet {

struct FrameShape {
  std::size_t channels = 3, height = 32, width = 16;

  std::size_t pixels() const { return channels * height * width; }
  bool operator==(const FrameShape&) const = default;
};

/// Frames of one tracklet, stored contiguously as (frames, C, H, W).
struct VideoSequence {
  int sequence_id = 0;
  int identity = 0;
  int camera = 0;
  std::vector<int> attribute_labels;
  FrameShape shape;
  std::vector<float> pixels;

  std::size_t frame_count() const { return shape.pixels() ? pixels.size() / shape.pixels() : 0; }
  const float* frame(std::size_t f) const { return pixels.data() + f * shape.pixels(); }
};

struct EraseRect {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

struct VideoClip {
  int sequence_id = 0;
  int identity = 0;
  int camera = 0;
  std::vector<int> attribute_labels;
  FrameShape shape;
  std::size_t length = 0;
  std::size_t first_frame = 0;
  bool padded = false;
  std::optional<EraseRect> erased;
  std::vector<float> pixels;  // (length, C, H, W)

  const float* frame(std::size_t f) const { return pixels.data() + f * shape.pixels(); }
};

struct Dataset {
  AttributeSchema schema;
  FrameShape shape;
  std::vector<VideoSequence> sequences;

  std::vector<int> identities() const {
    std::set<int> ids;
    for (const auto& s : sequences) ids.insert(s.identity);
    return {ids.begin(), ids.end()};
  }

  /// Throws unless every identity carries one attribute vector and all
  /// labels lie within the schema's category ranges.
  void validate() const {
    schema.validate();
    std::map<int, std::vector<int>> seen;
    const auto m = schema.category_counts();
    for (const auto& s : sequences) {
      if (!(s.shape == shape)) throw DataError("sequence " + std::to_string(s.sequence_id) + " has a different frame shape");
      if (s.frame_count() == 0) throw DataError("sequence " + std::to_string(s.sequence_id) + " has no frames");
      if (s.attribute_labels.size() != m.size())
        throw DataError("sequence " + std::to_string(s.sequence_id) + " has the wrong number of attribute labels");
      for (std::size_t n = 0; n < m.size(); ++n)
        if (s.attribute_labels[n] < 0 || static_cast<std::size_t>(s.attribute_labels[n]) >= m[n])
          throw DataError("attribute label out of range in sequence " + std::to_string(s.sequence_id));
      auto [it, fresh] = seen.emplace(s.identity, s.attribute_labels);
      if (!fresh && it->second != s.attribute_labels)
        throw DataError("identity " + std::to_string(s.identity) + " has inconsistent attribute labels");
    }
  }
};

/// Consecutive, non-overlapping clips of exactly `t` frames. A trailing
/// remainder shorter than `t` is dropped; a sequence shorter than `t` yields
/// one clip padded by repeating its last frame.
inline std::vector<VideoClip> split_clips(const VideoSequence& seq, std::size_t t) {
  if (t == 0) throw DataError("clip length must be positive");
  const std::size_t frames = seq.frame_count();
  const std::size_t stride = seq.shape.pixels();
  auto make = [&](std::size_t first) {
    VideoClip c;
    c.sequence_id = seq.sequence_id;
    c.identity = seq.identity;
    c.camera = seq.camera;
    c.attribute_labels = seq.attribute_labels;
    c.shape = seq.shape;
    c.length = t;
    c.first_frame = first;
    c.pixels.resize(t * stride);
    return c;
  };
  std::vector<VideoClip> clips;
  if (frames == 0) return clips;
  if (frames < t) {
    VideoClip c = make(0);
    c.padded = true;
    for (std::size_t f = 0; f < t; ++f) std::copy_n(seq.frame(std::min(f, frames - 1)), stride, c.pixels.begin() + f * stride);
    clips.push_back(std::move(c));
    return clips;
  }
  for (std::size_t start = 0; start + t <= frames; start += t) {
    VideoClip c = make(start);
    std::copy_n(seq.frame(start), t * stride, c.pixels.begin());
    clips.push_back(std::move(c));
  }
  return clips;
}

/// Clips grouped by identity, the unit PK sampling draws from.
class ClipPool {
 public:
  ClipPool(const Dataset& ds, std::size_t clip_length) {
    for (const auto& s : ds.sequences)
      for (auto& c : split_clips(s, clip_length)) by_identity_[s.identity].push_back(std::move(c));
    for (const auto& [id, clips] : by_identity_) ids_.push_back(id);
  }

  const std::vector<int>& identities() const { return ids_; }
  const std::vector<VideoClip>& clips(int identity) const { return by_identity_.at(identity); }
  std::size_t clip_count() const {
    std::size_t n = 0;
    for (const auto& [id, c] : by_identity_) n += c.size();
    return n;
  }

 private:
  std::map<int, std::vector<VideoClip>> by_identity_;
  std::vector<int> ids_;
};

/// I distinct identities with V clips each, identity blocks contiguous.
/// Identities holding fewer than V clips cycle through a shuffled order of
/// their clips, so clips repeat.
inline std::vector<VideoClip> pk_sample(const ClipPool& pool, std::size_t identities, std::size_t clips_per_identity,
                                        Rng& rng) {
  const auto& ids = pool.identities();
  if (identities == 0 || clips_per_identity == 0) throw DataError("PK sampling needs positive I and V");
  if (identities > ids.size())
    throw DataError("PK sampling asked for " + std::to_string(identities) + " identities but only " +
                    std::to_string(ids.size()) + " exist");
  std::vector<int> chosen(ids);
  for (std::size_t i = 0; i < identities; ++i) std::swap(chosen[i], chosen[i + uniform_index(rng, chosen.size() - i)]);
  chosen.resize(identities);

  std::vector<VideoClip> batch;
  batch.reserve(identities * clips_per_identity);
  for (int id : chosen) {
    const auto& clips = pool.clips(id);
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
    for (std::size_t v = 0; v < clips_per_identity; ++v) batch.push_back(clips[order[v % order.size()]]);
  }
  return batch;
}

/// With probability p, fills one rectangle (area fraction in [0.02, 0.2],
/// aspect ratio in [0.3, 3.3]) with uniform noise at the same place in every
/// frame of the clip.
inline VideoClip random_erase(VideoClip clip, double p, Rng& rng) {
  if (!bernoulli(rng, p)) return clip;
  const std::size_t h = clip.shape.height, w = clip.shape.width;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double area = uniform(rng, 0.02, 0.2) * static_cast<double>(h * w);
    const double aspect = uniform(rng, 0.3, 3.3);
    const auto rh = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
    const auto rw = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
    if (rh == 0 || rw == 0 || rh >= h || rw >= w) continue;
    EraseRect r{uniform_index(rng, h - rh + 1), uniform_index(rng, w - rw + 1), rh, rw};
    for (std::size_t f = 0; f < clip.length; ++f)
      for (std::size_t c = 0; c < clip.shape.channels; ++c)
        for (std::size_t y = r.top; y < r.top + r.height; ++y)
          for (std::size_t x = r.left; x < r.left + r.width; ++x)
            clip.pixels[((f * clip.shape.channels + c) * h + y) * w + x] = static_cast<float>(uniform01(rng));
    clip.erased = r;
    return clip;
  }
  return clip;
}

/// Stacks clips into one (clips * length, C, H, W) tensor.
template <typename T>
Tensor<T> clips_to_tensor(const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw DataError("empty clip batch");
  const FrameShape s = clips.front().shape;
  const std::size_t t = clips.front().length;
  std::vector<T> values;
  values.reserve(clips.size() * t * s.pixels());
  for (const auto& c : clips) {
    if (!(c.shape == s) || c.length != t) throw DataError("clips in a batch must share frame shape and length");
    values.insert(values.end(), c.pixels.begin(), c.pixels.end());
  }
  return Tensor<T>({clips.size() * t, s.channels, s.height, s.width}, std::move(values));
}

}  // namespace talnet
