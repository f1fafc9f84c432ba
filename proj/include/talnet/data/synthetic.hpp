#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "talnet/data/video.hpp"
#include "talnet/numerics/random.hpp"

namespace talnet {

/// Synthetic pedestrian videos.
///
/// Every identity gets a signature (skin and hair tone, exact clothing
/// shades, stripe texture on the upper body, body width, accessory colours)
/// plus ID-level attribute labels that are painted into fixed body zones:
///
///   zone             rows (fraction of H)   driven by
///   hat band         0.03 - 0.12            "hat" (no/yes)
///   head             0.06 - 0.22            signature only
///   upper body       0.22 - 0.56            "upper_color" category + shade
///   backpack         0.25 - 0.50, left      "backpack" (no/yes)
///   lower body       0.56 - 0.90            "lower_color" category + shade
///   shoes            0.90 - 0.97            signature only
///
/// Attributes with other names get a marker patch on the right edge of the
/// body, one row band per attribute, brightness set by the category.
///
/// Each camera has its own background and per-channel gain, each sequence its
/// own placement and brightness, each frame positional jitter, Gaussian noise
/// and (with `occlusion_prob`) an occluding rectangle.
struct SyntheticOptions {
  int num_identities = 20;
  int seqs_per_identity = 4;
  int frames_per_seq = 32;
  FrameShape shape{};
  double noise = 0.05;
  double occlusion_prob = 0.1;
  std::uint64_t seed = 1;
  int first_identity = 0;
  int first_sequence = 0;
  int num_cameras = 2;
  double camera_variation = 1.0;  // scales background and gain differences between cameras
};

namespace synth_detail {

using Color = std::array<double, 3>;

struct IdentityLook {
  std::vector<int> labels;
  Color skin{}, hair{}, upper{}, lower{}, shoes{}, hat{}, backpack{};
  double stripe_period = 3, stripe_amp = 0, stripe_phase = 0;
  double lower_gradient = 0;
  double half_width = 3.5;
};

struct CameraLook {
  Color background{}, background_b{}, gain{};
};

inline Color jitter_color(Rng& rng, Color c, double amount) {
  for (auto& v : c) v = std::clamp(v + uniform(rng, -amount, amount), 0.0, 1.0);
  return c;
}

inline Color random_color(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline int sample_category(Rng& rng, std::size_t m) {
  // Skewed prior p_k proportional to 0.6^k, like real attribute statistics.
  std::vector<double> w(m);
  double total = 0;
  for (std::size_t k = 0; k < m; ++k) total += (w[k] = std::pow(0.6, static_cast<double>(k)));
  double u = uniform01(rng) * total;
  for (std::size_t k = 0; k < m; ++k) {
    if (u < w[k]) return static_cast<int>(k);
    u -= w[k];
  }
  return static_cast<int>(m - 1);
}

inline const Color& upper_palette(int k) {
  static const std::array<Color, 3> palette{{{0.78, 0.18, 0.16}, {0.2, 0.62, 0.22}, {0.18, 0.3, 0.82}}};
  return palette[static_cast<std::size_t>(k) % palette.size()];
}

inline const Color& lower_palette(int k) {
  static const std::array<Color, 3> palette{{{0.14, 0.14, 0.17}, {0.82, 0.8, 0.72}, {0.2, 0.26, 0.58}}};
  return palette[static_cast<std::size_t>(k) % palette.size()];
}

inline int find_attribute(const AttributeSchema& schema, std::string_view name) {
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (schema.attributes[i].name == name) return static_cast<int>(i);
  return -1;
}

inline IdentityLook make_identity(const AttributeSchema& schema, Rng& rng) {
  IdentityLook look;
  for (const auto& a : schema.attributes) look.labels.push_back(sample_category(rng, a.category_count()));
  auto label = [&](std::string_view name) {
    const int i = find_attribute(schema, name);
    return i < 0 ? -1 : look.labels[static_cast<std::size_t>(i)];
  };
  const double tone = uniform(rng, 0.7, 1.05);
  look.skin = {0.86 * tone, 0.66 * tone, 0.52 * tone};
  look.hair = random_color(rng, 0.05, 0.45);
  const int up = label("upper_color");
  look.upper = up < 0 ? random_color(rng, 0.1, 0.9) : jitter_color(rng, upper_palette(up), 0.16);
  const int lo = label("lower_color");
  look.lower = lo < 0 ? random_color(rng, 0.1, 0.9) : jitter_color(rng, lower_palette(lo), 0.12);
  look.shoes = random_color(rng, 0.05, 0.6);
  look.hat = random_color(rng, 0.55, 1.0);
  look.backpack = random_color(rng, 0.05, 0.35);
  look.stripe_period = static_cast<double>(2 + uniform_index(rng, 3));
  look.stripe_amp = uniform(rng, 0.0, 0.22);
  look.stripe_phase = uniform(rng, 0.0, 6.283185307179586);
  look.lower_gradient = uniform(rng, -0.15, 0.15);
  look.half_width = uniform(rng, 0.19, 0.27);
  return look;
}

/// Cameras share a base background; `variation` scales how far each one's
/// background and colour gain drift from it.
inline CameraLook make_camera(Rng& rng, const Color& base, double variation) {
  CameraLook cam;
  cam.background = jitter_color(rng, base, 0.25 * variation);
  cam.background_b = jitter_color(rng, cam.background, 0.2);
  for (auto& g : cam.gain) g = 1.0 + uniform(rng, -0.25, 0.25) * variation;
  return cam;
}

}  // namespace synth_detail

inline Dataset generate_synthetic(const SyntheticOptions& opt, const AttributeSchema& schema) {
  using namespace synth_detail;
  if (schema.attributes.empty()) throw DataError("synthetic generation needs at least one attribute");
  schema.validate();
  if (opt.num_identities <= 0 || opt.seqs_per_identity <= 0 || opt.frames_per_seq <= 0 || opt.num_cameras <= 0)
    throw DataError("synthetic generation needs positive counts");
  if (opt.noise < 0 || opt.camera_variation < 0 || opt.occlusion_prob < 0 || opt.occlusion_prob > 1) throw DataError("invalid noise/occlusion level");
  if (opt.shape.channels != 3) throw DataError("synthetic frames are RGB");

  Dataset ds;
  ds.schema = schema;
  ds.shape = opt.shape;
  const auto H = static_cast<double>(opt.shape.height), W = static_cast<double>(opt.shape.width);
  const std::size_t h = opt.shape.height, w = opt.shape.width;

  Rng cam_rng = derive_rng(opt.seed, "cameras");
  const Color base_background = random_color(cam_rng, 0.35, 0.65);
  std::vector<CameraLook> cameras;
  for (int c = 0; c < opt.num_cameras; ++c) cameras.push_back(make_camera(cam_rng, base_background, opt.camera_variation));

  const int hat_idx = find_attribute(schema, "hat");
  const int bag_idx = find_attribute(schema, "backpack");
  std::vector<std::size_t> marker_attrs;
  for (std::size_t n = 0; n < schema.size(); ++n) {
    const auto& name = schema.attributes[n].name;
    if (name != "hat" && name != "backpack" && name != "upper_color" && name != "lower_color") marker_attrs.push_back(n);
  }

  int next_sequence = opt.first_sequence;
  for (int i = 0; i < opt.num_identities; ++i) {
    const int identity = opt.first_identity + i;
    Rng id_rng = derive_rng(opt.seed, "identity/" + std::to_string(identity));
    const IdentityLook look = make_identity(schema, id_rng);
    const bool has_hat = hat_idx >= 0 && look.labels[static_cast<std::size_t>(hat_idx)] == 1;
    const bool has_bag = bag_idx >= 0 && look.labels[static_cast<std::size_t>(bag_idx)] == 1;

    for (int s = 0; s < opt.seqs_per_identity; ++s) {
      VideoSequence seq;
      seq.sequence_id = next_sequence++;
      seq.identity = identity;
      seq.camera = s % opt.num_cameras;
      seq.attribute_labels = look.labels;
      seq.shape = opt.shape;
      seq.pixels.resize(static_cast<std::size_t>(opt.frames_per_seq) * opt.shape.pixels());
      const CameraLook& cam = cameras[static_cast<std::size_t>(seq.camera)];
      Rng rng = derive_rng(opt.seed, "sequence/" + std::to_string(seq.sequence_id));
      const double offset_x = uniform(rng, -0.12, 0.12) * W;
      const double offset_y = uniform(rng, -0.03, 0.03) * H;
      const double brightness = uniform(rng, 0.85, 1.15);

      for (int f = 0; f < opt.frames_per_seq; ++f) {
        const double cx = W / 2 + offset_x + uniform(rng, -1.0, 1.0);
        const double dy = offset_y + ((f % 2) ? 0.5 : 0.0);
        const bool occluded = bernoulli(rng, opt.occlusion_prob);
        double oy0 = 0, ox0 = 0, oy1 = 0, ox1 = 0;
        Color occ_color{};
        if (occluded) {
          const double oh = uniform(rng, 0.2, 0.45) * H, ow = uniform(rng, 0.4, 1.0) * W;
          oy0 = uniform(rng, 0, H - oh);
          ox0 = uniform(rng, 0, W - ow);
          oy1 = oy0 + oh;
          ox1 = ox0 + ow;
          occ_color = random_color(rng, 0.0, 1.0);
        }
        float* px = seq.pixels.data() + static_cast<std::size_t>(f) * opt.shape.pixels();
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double fy = (static_cast<double>(y) + 0.5 - dy) / H;  // body-relative row fraction
            const double fx = static_cast<double>(x) + 0.5;
            const double bx = std::abs(fx - cx) / W;  // horizontal distance from body axis
            const double mix = static_cast<double>(y) / H;
            Color c;
            for (int k = 0; k < 3; ++k) c[k] = cam.background[k] * (1 - mix) + cam.background_b[k] * mix;

            if (fy >= 0.06 && fy < 0.22 && bx < 0.15) {
              c = fy < 0.11 ? look.hair : look.skin;
            }
            if (has_hat && fy >= 0.03 && fy < 0.12 && bx < 0.19) c = look.hat;
            if (fy >= 0.22 && fy < 0.56 && bx < look.half_width) {
              const double stripe = look.stripe_amp * std::sin(6.283185307179586 * y / look.stripe_period + look.stripe_phase);
              for (int k = 0; k < 3; ++k) c[k] = look.upper[k] + stripe;
            }
            if (has_bag && fy >= 0.25 && fy < 0.5 && fx < cx - look.half_width * W + 1.0 &&
                fx >= cx - look.half_width * W - 2.5)
              c = look.backpack;
            if (fy >= 0.56 && fy < 0.9 && bx < look.half_width * 0.85) {
              const double g = look.lower_gradient * (fy - 0.73) / 0.17;
              for (int k = 0; k < 3; ++k) c[k] = look.lower[k] + g;
            }
            if (fy >= 0.9 && fy < 0.97 && bx < look.half_width) c = look.shoes;
            for (std::size_t m = 0; m < marker_attrs.size(); ++m) {
              const double band = 0.22 + 0.6 * static_cast<double>(m) / static_cast<double>(marker_attrs.size());
              const double rel_x = (fx - cx) / W;
              if (fy >= band && fy < band + 0.08 && rel_x >= look.half_width - 0.12 && rel_x < look.half_width) {
                const auto n = marker_attrs[m];
                const double level = static_cast<double>(look.labels[n]) /
                                     static_cast<double>(schema.attributes[n].category_count() - 1);
                c = {level, 1.0 - level, 0.5};
              }
            }
            if (occluded && y >= oy0 && y < oy1 && x >= ox0 && x < ox1) c = occ_color;
            for (std::size_t k = 0; k < 3; ++k) {
              const double v = c[k] * cam.gain[k] * brightness + opt.noise * normal(rng);
              px[(k * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
          }
      }
      ds.sequences.push_back(std::move(seq));
    }
  }
  return ds;
}

inline Dataset generate_synthetic(int num_identities, int seqs_per_identity, int frames_per_seq,
                                  const AttributeSchema& schema, double noise, double occlusion_prob,
                                  std::uint64_t seed) {
  SyntheticOptions opt;
  opt.num_identities = num_identities;
  opt.seqs_per_identity = seqs_per_identity;
  opt.frames_per_seq = frames_per_seq;
  opt.noise = noise;
  opt.occlusion_prob = occlusion_prob;
  opt.seed = seed;
  return generate_synthetic(opt, schema);
}

}  // namespace talnet
