#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "talnet/numerics/conv.hpp"
#include "talnet/numerics/parameter.hpp"

namespace talnet {

/// Small conv stack standing in for a pretrained base network. Block i is a
/// 3x3 conv + ReLU, followed by a 2x2 mean-pool for the first `pooled_blocks`
/// blocks.
struct BackboneConfig {
  std::size_t in_channels = 3, height = 32, width = 16;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t pooled_blocks = 2;

  std::size_t out_channels() const { return channels.back(); }
  std::size_t out_height() const { return height >> pooled_blocks; }
  std::size_t out_width() const { return width >> pooled_blocks; }

  void validate() const {
    if (channels.empty()) throw std::invalid_argument("backbone needs at least one block");
    if (pooled_blocks > channels.size()) throw std::invalid_argument("backbone pools more often than it has blocks");
    if ((height % (std::size_t{1} << pooled_blocks)) || (width % (std::size_t{1} << pooled_blocks)))
      throw std::invalid_argument("frame size not divisible by the backbone pooling factor");
    if (out_height() < 4 || out_width() < 4) throw std::invalid_argument("backbone feature map must be at least 4x4");
  }
};

template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParameterStore<T>& store, const std::string& prefix = "backbone.") : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg_.in_channels;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
      const std::size_t out = cfg_.channels[i];
      const std::string p = prefix + "conv" + std::to_string(i + 1);
      weights_.push_back(store.add(p + ".W", {out, in, 3, 3}, InitSpec::relu_uniform(in * 9)));
      biases_.push_back(store.add(p + ".b", {out}, InitSpec::zeros()));
      in = out;
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  /// (frames, C, H, W) -> (frames, Cf, Hm, Wm); frames are processed
  /// independently.
  Tensor<T> forward(const Tensor<T>& frames) const {
    if (frames.rank() != 4 || frames.dim(1) != cfg_.in_channels || frames.dim(2) != cfg_.height ||
        frames.dim(3) != cfg_.width)
      throw ShapeError("backbone", frames.shape(), Shape{0, cfg_.in_channels, cfg_.height, cfg_.width});
    Tensor<T> x = frames;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      x = relu(conv2d(x, weights_[i], biases_[i], 1));
      if (i < cfg_.pooled_blocks) x = avg_pool2d(x, 2, 2);
    }
    return x;
  }

 private:
  BackboneConfig cfg_;
  std::vector<Tensor<T>> weights_, biases_;
};

}  // namespace talnet
