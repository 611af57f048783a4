#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "qnet/layers.hpp"

namespace qnet {

/// Residual embedding network topology. Desk default widths are 8/16/32/64;
/// full_scale() gives the 64/128/256/512 variant.
struct BackboneConfig {
  std::size_t input_channels = 3;
  std::size_t stem_width = 8;
  std::array<std::size_t, 4> width_schedule{8, 16, 32, 64};
  std::size_t block_count = 8;
  std::size_t stem_kernel = 7;
  std::size_t block_kernel = 3;

  static BackboneConfig full_scale();

  /// Throws ValidationError unless widths double, the stem feeds stage 1 and there are 8 blocks.
  void validate() const;

  std::size_t feature_dim() const { return width_schedule[3]; }
  /// Blocks (0-indexed) whose entry halves the resolution and doubles the channels.
  static bool downsamples_at(std::size_t block) { return block == 2 || block == 4 || block == 6; }
  /// Total spatial reduction: stem stride x pool stride x three block strides.
  static constexpr std::size_t kTotalStride = 32;
};

template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, bool downsample);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);

  void collect(ParamRefs<T>& out);
  void collect_buffers(BufferRefs<T>& out);
  template <typename F>
  void for_each_bn(F&& f) {
    f(bn1);
    f(bn2);
    if (proj_bn) f(*proj_bn);
  }

  bool has_downsample() const { return proj_conv.has_value(); }

  Conv2d<T> conv1;
  BatchNorm2d<T> bn1;
  Conv2d<T> conv2;
  BatchNorm2d<T> bn2;
  std::optional<Conv2d<T>> proj_conv;
  std::optional<BatchNorm2d<T>> proj_bn;

 private:
  Activation<T> relu1_{ActivationKind::Relu};
  Activation<T> relu_out_{ActivationKind::Relu};
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  void init(std::uint64_t seed);

  /// x: B x C x H x W. Returns the GAP feature vectors, B x feature_dim.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  /// Gradient w.r.t. the GAP features; returns the input gradient when need_dx.
  Tensor<T> backward(const Tensor<T>& dfeatures, bool need_dx = false);

  /// Final pre-GAP feature maps of the last forward (B x d x h x w).
  const Tensor<T>& feature_map() const { return feature_map_; }

  ParamRefs<T> parameters();
  BufferRefs<T> buffers();
  std::size_t parameter_count();

  void begin_bn_recompute();
  void end_bn_recompute();

  const BackboneConfig& config() const { return cfg_; }

  Conv2d<T> stem_conv;
  BatchNorm2d<T> stem_bn;
  std::vector<ResBlock<T>> blocks;

 private:
  BackboneConfig cfg_;
  Activation<T> stem_relu_{ActivationKind::Relu};
  MaxPool2d<T> pool_{3, 2, 1};
  GlobalAvgPool<T> gap_;
  Tensor<T> feature_map_;
};

template <typename T>
Backbone<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  Backbone<T> net(cfg);
  net.init(seed);
  return net;
}

/// Stage-1 image-level classifier: backbone followed by one affine head (d -> 2).
template <typename T>
class ImageModel {
 public:
  ImageModel() = default;
  explicit ImageModel(const BackboneConfig& cfg, std::size_t num_classes = 2);

  void init(std::uint64_t seed);
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void backward(const Tensor<T>& dlogits);

  ParamRefs<T> parameters();
  BufferRefs<T> buffers();

  Backbone<T> backbone;
  Linear<T> head;
};

}  // namespace qnet
