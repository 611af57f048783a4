#include "qnet/backbone.hpp"

#include "qnet/error.hpp"

namespace qnet {

BackboneConfig BackboneConfig::full_scale() {
  BackboneConfig cfg;
  cfg.stem_width = 64;
  cfg.width_schedule = {64, 128, 256, 512};
  return cfg;
}

void BackboneConfig::validate() const {
  if (input_channels == 0) throw ValidationError("backbone: input_channels must be positive");
  if (block_count != 8) throw ValidationError("backbone: block_count must be 8");
  if (width_schedule[0] == 0) throw ValidationError("backbone: widths must be positive");
  for (std::size_t i = 1; i < width_schedule.size(); ++i) {
    if (width_schedule[i] != 2 * width_schedule[i - 1]) {
      throw ValidationError("backbone: width_schedule must double at each stage");
    }
  }
  if (stem_width != width_schedule[0]) throw ValidationError("backbone: stem_width must equal width_schedule[0]");
  if (stem_kernel % 2 == 0 || block_kernel % 2 == 0) throw ValidationError("backbone: kernels must be odd");
}

// ---- ResBlock ------------------------------------------------------------------

template <typename T>
ResBlock<T>::ResBlock(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                      bool downsample)
    : conv1(name + ".conv1.weight", in_ch, out_ch, kernel, downsample ? 2 : 1, kernel / 2),
      bn1(name + ".bn1", out_ch),
      conv2(name + ".conv2.weight", out_ch, out_ch, kernel, 1, kernel / 2),
      bn2(name + ".bn2", out_ch) {
  if (downsample) {
    proj_conv.emplace(name + ".proj.weight", in_ch, out_ch, 1, 2, 0);
    proj_bn.emplace(name + ".proj_bn", out_ch);
  } else if (in_ch != out_ch) {
    throw DimensionError("resblock: channel change requires a downsample projection");
  }
}

template <typename T>
void ResBlock<T>::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (proj_conv) proj_conv->init(rng);
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != conv1.in_channels()) {
    throw DimensionError("resblock: input " + shape_string(x.shape()) + " does not match block input channels " +
                         std::to_string(conv1.in_channels()));
  }
  auto h = relu1_.forward(bn1.forward(conv1.forward(x), mode));
  auto r = bn2.forward(conv2.forward(h), mode);
  if (proj_conv) {
    const auto skip = proj_bn->forward(proj_conv->forward(x), mode);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += skip[i];
  } else {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += x[i];
  }
  return relu_out_.forward(r);
}

template <typename T>
Tensor<T> ResBlock<T>::backward(const Tensor<T>& dy, bool need_dx) {
  const auto dsum = relu_out_.backward(dy);
  auto dh = bn2.backward(dsum);
  dh = conv2.backward(dh, true);
  dh = relu1_.backward(dh);
  dh = bn1.backward(dh);
  auto dx = conv1.backward(dh, need_dx);
  if (proj_conv) {
    const auto dp = proj_bn->backward(dsum);
    const auto dskip = proj_conv->backward(dp, need_dx);
    if (need_dx)
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dskip[i];
  } else if (need_dx) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsum[i];
  }
  return dx;
}

template <typename T>
void ResBlock<T>::collect(ParamRefs<T>& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  if (proj_conv) {
    proj_conv->collect(out);
    proj_bn->collect(out);
  }
}

template <typename T>
void ResBlock<T>::collect_buffers(BufferRefs<T>& out) {
  bn1.collect_buffers(out);
  bn2.collect_buffers(out);
  if (proj_bn) proj_bn->collect_buffers(out);
}

// ---- Backbone --------------------------------------------------------------------

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg)
    : stem_conv("backbone.stem.conv.weight", cfg.input_channels, cfg.stem_width, cfg.stem_kernel, 2,
                cfg.stem_kernel / 2),
      stem_bn("backbone.stem.bn", cfg.stem_width),
      cfg_(cfg) {
  cfg.validate();
  std::size_t ch = cfg.stem_width;
  std::size_t stage = 0;
  for (std::size_t b = 0; b < cfg.block_count; ++b) {
    const bool down = BackboneConfig::downsamples_at(b);
    if (down) ++stage;
    const std::size_t out = cfg.width_schedule[stage];
    blocks.emplace_back("backbone.block" + std::to_string(b + 1), ch, out, cfg.block_kernel, down);
    ch = out;
  }
}

template <typename T>
void Backbone<T>::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xBAC0}));
  stem_conv.init(rng);
  for (auto& b : blocks) b.init(rng);
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg_.input_channels) {
    throw DimensionError("backbone: expected B x " + std::to_string(cfg_.input_channels) + " x H x W input, got " +
                         shape_string(x.shape()));
  }
  if (x.dim(2) < BackboneConfig::kTotalStride || x.dim(3) < BackboneConfig::kTotalStride) {
    throw DimensionError("backbone: spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " too small for total stride " + std::to_string(BackboneConfig::kTotalStride));
  }
  auto h = pool_.forward(stem_relu_.forward(stem_bn.forward(stem_conv.forward(x), mode)));
  for (auto& b : blocks) h = b.forward(h, mode);
  feature_map_ = h;
  return gap_.forward(h);
}

template <typename T>
Tensor<T> Backbone<T>::backward(const Tensor<T>& dfeatures, bool need_dx) {
  auto g = gap_.backward(dfeatures);
  for (std::size_t i = blocks.size(); i-- > 0;) g = blocks[i].backward(g, true);
  g = pool_.backward(g);
  g = stem_relu_.backward(g);
  g = stem_bn.backward(g);
  return stem_conv.backward(g, need_dx);
}

template <typename T>
ParamRefs<T> Backbone<T>::parameters() {
  ParamRefs<T> out;
  stem_conv.collect(out);
  stem_bn.collect(out);
  for (auto& b : blocks) b.collect(out);
  return out;
}

template <typename T>
BufferRefs<T> Backbone<T>::buffers() {
  BufferRefs<T> out;
  stem_bn.collect_buffers(out);
  for (auto& b : blocks) b.collect_buffers(out);
  return out;
}

template <typename T>
std::size_t Backbone<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
void Backbone<T>::begin_bn_recompute() {
  stem_bn.begin_recompute();
  for (auto& b : blocks) b.for_each_bn([](auto& bn) { bn.begin_recompute(); });
}

template <typename T>
void Backbone<T>::end_bn_recompute() {
  stem_bn.end_recompute();
  for (auto& b : blocks) b.for_each_bn([](auto& bn) { bn.end_recompute(); });
}

// ---- ImageModel --------------------------------------------------------------------

template <typename T>
ImageModel<T>::ImageModel(const BackboneConfig& cfg, std::size_t num_classes)
    : backbone(cfg), head("image_head", cfg.feature_dim(), num_classes) {}

template <typename T>
void ImageModel<T>::init(std::uint64_t seed) {
  backbone.init(seed);
  Rng rng(derive_seed(seed, {0x4EAD}));
  head.init(rng);
}

template <typename T>
Tensor<T> ImageModel<T>::forward(const Tensor<T>& x, Mode mode) {
  return head.forward(backbone.forward(x, mode));
}

template <typename T>
void ImageModel<T>::backward(const Tensor<T>& dlogits) {
  backbone.backward(head.backward(dlogits), false);
}

template <typename T>
ParamRefs<T> ImageModel<T>::parameters() {
  auto out = backbone.parameters();
  head.collect(out);
  return out;
}

template <typename T>
BufferRefs<T> ImageModel<T>::buffers() {
  return backbone.buffers();
}

template class ResBlock<float>;
template class ResBlock<double>;
template class Backbone<float>;
template class Backbone<double>;
template class ImageModel<float>;
template class ImageModel<double>;

}  // namespace qnet
