#include "qnet/cam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "qnet/error.hpp"

namespace qnet {

namespace fs = std::filesystem;

Tensor<float> upsample_bilinear(const Tensor<float>& m, std::size_t H, std::size_t W) {
  if (m.rank() != 2 || m.size() == 0) throw DimensionError("upsample_bilinear expects a non-empty h x w map");
  const std::size_t h = m.dim(0), w = m.dim(1);
  Tensor<float> out({H, W});
  auto axis = [](std::size_t i, std::size_t in, std::size_t outn) {
    const double s = std::clamp((static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5,
                                0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    return std::tuple{lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
  };
  for (std::size_t r = 0; r < H; ++r) {
    const auto [r0, r1, fr] = axis(r, h, H);
    for (std::size_t c = 0; c < W; ++c) {
      const auto [c0, c1, fc] = axis(c, w, W);
      const double top = (1.0 - fc) * m.at(r0, c0) + fc * m.at(r0, c1);
      const double bot = (1.0 - fc) * m.at(r1, c0) + fc * m.at(r1, c1);
      out.at(r, c) = static_cast<float>((1.0 - fr) * top + fr * bot);
    }
  }
  return out;
}

Tensor<float> minmax_normalize(const Tensor<float>& m) {
  Tensor<float> out(m.shape());
  if (m.size() == 0) return out;
  const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
  const double a = *lo, range = static_cast<double>(*hi) - a;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<float>((m[i] - a) / range);
  return out;
}

CamMap cam_from_features(const Tensor<float>& features, const Tensor<float>& head_weight, std::size_t cls,
                         std::size_t H, std::size_t W) {
  if (head_weight.size() == 0) throw ValidationError("CAM needs the stage-1 image head");
  if (features.rank() != 3) throw DimensionError("CAM features must be d x h x w");
  const std::size_t d = features.dim(0), hw = features.dim(1) * features.dim(2);
  if (head_weight.rank() != 2 || head_weight.dim(1) != d)
    throw DimensionError("head weight does not match the feature width " + std::to_string(d));
  if (cls >= head_weight.dim(0)) throw ValidationError("CAM class index out of range");
  CamMap cam;
  cam.class_index = cls;
  cam.features = Tensor<float>({features.dim(1), features.dim(2)});
  for (std::size_t i = 0; i < hw; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(head_weight.at(cls, k)) * features[k * hw + i];
    cam.features[i] = static_cast<float>(s);
  }
  cam.raw = upsample_bilinear(cam.features, H, W);
  cam.map = minmax_normalize(cam.raw);
  const auto best = std::max_element(cam.map.data().begin(), cam.map.data().end()) - cam.map.data().begin();
  cam.argmax_row = static_cast<std::size_t>(best) / W;
  cam.argmax_col = static_cast<std::size_t>(best) % W;
  return cam;
}

std::vector<CamMap> compute_cams(ImageModel<float>& model, const std::vector<Slice>& inputs, std::size_t cls) {
  if (inputs.empty()) return {};
  const auto shape = inputs[0].shape();
  if (shape.size() != 3) throw DimensionError("CAM inputs must be C x H x W");
  Tensor<float> batch({inputs.size(), shape[0], shape[1], shape[2]});
  const std::size_t per = inputs[0].size();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != shape) throw DimensionError("CAM inputs differ in shape");
    std::copy_n(inputs[i].raw(), per, batch.raw() + i * per);
  }
  model.backbone.forward(batch, Mode::Infer);
  const auto& fm = model.backbone.feature_map();
  const std::size_t d = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
  std::vector<CamMap> out(inputs.size());
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(i);
    Tensor<float> f({d, h, w});
    std::copy_n(fm.raw() + b * d * h * w, d * h * w, f.raw());
    out[b] = cam_from_features(f, model.head.weight.value, cls, shape[1], shape[2]);
  }
  return out;
}

CamMap compute_cam(ImageModel<float>& model, const Slice& input, std::size_t cls) {
  return std::move(compute_cams(model, {input}, cls).front());
}

CamInput cam_input(const Slice& slice, const BBox& box, const AugmentConfig& test_cfg) {
  AugmentConfig cfg = test_cfg;
  cfg.mode = AugmentMode::Test;
  cfg.validate();
  CamInput in;
  if (cfg.crop_mode == CropMode::Full) {
    in.image = histogram_stretch(slice, cfg.stretch_low_percentile, cfg.stretch_high_percentile);
    for (auto& v : in.image.data()) v = std::clamp(v, 0.0f, 1.0f);
    in.bbox = box;
    return in;
  }
  Rng rng(0);
  in.image = apply_pipeline(slice, box, cfg, rng).image;
  // same window arithmetic as crop_bbox, inverted for the box edges
  const double h = static_cast<double>(slice.dim(1)), w = static_cast<double>(slice.dim(2));
  const double t = static_cast<double>(cfg.target_size);
  const double pr = cfg.bbox_padding * static_cast<double>(box.rows), pc = cfg.bbox_padding * static_cast<double>(box.cols);
  const double r_lo = std::max(0.0, static_cast<double>(box.row0) - pr);
  const double r_hi = std::min(h, static_cast<double>(box.row0 + box.rows) + pr);
  const double c_lo = std::max(0.0, static_cast<double>(box.col0) - pc);
  const double c_hi = std::min(w, static_cast<double>(box.col0 + box.cols) + pc);
  const double sr = (r_hi - r_lo) / t, sc = (c_hi - c_lo) / t;
  const auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::floor(v))); };
  const auto hi = [&](double v) { return std::min(cfg.target_size, static_cast<std::size_t>(std::ceil(v))); };
  const std::size_t r0 = lo((static_cast<double>(box.row0) - r_lo) / sr), c0 = lo((static_cast<double>(box.col0) - c_lo) / sc);
  in.bbox = BBox{r0, c0, hi((static_cast<double>(box.row0 + box.rows) - r_lo) / sr) - r0,
                 hi((static_cast<double>(box.col0 + box.cols) - c_lo) / sc) - c0};
  return in;
}

std::string encode_pgm(const Tensor<float>& m, const std::string& comment) {
  if (m.rank() != 2) throw DimensionError("PGM needs an H x W map");
  if (comment.find('\n') != std::string::npos) throw ValidationError("PGM comment must be one line");
  std::string out = "P5\n# " + comment + "\n" + std::to_string(m.dim(1)) + " " + std::to_string(m.dim(0)) + "\n255\n";
  for (float v : m.data())
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  return out;
}

void export_cam(const CamMap& cam, const Slice& underlay, const fs::path& stem, const ArtifactMeta& meta) {
  const std::size_t H = cam.map.dim(0), W = cam.map.dim(1);
  if (underlay.rank() != 3 || underlay.dim(1) != H || underlay.dim(2) != W)
    throw DimensionError("CAM underlay must be C x " + std::to_string(H) + " x " + std::to_string(W));
  const std::string comment = "qnet cam class=" + std::to_string(cam.class_index) + " config_hash=" + meta.config_hash +
                              " seed=" + std::to_string(meta.seed);
  Tensor<float> overlay({H, W});
  for (std::size_t i = 0; i < H * W; ++i) overlay[i] = 0.5f * std::clamp(underlay[i], 0.0f, 1.0f) + 0.5f * cam.map[i];

  std::string csv;
  char num[32];
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      std::snprintf(num, sizeof num, "%.9g", cam.map.at(r, c));
      csv += num;
      csv += c + 1 < W ? ',' : '\n';
    }
  const fs::path heat = stem.string() + ".pgm", over = stem.string() + "_overlay.pgm", values = stem.string() + ".csv";
  write_text_file(heat, encode_pgm(cam.map, comment));
  write_text_file(over, encode_pgm(overlay, comment));
  write_text_file(values, csv);
  auto m = meta;
  m.kind = "cam";
  write_meta_sidecar(values, m);
}

}  // namespace qnet
