#include "qnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace qnet {

namespace {

struct Dims {
  std::size_t c, h, w;
};

Dims dims_of(const Slice& x) {
  if (x.rank() != 3) throw DimensionError("slice must be C x H x W, got " + shape_string(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2)};
}

void check_probability(const char* name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string("augment probability ") + name + " must be in [0,1]");
}

void check_range(const char* name, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError(std::string("augment range ") + name + " has low > high");
}

/// Resample every channel through one coordinate map (out_r, out_c) -> (src_r, src_c).
template <typename Map>
Slice remap(const Slice& x, std::size_t out_h, std::size_t out_w, Map map) {
  const auto d = dims_of(x);
  Slice y({d.c, out_h, out_w});
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto [sr, sc] = map(static_cast<double>(r), static_cast<double>(c));
      for (std::size_t ch = 0; ch < d.c; ++ch) y[(ch * out_h + r) * out_w + c] = sample_bilinear(x, ch, sr, sc);
    }
  }
  return y;
}

/// Piecewise-linear axis map for grid distortion. Source cell edges are integers, so unit
/// steps reproduce the identity exactly.
std::vector<double> grid_axis_map(std::size_t n, const std::vector<double>& steps) {
  const std::size_t k = steps.size();
  std::vector<double> src(k + 1), dst(k + 1, 0.0);
  for (std::size_t i = 0; i <= k; ++i) src[i] = static_cast<double>(i * n / k);
  for (std::size_t i = 0; i < k; ++i) dst[i + 1] = dst[i] + (src[i + 1] - src[i]) * steps[i];
  const double scale = static_cast<double>(n) / dst[k];
  for (auto& v : dst) v *= scale;
  std::vector<double> out(n);
  std::size_t cell = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double x = static_cast<double>(p);
    while (cell + 1 < k && x >= dst[cell + 1]) ++cell;
    const double width = dst[cell + 1] - dst[cell];
    out[p] = width > 0.0 ? src[cell] + (x - dst[cell]) * ((src[cell + 1] - src[cell]) / width) : src[cell];
  }
  return out;
}

}  // namespace

std::string to_string(AugmentMode m) { return m == AugmentMode::Train ? "train" : "test"; }
std::string to_string(CropMode m) { return m == CropMode::Full ? "full" : "bbox"; }

AugmentMode augment_mode_from_string(const std::string& s) {
  if (s == "train") return AugmentMode::Train;
  if (s == "test") return AugmentMode::Test;
  throw ValidationError("unknown augment mode '" + s + "' (expected train|test)");
}

CropMode crop_mode_from_string(const std::string& s) {
  if (s == "full") return CropMode::Full;
  if (s == "bbox" || s == "cropped") return CropMode::BBox;
  throw ValidationError("unknown crop mode '" + s + "' (expected full|bbox)");
}

const char* step_name(Step s) {
  switch (s) {
    case Step::HistogramStretch: return "histogram_stretch";
    case Step::HFlip: return "hflip";
    case Step::VFlip: return "vflip";
    case Step::BrightnessContrast: return "brightness_contrast";
    case Step::Gamma: return "gamma";
    case Step::GridDistortion: return "grid_distortion";
    case Step::ShiftScaleRotate: return "shift_scale_rotate";
    case Step::Crop: return "crop";
  }
  return "?";
}

double AugmentConfig::probability(Step s) const {
  if (mode == AugmentMode::Test) return (s == Step::HistogramStretch || s == Step::Crop) ? 1.0 : 0.0;
  switch (s) {
    case Step::HistogramStretch: return p_histogram_stretch;
    case Step::HFlip: return p_hflip;
    case Step::VFlip: return p_vflip;
    case Step::BrightnessContrast: return p_brightness_contrast;
    case Step::Gamma: return p_gamma;
    case Step::GridDistortion: return p_grid_distortion;
    case Step::ShiftScaleRotate: return p_shift_scale_rotate;
    case Step::Crop: return p_crop;
  }
  return 0.0;
}

void AugmentConfig::validate() const {
  check_probability("histogram_stretch", p_histogram_stretch);
  check_probability("hflip", p_hflip);
  check_probability("vflip", p_vflip);
  check_probability("brightness_contrast", p_brightness_contrast);
  check_probability("gamma", p_gamma);
  check_probability("grid_distortion", p_grid_distortion);
  check_probability("shift_scale_rotate", p_shift_scale_rotate);
  check_probability("crop", p_crop);
  if (!(stretch_low_percentile >= 0.0 && stretch_low_percentile < stretch_high_percentile &&
        stretch_high_percentile <= 100.0))
    throw ValidationError("stretch percentiles must satisfy 0 <= low < high <= 100");
  if (!(brightness_limit >= 0.0)) throw ValidationError("brightness_limit must be >= 0");
  check_range("contrast", contrast_low, contrast_high);
  check_range("gamma", gamma_low, gamma_high);
  check_range("scale", scale_low, scale_high);
  if (!(gamma_low > 0.0)) throw ValidationError("gamma range must be positive");
  if (!(scale_low > 0.0)) throw ValidationError("scale range must be positive");
  if (!(shift_limit >= 0.0) || !(rotate_limit_deg >= 0.0)) throw ValidationError("shift/rotate limits must be >= 0");
  if (grid_cells == 0) throw ValidationError("grid_cells must be >= 1");
  if (!(distort_limit >= 0.0 && distort_limit < 1.0)) throw ValidationError("distort_limit must be in [0,1)");
  if (target_size == 0) throw ValidationError("target_size must be >= 1");
  if (!(bbox_padding >= 0.0)) throw ValidationError("bbox_padding must be >= 0");
}

Slice histogram_stretch(const Slice& x, double low_percentile, double high_percentile) {
  const auto d = dims_of(x);
  const std::size_t n = d.h * d.w;
  Slice y(x.shape());
  std::vector<float> sorted(n);
  for (std::size_t ch = 0; ch < d.c; ++ch) {
    const float* src = x.raw() + ch * n;
    float* dst = y.raw() + ch * n;
    std::copy(src, src + n, sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    const double span = static_cast<double>(n - 1);
    const double lo = sorted[static_cast<std::size_t>(std::floor(low_percentile / 100.0 * span))];
    const double hi = sorted[static_cast<std::size_t>(std::ceil(high_percentile / 100.0 * span))];
    if (!(hi > lo)) {
      std::fill(dst, dst + n, 0.0f);
      continue;
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(std::clamp((src[i] - lo) / range, 0.0, 1.0));
  }
  return y;
}

Slice hflip(const Slice& x) {
  const auto d = dims_of(x);
  Slice y(x.shape());
  for (std::size_t p = 0; p < d.c * d.h; ++p)
    for (std::size_t c = 0; c < d.w; ++c) y[p * d.w + c] = x[p * d.w + (d.w - 1 - c)];
  return y;
}

Slice vflip(const Slice& x) {
  const auto d = dims_of(x);
  Slice y(x.shape());
  for (std::size_t ch = 0; ch < d.c; ++ch)
    for (std::size_t r = 0; r < d.h; ++r)
      std::copy_n(x.raw() + (ch * d.h + (d.h - 1 - r)) * d.w, d.w, y.raw() + (ch * d.h + r) * d.w);
  return y;
}

Slice brightness_contrast(const Slice& x, double alpha, double delta) {
  dims_of(x);
  Slice y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(std::clamp(alpha * x[i] + delta, 0.0, 1.0));
  return y;
}

Slice gamma_transform(const Slice& x, double gamma) {
  dims_of(x);
  Slice y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = static_cast<float>(std::pow(std::clamp(static_cast<double>(x[i]), 0.0, 1.0), gamma));
  return y;
}

float sample_bilinear(const Slice& x, std::size_t channel, double r, double c) {
  const auto d = dims_of(x);
  if (!(r > -1.0 && c > -1.0 && r < static_cast<double>(d.h) && c < static_cast<double>(d.w))) return 0.0f;
  const double r0 = std::floor(r), c0 = std::floor(c);
  const double fr = r - r0, fc = c - c0;
  const auto ir = static_cast<std::ptrdiff_t>(r0), ic = static_cast<std::ptrdiff_t>(c0);
  const float* plane = x.raw() + channel * d.h * d.w;
  double acc = 0.0;
  auto tap = [&](std::ptrdiff_t rr, std::ptrdiff_t cc, double wgt) {
    if (wgt == 0.0 || rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(d.h) ||
        cc >= static_cast<std::ptrdiff_t>(d.w))
      return;
    acc += wgt * plane[static_cast<std::size_t>(rr) * d.w + static_cast<std::size_t>(cc)];
  };
  tap(ir, ic, (1.0 - fr) * (1.0 - fc));
  tap(ir, ic + 1, (1.0 - fr) * fc);
  tap(ir + 1, ic, fr * (1.0 - fc));
  tap(ir + 1, ic + 1, fr * fc);
  return static_cast<float>(acc);
}

Slice grid_distortion(const Slice& x, const std::vector<double>& col_steps, const std::vector<double>& row_steps) {
  const auto d = dims_of(x);
  if (col_steps.empty() || row_steps.empty()) throw ValidationError("grid distortion needs at least one cell");
  for (double s : col_steps)
    if (!(s > 0.0)) throw ValidationError("grid steps must be positive");
  for (double s : row_steps)
    if (!(s > 0.0)) throw ValidationError("grid steps must be positive");
  const auto cols = grid_axis_map(d.w, col_steps);
  const auto rows = grid_axis_map(d.h, row_steps);
  return remap(x, d.h, d.w, [&](double r, double c) {
    return std::pair{rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]};
  });
}

Slice shift_scale_rotate(const Slice& x, double shift_rows, double shift_cols, double scale, double angle_deg) {
  const auto d = dims_of(x);
  if (!(scale > 0.0)) throw ValidationError("scale must be positive");
  const double cr = (static_cast<double>(d.h) - 1.0) / 2.0, cc = (static_cast<double>(d.w) - 1.0) / 2.0;
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  // inverse map: undo shift, undo scale, rotate by -angle
  return remap(x, d.h, d.w, [&](double r, double c) {
    const double u = (r - cr - shift_rows) / scale, v = (c - cc - shift_cols) / scale;
    return std::pair{cr + cs * u - sn * v, cc + sn * u + cs * v};
  });
}

std::size_t center_offset(std::size_t side, std::size_t target) {
  if (target > side)
    throw ValidationError("crop target " + std::to_string(target) + " exceeds side " + std::to_string(side));
  return (side - target) / 2;
}

Slice crop_at(const Slice& x, std::size_t row, std::size_t col, std::size_t target) {
  const auto d = dims_of(x);
  if (row + target > d.h || col + target > d.w) throw ValidationError("crop window leaves the image");
  Slice y({d.c, target, target});
  for (std::size_t ch = 0; ch < d.c; ++ch)
    for (std::size_t r = 0; r < target; ++r)
      std::copy_n(x.raw() + (ch * d.h + row + r) * d.w + col, target, y.raw() + (ch * target + r) * target);
  return y;
}

Slice crop_bbox(const Slice& x, const BBox& box, double padding, std::size_t target) {
  const auto d = dims_of(x);
  if (box.rows == 0 || box.cols == 0 || box.row0 + box.rows > d.h || box.col0 + box.cols > d.w)
    throw ValidationError("bbox (" + std::to_string(box.row0) + "," + std::to_string(box.col0) + "," +
                          std::to_string(box.rows) + "," + std::to_string(box.cols) + ") outside image " +
                          shape_string(x.shape()));
  if (target == 0) throw ValidationError("crop target must be >= 1");
  const double pr = padding * static_cast<double>(box.rows), pc = padding * static_cast<double>(box.cols);
  const double r_lo = std::max(0.0, static_cast<double>(box.row0) - pr);
  const double r_hi = std::min(static_cast<double>(d.h), static_cast<double>(box.row0 + box.rows) + pr);
  const double c_lo = std::max(0.0, static_cast<double>(box.col0) - pc);
  const double c_hi = std::min(static_cast<double>(d.w), static_cast<double>(box.col0 + box.cols) + pc);
  const double sr = (r_hi - r_lo) / static_cast<double>(target), sc = (c_hi - c_lo) / static_cast<double>(target);
  const double max_r = static_cast<double>(d.h - 1), max_c = static_cast<double>(d.w - 1);
  // pixel-center sampling; edges replicate rather than fade to zero
  return remap(x, target, target, [&](double r, double c) {
    return std::pair{std::clamp(r_lo + (r + 0.5) * sr - 0.5, 0.0, max_r),
                     std::clamp(c_lo + (c + 0.5) * sc - 0.5, 0.0, max_c)};
  });
}

AugmentResult apply_pipeline(const Slice& x, const BBox& box_in, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  AugmentResult res;
  Slice img = x;
  BBox box = box_in;
  auto coin = [&](Step s) {
    const bool on = rng.bernoulli(cfg.probability(s));
    res.applied[static_cast<std::size_t>(s)] = on;
    return on;
  };

  if (coin(Step::HistogramStretch))
    img = histogram_stretch(img, cfg.stretch_low_percentile, cfg.stretch_high_percentile);
  if (coin(Step::HFlip)) {
    img = hflip(img);
    box.col0 = img.dim(2) - box.col0 - box.cols;
  }
  if (coin(Step::VFlip)) {
    img = vflip(img);
    box.row0 = img.dim(1) - box.row0 - box.rows;
  }
  if (coin(Step::BrightnessContrast)) {
    const double alpha = rng.uniform(cfg.contrast_low, cfg.contrast_high);
    const double delta = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit);
    img = brightness_contrast(img, alpha, delta);
  }
  if (coin(Step::Gamma)) img = gamma_transform(img, rng.uniform(cfg.gamma_low, cfg.gamma_high));
  if (coin(Step::GridDistortion)) {
    std::vector<double> cs(cfg.grid_cells), rs(cfg.grid_cells);
    for (auto& v : cs) v = 1.0 + rng.uniform(-cfg.distort_limit, cfg.distort_limit);
    for (auto& v : rs) v = 1.0 + rng.uniform(-cfg.distort_limit, cfg.distort_limit);
    img = grid_distortion(img, cs, rs);
  }
  if (coin(Step::ShiftScaleRotate)) {
    const double h = static_cast<double>(img.dim(1)), w = static_cast<double>(img.dim(2));
    const double dr = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * h;
    const double dc = rng.uniform(-cfg.shift_limit, cfg.shift_limit) * w;
    const double s = rng.uniform(cfg.scale_low, cfg.scale_high);
    const double a = rng.uniform(-cfg.rotate_limit_deg, cfg.rotate_limit_deg);
    img = shift_scale_rotate(img, dr, dc, s, a);
  }

  const std::size_t t = cfg.target_size;
  if (coin(Step::Crop)) {
    if (cfg.crop_mode == CropMode::BBox) {
      img = crop_bbox(img, box, cfg.bbox_padding, t);
    } else {
      const std::size_t h = img.dim(1), w = img.dim(2);
      std::size_t r = center_offset(h, t), c = center_offset(w, t);
      if (cfg.mode == AugmentMode::Train && cfg.crop_jitter) {
        r = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h - t)));
        c = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(w - t)));
      }
      img = crop_at(img, r, c, t);
    }
  } else {
    // skipped crop still has to deliver the target size: resize the whole frame
    img = crop_bbox(img, BBox{0, 0, img.dim(1), img.dim(2)}, 0.0, t);
  }

  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
  res.image = std::move(img);
  return res;
}

}  // namespace qnet
