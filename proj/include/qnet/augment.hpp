#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "qnet/rng.hpp"
#include "qnet/tensor.hpp"

namespace qnet {

/// A slice is C x H x W (channel-major, row-major), values nominally in [0,1].
using Slice = Tensor<float>;

struct BBox {
  std::size_t row0 = 0, col0 = 0, rows = 0, cols = 0;
  bool contains(double r, double c) const {
    return r >= static_cast<double>(row0) && r < static_cast<double>(row0 + rows) && c >= static_cast<double>(col0) &&
           c < static_cast<double>(col0 + cols);
  }
  bool operator==(const BBox&) const = default;
};

enum class AugmentMode { Train, Test };
enum class CropMode { Full, BBox };

std::string to_string(AugmentMode m);
std::string to_string(CropMode m);
AugmentMode augment_mode_from_string(const std::string& s);
CropMode crop_mode_from_string(const std::string& s);

/// Pipeline steps in application order.
enum class Step : std::size_t {
  HistogramStretch,
  HFlip,
  VFlip,
  BrightnessContrast,
  Gamma,
  GridDistortion,
  ShiftScaleRotate,
  Crop,
};
inline constexpr std::size_t kStepCount = 8;
const char* step_name(Step s);

struct AugmentConfig {
  AugmentMode mode = AugmentMode::Train;

  double p_histogram_stretch = 1.0;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_brightness_contrast = 0.7;
  double p_gamma = 0.3;
  double p_grid_distortion = 0.25;
  double p_shift_scale_rotate = 0.5;
  double p_crop = 1.0;

  double stretch_low_percentile = 1.0;
  double stretch_high_percentile = 99.0;
  double brightness_limit = 0.2;
  double contrast_low = 0.8, contrast_high = 1.2;
  double gamma_low = 0.8, gamma_high = 1.25;
  double shift_limit = 0.0625;  // fraction of side
  double scale_low = 0.9, scale_high = 1.1;
  double rotate_limit_deg = 15.0;
  std::size_t grid_cells = 5;
  double distort_limit = 0.3;

  CropMode crop_mode = CropMode::Full;
  std::size_t target_size = 64;
  double bbox_padding = 0.1;  // per side, fraction of bbox extent
  bool crop_jitter = true;    // full-mode train crops at a random offset; test always centers

  /// Probability for one step after the mode override (test mode: stretch and crop at 1, rest 0).
  double probability(Step s) const;
  void validate() const;
};

struct AugmentResult {
  Slice image;
  std::array<bool, kStepCount> applied{};
};

// Individual transforms. All act on every channel with one shared spatial map.

Slice histogram_stretch(const Slice& x, double low_percentile = 1.0, double high_percentile = 99.0);
Slice hflip(const Slice& x);
Slice vflip(const Slice& x);
Slice brightness_contrast(const Slice& x, double alpha, double delta);
Slice gamma_transform(const Slice& x, double gamma);

/// Column and row cell scale factors (each 1 + d, d in [-limit, limit]); sizes must equal the cell count.
Slice grid_distortion(const Slice& x, const std::vector<double>& col_steps, const std::vector<double>& row_steps);

/// Affine map about the image center: shift in pixels, isotropic scale, rotation in degrees.
Slice shift_scale_rotate(const Slice& x, double shift_rows, double shift_cols, double scale, double angle_deg);

/// Crop to target x target. Full mode with offset (row, col); use center_offset for the test crop.
Slice crop_at(const Slice& x, std::size_t row, std::size_t col, std::size_t target);
std::size_t center_offset(std::size_t side, std::size_t target);

/// Padded bbox region resized to target x target with bilinear sampling.
Slice crop_bbox(const Slice& x, const BBox& box, double padding, std::size_t target);

/// Bilinear sample of channel c at fractional (r, c); zero outside the image.
float sample_bilinear(const Slice& x, std::size_t channel, double r, double c);

/// Full pipeline. `box` is only used in bbox crop mode and follows the flips.
AugmentResult apply_pipeline(const Slice& x, const BBox& box, const AugmentConfig& cfg, Rng& rng);

}  // namespace qnet
