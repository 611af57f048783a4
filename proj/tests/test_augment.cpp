#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "qnet/augment.hpp"

using namespace qnet;

namespace {

Slice random_slice(Rng& rng, std::size_t c, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  Slice s({c, h, w});
  for (auto& v : s.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return s;
}

float at(const Slice& s, std::size_t ch, std::size_t r, std::size_t c) { return s[(ch * s.dim(1) + r) * s.dim(2) + c]; }

void expect_equal(const Slice& a, const Slice& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << "at " << i;
}

Slice replicate_channels(const Slice& one, std::size_t c) {
  Slice s({c, one.dim(1), one.dim(2)});
  const std::size_t n = one.dim(1) * one.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) std::copy_n(one.raw(), n, s.raw() + ch * n);
  return s;
}

AugmentConfig only_stretch_and_crop() {
  AugmentConfig cfg;
  cfg.p_hflip = cfg.p_vflip = cfg.p_brightness_contrast = cfg.p_gamma = 0.0;
  cfg.p_grid_distortion = cfg.p_shift_scale_rotate = 0.0;
  return cfg;
}

}  // namespace

TEST(HistogramStretch, MapsSpanToUnitInterval) {
  Rng rng(1);
  auto x = random_slice(rng, 3, 20, 20, -3.0, 7.0);
  x[0] = -3.0f;
  x[1] = 7.0f;
  const auto y = histogram_stretch(x);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto first = y.raw() + ch * 400, last = first + 400;
    EXPECT_EQ(*std::min_element(first, last), 0.0f);
    EXPECT_EQ(*std::max_element(first, last), 1.0f);
  }
}

TEST(HistogramStretch, PercentilesPickSortedIndices) {
  // 101 values 0..100: low index floor(0.01*100)=1, high index ceil(0.99*100)=99
  Slice x({1, 1, 101});
  Rng rng(2);
  std::vector<int> perm(101);
  for (int i = 0; i < 101; ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());
  for (int i = 0; i < 101; ++i) x[i] = static_cast<float>(perm[i]);
  const auto y = histogram_stretch(x);
  for (int i = 0; i < 101; ++i) {
    const double want = std::clamp((perm[i] - 1.0) / 98.0, 0.0, 1.0);
    EXPECT_NEAR(y[i], want, 1e-7) << perm[i];
  }
}

TEST(HistogramStretch, ConstantChannelBecomesZero) {
  Rng rng(3);
  auto x = random_slice(rng, 3, 8, 8);
  for (std::size_t i = 64; i < 128; ++i) x[i] = 0.42f;
  const auto y = histogram_stretch(x);
  for (std::size_t i = 64; i < 128; ++i) EXPECT_EQ(y[i], 0.0f);
  EXPECT_EQ(*std::max_element(y.raw(), y.raw() + 64), 1.0f);
}

TEST(HistogramStretch, IsIdempotent) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_slice(rng, 3, 1 + rng.below(40), 1 + rng.below(40), -5.0, 5.0);
    const auto once = histogram_stretch(x);
    expect_equal(histogram_stretch(once), once);
  }
}

TEST(Geometric, FlipsAreInvolutions) {
  Rng rng(5);
  const auto x = random_slice(rng, 3, 7, 9);
  expect_equal(hflip(hflip(x)), x);
  expect_equal(vflip(vflip(x)), x);
  const auto h = hflip(x), v = vflip(x);
  EXPECT_EQ(at(h, 2, 1, 0), at(x, 2, 1, 8));
  EXPECT_EQ(at(v, 1, 0, 3), at(x, 1, 6, 3));
}

TEST(Geometric, NeutralShiftScaleRotateIsIdentity) {
  Rng rng(6);
  for (std::size_t side : {31u, 96u}) {
    const auto x = random_slice(rng, 3, side, side);
    expect_equal(shift_scale_rotate(x, 0.0, 0.0, 1.0, 0.0), x);
  }
}

TEST(Geometric, ZeroDistortLimitIsIdentity) {
  Rng rng(7);
  const auto x = random_slice(rng, 3, 96, 96);
  const std::vector<double> ones(5, 1.0);
  expect_equal(grid_distortion(x, ones, ones), x);
  // uniform steps renormalize back to the identity
  const std::vector<double> twos(4, 2.0);
  expect_equal(grid_distortion(x, twos, twos), x);
}

TEST(Geometric, QuarterTurnAndShiftMatchIndexArithmetic) {
  Rng rng(8);
  const std::size_t n = 11;
  const auto x = random_slice(rng, 2, n, n);
  const auto rot = shift_scale_rotate(x, 0.0, 0.0, 1.0, 90.0);
  const double m = (n - 1) / 2.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const auto sr = static_cast<std::size_t>(m - (c - m)), sc = static_cast<std::size_t>(m + (r - m));
      EXPECT_NEAR(at(rot, 1, r, c), at(x, 1, sr, sc), 1e-5);
    }
  const auto sh = shift_scale_rotate(x, 0.0, 2.0, 1.0, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) EXPECT_EQ(at(sh, 0, r, c), c < 2 ? 0.0f : at(x, 0, r, c - 2));
}

TEST(Geometric, ChannelsShareOneSpatialMap) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto one = random_slice(rng, 1, 32, 32);
    const auto x = replicate_channels(one, 3);
    std::vector<double> cs(5), rs(5);
    for (auto& v : cs) v = 1.0 + rng.uniform(-0.3, 0.3);
    for (auto& v : rs) v = 1.0 + rng.uniform(-0.3, 0.3);
    const auto outputs = {grid_distortion(x, cs, rs),
                          shift_scale_rotate(x, rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.9, 1.1),
                                             rng.uniform(-15, 15)),
                          hflip(x), vflip(x)};
    for (const auto& y : outputs)
      for (std::size_t i = 0; i < 32 * 32; ++i) {
        ASSERT_EQ(y[i], y[1024 + i]);
        ASSERT_EQ(y[i], y[2048 + i]);
      }
  }
}

TEST(Geometric, MarkerLandsAtSamePixelInEveryChannel) {
  Slice x({3, 24, 24});
  for (std::size_t ch = 0; ch < 3; ++ch) x[(ch * 24 + 10) * 24 + 7] = 1.0f;
  // different backgrounds per channel, marker shared
  x[5] = 0.3f;
  x[576 + 300] = 0.2f;
  const auto y = shift_scale_rotate(x, 1.5, -2.0, 1.05, 12.0);
  std::size_t where[3];
  for (std::size_t ch = 0; ch < 3; ++ch) where[ch] = std::max_element(y.raw() + ch * 576, y.raw() + (ch + 1) * 576) - (y.raw() + ch * 576);
  EXPECT_EQ(where[0], where[1]);
  EXPECT_EQ(where[1], where[2]);
}

TEST(Photometric, NeutralParametersAreIdentity) {
  Rng rng(10);
  const auto x = random_slice(rng, 3, 9, 9);
  expect_equal(brightness_contrast(x, 1.0, 0.0), x);
  expect_equal(gamma_transform(x, 1.0), x);
}

TEST(Photometric, GammaAndClampValues) {
  const Slice x({1, 1, 3}, std::vector<float>{0.25f, 0.0f, 1.0f});
  const auto g = gamma_transform(x, 2.0);
  EXPECT_FLOAT_EQ(g[0], 0.0625f);
  EXPECT_EQ(g[1], 0.0f);
  EXPECT_EQ(g[2], 1.0f);
  const auto b = brightness_contrast(x, 1.2, 0.2);
  EXPECT_FLOAT_EQ(b[0], 0.5f);
  EXPECT_FLOAT_EQ(b[1], 0.2f);
  EXPECT_EQ(b[2], 1.0f);
}

TEST(Crop, CenterCropTakesRows16To79) {
  Slice x({3, 96, 96});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i);
  EXPECT_EQ(center_offset(96, 64), 16u);
  const auto y = crop_at(x, 16, 16, 64);
  ASSERT_EQ(y.shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(at(y, 0, 0, 0), at(x, 0, 16, 16));
  EXPECT_EQ(at(y, 2, 63, 63), at(x, 2, 79, 79));
  EXPECT_THROW(center_offset(32, 64), ValidationError);
}

TEST(Crop, BBoxOutputAlwaysHasTargetSize) {
  Rng rng(11);
  const auto x = random_slice(rng, 3, 96, 96);
  for (int trial = 0; trial < 50; ++trial) {
    BBox b;
    b.rows = 1 + rng.below(60);
    b.cols = 1 + rng.below(60);
    b.row0 = rng.below(96 - b.rows + 1);
    b.col0 = rng.below(96 - b.cols + 1);
    const auto y = crop_bbox(x, b, 0.1, 64);
    ASSERT_EQ(y.shape(), (Shape{3, 64, 64}));
  }
}

TEST(Crop, BBoxOfWholeImageAtNativeSizeIsIdentity) {
  Rng rng(12);
  const auto x = random_slice(rng, 3, 40, 40);
  expect_equal(crop_bbox(x, BBox{0, 0, 40, 40}, 0.0, 40), x);
}

TEST(Crop, BBoxOutsideImageThrows) {
  const Slice x({3, 32, 32});
  EXPECT_THROW(crop_bbox(x, BBox{20, 0, 20, 5}, 0.1, 16), ValidationError);
  EXPECT_THROW(crop_bbox(x, BBox{0, 0, 0, 5}, 0.1, 16), ValidationError);
}

TEST(Pipeline, TestModeIsStretchThenCenterCropForAnySeed) {
  Rng data(13);
  const auto x = random_slice(data, 3, 96, 96, -1.0, 2.0);
  AugmentConfig cfg;
  cfg.mode = AugmentMode::Test;
  const auto want = crop_at(histogram_stretch(x), 16, 16, 64);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto r = apply_pipeline(x, BBox{}, cfg, rng);
    expect_equal(r.image, want);
    for (std::size_t s = 0; s < kStepCount; ++s)
      EXPECT_EQ(r.applied[s], s == 0 || s == kStepCount - 1) << step_name(static_cast<Step>(s));
  }
}

TEST(Pipeline, TestModeBBoxCropIsDeterministic) {
  Rng data(14);
  const auto x = random_slice(data, 3, 96, 96);
  AugmentConfig cfg;
  cfg.mode = AugmentMode::Test;
  cfg.crop_mode = CropMode::BBox;
  const BBox box{30, 28, 36, 40};
  Rng a(1), b(2);
  const auto ra = apply_pipeline(x, box, cfg, a), rb = apply_pipeline(x, box, cfg, b);
  expect_equal(ra.image, rb.image);
  expect_equal(ra.image, crop_bbox(histogram_stretch(x), box, 0.1, 64));
}

TEST(Pipeline, SameSeedGivesBitIdenticalOutput) {
  Rng data(15);
  const auto x = random_slice(data, 3, 96, 96);
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    const auto ra = apply_pipeline(x, BBox{30, 30, 30, 30}, cfg, a);
    const auto rb = apply_pipeline(x, BBox{30, 30, 30, 30}, cfg, b);
    expect_equal(ra.image, rb.image);
    EXPECT_EQ(ra.applied, rb.applied);
  }
}

TEST(Pipeline, TrainWithOnlyStretchAndFixedCropEqualsTestMode) {
  Rng data(16);
  const auto x = random_slice(data, 3, 96, 96, -0.5, 1.5);
  const BBox box{20, 25, 40, 30};
  for (CropMode mode : {CropMode::Full, CropMode::BBox}) {
    auto train = only_stretch_and_crop();
    train.crop_mode = mode;
    train.crop_jitter = false;
    auto test = train;
    test.mode = AugmentMode::Test;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng a(seed), b(seed + 100);
      expect_equal(apply_pipeline(x, box, train, a).image, apply_pipeline(x, box, test, b).image);
    }
  }
}

TEST(Pipeline, TrainFullCropJittersWithinBounds) {
  Slice x({1, 96, 96});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i) / static_cast<float>(x.size());
  auto cfg = only_stretch_and_crop();
  cfg.p_histogram_stretch = 0.0;
  bool moved = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto y = apply_pipeline(x, BBox{}, cfg, rng).image;
    const auto idx = static_cast<std::size_t>(std::lround(y[0] * static_cast<float>(x.size())));
    const std::size_t r = idx / 96, c = idx % 96;
    EXPECT_LE(r, 32u);
    EXPECT_LE(c, 32u);
    moved |= (r != 16 || c != 16);
  }
  EXPECT_TRUE(moved);
}

TEST(Pipeline, HFlipCarriesTheBBox) {
  Rng data(17);
  const auto x = random_slice(data, 3, 96, 96);
  auto cfg = only_stretch_and_crop();
  cfg.p_hflip = 1.0;
  cfg.crop_mode = CropMode::BBox;
  const BBox box{30, 10, 30, 20};
  Rng rng(3);
  const auto got = apply_pipeline(x, box, cfg, rng).image;
  expect_equal(got, crop_bbox(hflip(histogram_stretch(x)), BBox{30, 66, 30, 20}, 0.1, 64));
}

TEST(Pipeline, OutputShapeAndRangeHoldForAnyDraw) {
  Rng data(18);
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto x = random_slice(data, 3, 96, 96, -2.0, 3.0);
    AugmentConfig cfg;
    cfg.p_histogram_stretch = seed % 3 == 0 ? 0.0 : 1.0;
    cfg.p_crop = seed % 4 == 0 ? 0.0 : 1.0;
    cfg.crop_mode = seed % 2 ? CropMode::BBox : CropMode::Full;
    Rng rng(seed);
    const auto y = apply_pipeline(x, BBox{28, 30, 36, 34}, cfg, rng).image;
    ASSERT_EQ(y.shape(), (Shape{3, 64, 64}));
    for (float v : y.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Pipeline, ApplicationFrequenciesMatchProbabilities) {
  Rng data(19);
  const auto x = random_slice(data, 3, 16, 16);
  AugmentConfig cfg;
  cfg.target_size = 8;
  std::array<int, kStepCount> hits{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Rng rng(derive_seed(77, {static_cast<std::uint64_t>(i)}));
    const auto r = apply_pipeline(x, BBox{4, 4, 8, 8}, cfg, rng);
    for (std::size_t s = 0; s < kStepCount; ++s) hits[s] += r.applied[s];
  }
  for (std::size_t s = 0; s < kStepCount; ++s) {
    const double p = cfg.probability(static_cast<Step>(s));
    EXPECT_NEAR(hits[s] / static_cast<double>(draws), p, 0.02) << step_name(static_cast<Step>(s));
  }
}

TEST(AugmentConfigValidation, RejectsBadValues) {
  AugmentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.p_gamma = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.contrast_low = 1.3;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.grid_cells = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_THROW(augment_mode_from_string("eval"), ValidationError);
  EXPECT_EQ(crop_mode_from_string("bbox"), CropMode::BBox);
}
