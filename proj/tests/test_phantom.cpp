#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "qnet/dataset.hpp"

using namespace qnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qnet_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double bbox_mean(const Slice& s, const BBox& b, std::size_t ch) {
  double acc = 0.0;
  for (std::size_t r = b.row0; r < b.row0 + b.rows; ++r)
    for (std::size_t c = b.col0; c < b.col0 + b.cols; ++c) acc += s[(ch * s.dim(1) + r) * s.dim(2) + c];
  return acc / static_cast<double>(b.rows * b.cols);
}

void expect_scans_equal(const Scan& a, const Scan& b) {
  EXPECT_EQ(a.subject_id, b.subject_id);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.bbox, b.bbox);
  ASSERT_EQ(a.slices.size(), b.slices.size());
  for (std::size_t t = 0; t < a.slices.size(); ++t) {
    ASSERT_EQ(a.slices[t].shape(), b.slices[t].shape());
    for (std::size_t i = 0; i < a.slices[t].size(); ++i) ASSERT_EQ(a.slices[t][i], b.slices[t][i]);
  }
}

PhantomParams small_params() {
  PhantomParams p;
  p.seq_len = 3;
  return p;
}

}  // namespace

TEST(Phantom, ZeroAmplitudeIgnoresLabel) {
  PhantomParams p = small_params();
  p.amplitude = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto hh = generate_phantom_scan(seed, Label::HH, p, "s");
    const auto hc = generate_phantom_scan(seed, Label::HC, p, "s");
    hh.label = Label::HC;
    expect_scans_equal(hh, hc);
  }
}

TEST(Phantom, SameSeedIsBitIdentical) {
  const auto p = small_params();
  expect_scans_equal(generate_phantom_scan(9, Label::HH, p, "s"), generate_phantom_scan(9, Label::HH, p, "s"));
  const auto a = generate_phantom_scan(9, Label::HH, p, "s"), b = generate_phantom_scan(10, Label::HH, p, "s");
  bool differ = false;
  for (std::size_t i = 0; i < a.slices[0].size(); ++i) differ |= a.slices[0][i] != b.slices[0][i];
  EXPECT_TRUE(differ);
}

TEST(Phantom, ShapeRangeAndBBoxInvariants) {
  PhantomParams p;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_phantom_scan(seed, seed % 2 ? Label::HH : Label::HC, p, "s");
    ASSERT_EQ(s.slices.size(), 8u);
    EXPECT_LE(s.bbox.row0 + s.bbox.rows, 96u);
    EXPECT_LE(s.bbox.col0 + s.bbox.cols, 96u);
    EXPECT_GE(s.bbox.rows, 10u);
    EXPECT_GE(s.bbox.cols, 10u);
    for (const auto& img : s.slices) {
      ASSERT_EQ(img.shape(), (Shape{3, 96, 96}));
      for (float v : img.data()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Phantom, LesionRaisesChannelOneMeanInsideBBox) {
  PhantomParams p = small_params();
  p.amplitude = 1.0;
  double hh_total = 0.0, hc_total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto hh = generate_phantom_scan(derive_seed(5, {seed}), Label::HH, p, "a");
    const auto hc = generate_phantom_scan(derive_seed(5, {seed}), Label::HC, p, "a");
    const auto hc_other = generate_phantom_scan(derive_seed(6, {seed}), Label::HC, p, "b");
    for (std::size_t t = 0; t < p.seq_len; ++t) {
      EXPECT_GT(bbox_mean(hh.slices[t], hh.bbox, 0), bbox_mean(hc.slices[t], hc.bbox, 0));
      hh_total += bbox_mean(hh.slices[t], hh.bbox, 0);
      hc_total += bbox_mean(hc_other.slices[t], hc_other.bbox, 0);
    }
  }
  EXPECT_GT(hh_total, hc_total);
}

TEST(Phantom, LesionOnlyTouchesIronChannels) {
  PhantomParams p = small_params();
  const auto hh = generate_phantom_scan(4, Label::HH, p, "s"), hc = generate_phantom_scan(4, Label::HC, p, "s");
  const std::size_t plane = 96 * 96;
  for (std::size_t t = 0; t < p.seq_len; ++t)
    for (std::size_t i = 0; i < plane; ++i) ASSERT_EQ(hh.slices[t][2 * plane + i], hc.slices[t][2 * plane + i]);
}

TEST(Phantom, BlobsStayInsideBBoxAndMoveAtMostThreePixels) {
  PhantomParams p;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PhantomTruth truth;
    const auto s = generate_phantom_scan(seed, Label::HH, p, "s", &truth);
    ASSERT_EQ(truth.blobs.size(), p.seq_len);
    for (std::size_t t = 0; t < p.seq_len; ++t) {
      for (std::size_t j = 0; j < truth.blobs[t].size(); ++j) {
        const auto& b = truth.blobs[t][j];
        EXPECT_GE(b.row - b.radius(), static_cast<double>(s.bbox.row0));
        EXPECT_LE(b.row + b.radius(), static_cast<double>(s.bbox.row0 + s.bbox.rows - 1));
        EXPECT_GE(b.col - b.radius(), static_cast<double>(s.bbox.col0));
        EXPECT_LE(b.col + b.radius(), static_cast<double>(s.bbox.col0 + s.bbox.cols - 1));
        if (t > 0) {
          const auto& a = truth.blobs[t - 1][j];
          EXPECT_LE(std::hypot(b.row - a.row, b.col - a.col), 3.0);
        }
      }
    }
  }
}

TEST(Phantom, LesionSignalIsZeroOutsideBBox) {
  // with noise off, HH and HC differ only inside the bbox
  PhantomParams p = small_params();
  p.noise_sigma = 0.0;
  const auto hh = generate_phantom_scan(12, Label::HH, p, "s"), hc = generate_phantom_scan(12, Label::HC, p, "s");
  bool any_inside = false;
  for (std::size_t t = 0; t < p.seq_len; ++t)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t r = 0; r < 96; ++r)
        for (std::size_t c = 0; c < 96; ++c) {
          const std::size_t i = (ch * 96 + r) * 96 + c;
          const bool inside = hh.bbox.contains(static_cast<double>(r), static_cast<double>(c));
          if (!inside) {
            ASSERT_EQ(hh.slices[t][i], hc.slices[t][i]);
          }
          any_inside |= inside && hh.slices[t][i] != hc.slices[t][i];
        }
  EXPECT_TRUE(any_inside);
}

TEST(Phantom, NegativeAmplitudeRejected) {
  PhantomParams p;
  p.amplitude = -0.1;
  EXPECT_THROW(generate_phantom_scan(1, Label::HH, p, "s"), ValidationError);
}

TEST(Phantom, CohortIsBalancedAndDeterministic) {
  auto p = small_params();
  const auto a = generate_cohort(6, 3, p), b = generate_cohort(6, 3, p);
  ASSERT_EQ(a.size(), 6u);
  int hh = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    expect_scans_equal(a[i], b[i]);
    hh += a[i].label == Label::HH;
  }
  EXPECT_EQ(hh, 3);
  EXPECT_EQ(a[4].subject_id, "sub-004");
}

TEST(DatasetIO, RoundTripIsBitwise) {
  const auto dir = fresh_dir("roundtrip");
  const auto scans = generate_cohort(4, 11, small_params());
  write_dataset(scans, dir, 1.0, 11);
  const auto d = read_dataset(dir);
  ASSERT_EQ(d.scans.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) expect_scans_equal(d.scans[i], scans[i]);
  EXPECT_EQ(d.manifest.seq_len, 3u);
  EXPECT_EQ(d.manifest.seed, 11u);
  EXPECT_EQ(d.manifest.channels.size(), 3u);
  fs::remove_all(dir);
}

TEST(DatasetIO, SliceFileLayout) {
  const auto dir = fresh_dir("layout");
  const Slice s({2, 1, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  write_slice_file(s, dir / "x.qns");
  std::ifstream in(dir / "x.qns", std::ios::binary);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ASSERT_EQ(bytes.size(), 16u + 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QNS1");
  EXPECT_EQ(bytes[4], 1);   // H
  EXPECT_EQ(bytes[8], 3);   // W
  EXPECT_EQ(bytes[12], 2);  // C
  // 1.0f = 0x3F800000 little-endian
  EXPECT_EQ(bytes[16], 0x00);
  EXPECT_EQ(bytes[19], 0x3F);
  fs::remove_all(dir);
}

TEST(DatasetIO, TruncatedSliceNamesTheFile) {
  const auto dir = fresh_dir("trunc");
  write_dataset(generate_cohort(2, 1, small_params()), dir, 1.0, 1);
  const auto victim = dir / "sub-001" / "slice_01.qns";
  fs::resize_file(victim, fs::file_size(victim) - 7);
  try {
    read_dataset(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("slice_01.qns"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(DatasetIO, BadMagicNamesTheFile) {
  const auto dir = fresh_dir("magic");
  write_dataset(generate_cohort(1, 1, small_params()), dir, 1.0, 1);
  const auto victim = dir / "sub-000" / "slice_00.qns";
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(
      {
        try {
          read_dataset(dir);
        } catch (const FormatError& e) {
          EXPECT_NE(std::string(e.what()).find("slice_00.qns"), std::string::npos);
          throw;
        }
      },
      FormatError);
  fs::remove_all(dir);
}

TEST(DatasetIO, UnknownLabelIsValidationError) {
  const auto dir = fresh_dir("label");
  write_dataset(generate_cohort(2, 1, small_params()), dir, 1.0, 1);
  std::ifstream in(dir / "manifest.json");
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  in.close();
  const auto pos = text.find("\"HH\"");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 4, "\"PD\"");
  std::ofstream(dir / "manifest.json") << text;
  EXPECT_THROW(read_dataset(dir), ValidationError);
  fs::remove_all(dir);
}

TEST(DatasetIO, MissingManifestIsFormatError) {
  EXPECT_THROW(read_dataset(fs::temp_directory_path() / "qnet_no_such_dir"), FormatError);
}

TEST(Folds, TwentySubjectsTenFoldsGiveOneOfEachClass) {
  std::vector<std::string> ids;
  std::vector<Label> labels;
  for (int i = 0; i < 20; ++i) {
    ids.push_back("s" + std::to_string(i));
    labels.push_back(i < 10 ? Label::HC : Label::HH);
  }
  const auto split = make_folds(ids, labels, 10, 4);
  EXPECT_TRUE(split.stratified);
  for (std::size_t f = 0; f < 10; ++f) {
    const auto test = split.test_indices(f);
    ASSERT_EQ(test.size(), 2u);
    EXPECT_NE(labels[test[0]], labels[test[1]]);
  }
}

TEST(Folds, PartitionBalanceAndNoLeakage) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.below(60);
    std::vector<std::string> ids;
    std::vector<Label> labels;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("id" + std::to_string(i));
      labels.push_back(rng.bernoulli(0.5) ? Label::HH : Label::HC);
    }
    const std::size_t k = 2 + rng.below(std::min<std::size_t>(n - 1, 10));
    ::testing::internal::CaptureStderr();
    const auto split = make_folds(ids, labels, k, rng.next_u64());
    ::testing::internal::GetCapturedStderr();
    std::vector<std::size_t> size(k, 0), hh(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_LT(split.fold_of[i], k);
      ++size[split.fold_of[i]];
      hh[split.fold_of[i]] += labels[i] == Label::HH;
    }
    EXPECT_LE(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()), 1u);
    if (split.stratified) {
      EXPECT_LE(*std::max_element(hh.begin(), hh.end()) - *std::min_element(hh.begin(), hh.end()), 1u);
    }
    for (std::size_t f = 0; f < k; ++f) {
      std::set<std::string> train, test;
      for (auto i : split.train_indices(f)) train.insert(ids[i]);
      for (auto i : split.test_indices(f)) test.insert(ids[i]);
      EXPECT_EQ(train.size() + test.size(), n);
      for (const auto& id : test) EXPECT_EQ(train.count(id), 0u);
    }
  }
}

TEST(Folds, DeterministicPerSeed) {
  std::vector<std::string> ids;
  std::vector<Label> labels;
  for (int i = 0; i < 30; ++i) {
    ids.push_back(std::to_string(i));
    labels.push_back(i % 3 ? Label::HC : Label::HH);
  }
  EXPECT_EQ(make_folds(ids, labels, 5, 8).fold_of, make_folds(ids, labels, 5, 8).fold_of);
  EXPECT_NE(make_folds(ids, labels, 5, 8).fold_of, make_folds(ids, labels, 5, 9).fold_of);
}

TEST(Folds, SmallClassWarnsAndFallsBack) {
  std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f"};
  std::vector<Label> labels = {Label::HC, Label::HC, Label::HC, Label::HC, Label::HC, Label::HH};
  ::testing::internal::CaptureStderr();
  const auto split = make_folds(ids, labels, 3, 1);
  const auto err = ::testing::internal::GetCapturedStderr();
  EXPECT_FALSE(split.stratified);
  EXPECT_NE(err.find("warning"), std::string::npos);
  EXPECT_THROW(make_folds(ids, labels, 7, 1), ValidationError);
}
