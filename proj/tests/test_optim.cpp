#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "qnet/backbone.hpp"
#include "qnet/checkpoint.hpp"
#include "qnet/optim.hpp"

using namespace qnet;
namespace fs = std::filesystem;

namespace {

Parameter<double> scalar_param(double value, double grad) {
  Parameter<double> p("w", {1});
  p.value[0] = value;
  p.grad[0] = grad;
  return p;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  auto p = scalar_param(1.25, 0.0);
  adam_step(p, 0.1, 1);
  EXPECT_EQ(p.value[0], 1.25);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  for (double g : {0.5, -3.0, 1e-3}) {
    auto p = scalar_param(0.0, g);
    adam_step(p, 0.01, 1);
    // m_hat = g, v_hat = g^2
    EXPECT_NEAR(p.value[0], -0.01 * g / (std::abs(g) + 1e-8), 1e-15);
  }
}

TEST(Adam, TwoUnitGradientStepsEachMoveByLr) {
  auto p = scalar_param(0.0, 1.0);
  adam_step(p, 0.1, 1);
  const double after1 = p.value[0];
  adam_step(p, 0.1, 2);
  // step 2: m = 0.19, v = 0.001999, bias corrections 0.19 and 0.001999 -> m_hat = v_hat = 1
  EXPECT_NEAR(after1, -0.1 / (1.0 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value[0] - after1, -0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, FrozenParameterIsBitIdentical) {
  auto p = scalar_param(0.3, 2.0);
  p.frozen = true;
  Adam<double> opt({&p});
  for (int i = 0; i < 5; ++i) opt.step(0.5);
  EXPECT_EQ(p.value[0], 0.3);
  EXPECT_EQ(p.adam_m[0], 0.0);
}

TEST(Adam, StepCounterStartsAtOne) {
  auto p = scalar_param(0.0, 1.0);
  EXPECT_THROW(adam_step(p, 0.1, 0), ValidationError);
}

TEST(CosineLr, EndpointsAreExact) {
  for (std::size_t total : {1u, 7u, 1000u}) {
    EXPECT_EQ(cosine_lr(0, total, 3e-4, 1e-4), 3e-4);
    EXPECT_EQ(cosine_lr(total, total, 3e-4, 1e-4), 1e-4);
  }
}

TEST(CosineLr, MidpointMonotoneAndBounded) {
  EXPECT_NEAR(cosine_lr(500, 1000, 3e-4, 1e-4), 2e-4, 1e-18);
  double prev = cosine_lr(0, 1000, 3e-4, 1e-4);
  for (std::size_t t = 1; t <= 1000; ++t) {
    const double lr = cosine_lr(t, 1000, 3e-4, 1e-4);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, 1e-4);
    EXPECT_LE(lr, 3e-4);
    prev = lr;
  }
  EXPECT_THROW(cosine_lr(1001, 1000, 3e-4, 1e-4), ValidationError);
}

TEST(Swa, MeanOfRandomSnapshotsMatchesArithmeticMean) {
  Rng rng(3);
  Parameter<float> a("a", {50}), b("b", {7});
  ParamRefs<float> params{&a, &b};
  SwaState<float> swa;
  std::vector<std::vector<long double>> sum{std::vector<long double>(50), std::vector<long double>(7)};
  for (int snap = 0; snap < 13; ++snap) {
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < params[i]->value.size(); ++j) {
        params[i]->value[j] = static_cast<float>(rng.normal(0.0, 3.0));
        sum[i][j] += params[i]->value[j];
      }
    swa.update(params);
  }
  EXPECT_EQ(swa.count(), 13u);
  swa.install(params);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < params[i]->value.size(); ++j) {
      const long double want = sum[i][j] / 13.0L;
      EXPECT_LE(std::abs(params[i]->value[j] - want) / std::max(1e-30L, std::abs(want)), 1e-7L);
    }
}

TEST(Swa, TwoSnapshotsAverageExactlyInDouble) {
  Parameter<double> p("p", {3});
  ParamRefs<double> params{&p};
  SwaState<double> swa;
  p.value = Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.1});
  swa.update(params);
  p.value = Tensor<double>({3}, std::vector<double>{3.0, 5.0, 0.2});
  swa.update(params);
  swa.install(params);
  EXPECT_EQ(p.value[0], 2.0);
  EXPECT_EQ(p.value[1], 1.5);
  EXPECT_EQ(p.value[2], (0.1 + 0.2) / 2.0);
}

TEST(Swa, IdenticalSnapshotsReproduceTheSnapshot) {
  Parameter<float> p("p", {4});
  p.value = Tensor<float>({4}, std::vector<float>{0.1f, -7.25f, 3e-5f, 1e6f});
  const auto original = p.value;
  SwaState<float> swa;
  for (int i = 0; i < 9; ++i) swa.update({&p});
  p.value.fill(0.0f);
  swa.install({&p});
  EXPECT_EQ(p.value, original);
}

TEST(Swa, FinalizeWithoutSnapshotsThrows) {
  Parameter<float> p("p", {1});
  SwaState<float> swa;
  EXPECT_THROW(swa.install({&p}), ValidationError);
}

TEST(ParameterHash, DetectsSingleUlpChange) {
  Parameter<float> p("p", {10});
  const auto h0 = hash_parameters<float>({&p});
  p.value[3] = std::nextafter(0.0f, 1.0f);
  EXPECT_NE(hash_parameters<float>({&p}), h0);
}

TEST(CheckpointIO, RoundTripReproducesInferenceBitwise) {
  const auto file = fs::temp_directory_path() / "qnet_test_ck.qnck";
  ImageModel<float> a(BackboneConfig{});
  a.init(17);
  // non-trivial BN statistics
  for (auto& b : a.buffers())
    for (std::size_t i = 0; i < b.tensor->size(); ++i) (*b.tensor)[i] += 0.01f * static_cast<float>(i % 5);
  Checkpoint ck;
  ck.stage = "stage1";
  ck.config_hash = "abc";
  ck.seed = 5;
  ck.config_json = "{\"x\":1}";
  capture_tensors(ck, a.parameters(), a.buffers());
  save_checkpoint(ck, file);

  const auto loaded = load_checkpoint(file);
  EXPECT_EQ(loaded.stage, "stage1");
  EXPECT_EQ(loaded.config_hash, "abc");
  EXPECT_EQ(loaded.seed, 5u);
  EXPECT_EQ(loaded.config_json, "{\"x\":1}");
  ImageModel<float> b(BackboneConfig{});
  b.init(99);
  restore_tensors(loaded, b.parameters(), b.buffers());

  Rng rng(1);
  Tensor<float> x({2, 3, 64, 64});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(a.forward(x, Mode::Infer), b.forward(x, Mode::Infer));
  fs::remove(file);
}

TEST(CheckpointIO, HeaderLayout) {
  const auto file = fs::temp_directory_path() / "qnet_test_ck_layout.qnck";
  Checkpoint ck;
  ck.stage = "stage2";
  ck.tensors.push_back({"t", Tensor<float>({2}, std::vector<float>{1.0f, -2.0f})});
  save_checkpoint(ck, file);
  std::ifstream in(file, std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "QNCK");
  EXPECT_EQ(bytes[4], 1);
  const auto hlen = static_cast<unsigned char>(bytes[8]) | static_cast<unsigned char>(bytes[9]) << 8;
  EXPECT_EQ(bytes.size(), 12u + hlen + 8u);
  EXPECT_EQ(bytes[12], '{');
  fs::remove(file);
}

TEST(CheckpointIO, CorruptFilesAreFormatErrors) {
  const auto file = fs::temp_directory_path() / "qnet_test_ck_bad.qnck";
  Checkpoint ck;
  ck.tensors.push_back({"t", Tensor<float>({64})});
  save_checkpoint(ck, file);
  fs::resize_file(file, fs::file_size(file) - 4);
  EXPECT_THROW(load_checkpoint(file), FormatError);
  std::ofstream(file, std::ios::trunc) << "NOPE0000000000";
  EXPECT_THROW(load_checkpoint(file), FormatError);
  fs::remove(file);
}

TEST(CheckpointIO, RestoreRejectsMissingOrMisshapenTensors) {
  Checkpoint ck;
  ck.tensors.push_back({"w", Tensor<float>({3})});
  Parameter<float> w("w", {4}), v("v", {3});
  EXPECT_THROW(restore_tensors(ck, {&w}, {}), DimensionError);
  EXPECT_THROW(restore_tensors(ck, {&v}, {}), FormatError);
  Parameter<float> dup("w", {3});
  EXPECT_THROW(capture_tensors(ck, {&dup}, {}), ValidationError);
}
