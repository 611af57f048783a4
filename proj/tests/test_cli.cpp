#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "qnet/artifact.hpp"
#include "qnet/config.hpp"
#include "qnet/dataset.hpp"
#include "qnet/scores.hpp"

namespace fs = std::filesystem;
using namespace qnet;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("qnet_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  // 8 subjects, 2 folds, one epoch per stage: seconds per run.
  std::string tiny_config() const {
    const std::string file = path("tiny.json");
    std::ofstream(file) << R"({"train": {"stage1": {"epochs": 1, "batch": 8}, "stage2": {"epochs": 1}},
                               "cv": {"folds": 2}})";
    return file;
  }

  int synth(int subjects = 8) {
    return cli::run({"synth", "--out", path("data"), "--subjects", std::to_string(subjects), "--seed", "1"});
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SynthWritesAValidManifest) {
  ASSERT_EQ(cli::run({"synth", "--out", path("d"), "--subjects", "20", "--seed", "1"}), 0);
  const auto m = read_manifest(path("d"));
  EXPECT_EQ(m.subjects.size(), 20u);
  EXPECT_EQ(m.seed, 1u);
  const auto meta = read_meta_sidecar(path("d/manifest.json"));
  EXPECT_EQ(meta.kind, "dataset");
  EXPECT_EQ(meta.seed, 1u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli::run({"--bogus-flag"}), 2);
  EXPECT_EQ(cli::run({}), 2);
  EXPECT_EQ(cli::run({"synth", "--out", path("d"), "--data.no_such_key", "1"}), 2);
  EXPECT_EQ(cli::run({"synth", "--out", path("d"), "--data.subjects", "many"}), 2);
  EXPECT_EQ(cli::run({"synth", "--out", path("d"), "--augment.p_gamma", "2"}), 2);
  std::ofstream(path("bad.json")) << R"({"train": {"stage3": {}}})";
  EXPECT_EQ(cli::run({"synth", "--out", path("d"), "--config", path("bad.json")}), 2);
  EXPECT_FALSE(fs::exists(path("d")));
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(cli::run({"cv", "--data", path("missing"), "--out", path("cv")}), 1);
}

TEST_F(Cli, CvTwiceIsByteIdentical) {
  ASSERT_EQ(synth(), 0);
  const auto cfg = tiny_config();
  ASSERT_EQ(cli::run({"cv", "--data", path("data"), "--config", cfg, "--out", path("a")}), 0);
  ASSERT_EQ(cli::run({"cv", "--data", path("data"), "--config", cfg, "--out", path("b"), "--workers", "2"}), 0);
  const auto a = slurp(path("a/scores.csv"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(path("b/scores.csv")));
  EXPECT_EQ(slurp(path("a/scores.csv.meta.json")), slurp(path("b/scores.csv.meta.json")));
}

TEST_F(Cli, FlagOverridesConfigFile) {
  ASSERT_EQ(synth(), 0);
  ASSERT_EQ(cli::run({"cv", "--data", path("data"), "--config", tiny_config(), "--out", path("cv"),
                      "--train.stage2.lr", "0.001", "--seed", "5"}),
            0);
  const auto c = load_config(path("cv/config.json"));
  EXPECT_EQ(c.pipeline.train.stage2.lr, 0.001);
  EXPECT_EQ(c.pipeline.train.seed, 5u);
  EXPECT_EQ(c.pipeline.train.stage1.epochs, 1u);
  const auto meta = read_meta_sidecar(path("cv/scores.csv"));
  EXPECT_EQ(meta.config_hash, config_hash(c));
  EXPECT_EQ(meta.seed, 5u);
}

TEST_F(Cli, EvalIsAPureFunctionOfTheTable) {
  ASSERT_EQ(synth(), 0);
  ASSERT_EQ(cli::run({"cv", "--data", path("data"), "--config", tiny_config(), "--out", path("cv")}), 0);
  const auto before = slurp(path("cv/scores.csv"));
  ASSERT_EQ(cli::run({"eval", "--scores", path("cv/scores.csv"), "--out", path("e1"), "--bootstrap", "50"}), 0);
  ASSERT_EQ(cli::run({"eval", "--scores", path("cv/scores.csv"), "--out", path("e2"), "--bootstrap", "50"}), 0);
  EXPECT_EQ(slurp(path("cv/scores.csv")), before);
  for (const char* f : {"metrics.csv", "bootstrap_summary.csv", "roc_qnet_full_scan.csv", "bootstrap_vote_full_scan.csv"}) {
    SCOPED_TRACE(f);
    EXPECT_TRUE(fs::exists(path(std::string("e1/") + f)));
    EXPECT_EQ(slurp(path(std::string("e1/") + f)), slurp(path(std::string("e2/") + f)));
    EXPECT_TRUE(fs::exists(sidecar_path(path(std::string("e1/") + f))));
  }
  EXPECT_EQ(slurp(path("e1/roc_qnet_full_scan.csv")).rfind("fpr,tpr,threshold\n", 0), 0u);
}

TEST_F(Cli, DelongOnIdenticalScoresIsNotSignificant) {
  ASSERT_EQ(synth(), 0);
  ASSERT_EQ(cli::run({"cv", "--data", path("data"), "--config", tiny_config(), "--out", path("cv")}), 0);
  ASSERT_EQ(cli::run({"delong", "--a", path("cv/scores.csv"), "--model-a", "qnet", "--level", "scan", "--out",
                      path("same.csv")}),
            0);
  const auto text = slurp(path("same.csv"));
  EXPECT_NE(text.find(",1,ns,0\n"), std::string::npos) << text;
  EXPECT_EQ(cli::run({"delong", "--a", path("cv/scores.csv"), "--model-a", "nonesuch"}), 1);
}

TEST_F(Cli, TrainWritesCheckpointsAndCamReadsThem) {
  ASSERT_EQ(synth(), 0);
  ASSERT_EQ(cli::run({"train", "--data", path("data"), "--config", tiny_config(), "--out", path("fold"), "--fold", "1"}),
            0);
  for (const char* f : {"stage1.qnck", "stage1_last.qnck", "stage2.qnck", "scores.csv"}) {
    SCOPED_TRACE(f);
    EXPECT_TRUE(fs::exists(path(std::string("fold/") + f)));
    EXPECT_TRUE(fs::exists(sidecar_path(path(std::string("fold/") + f))));
  }
  const auto rows = read_scores_csv(path("fold/scores.csv"));
  EXPECT_FALSE(rows.empty());

  ASSERT_EQ(cli::run({"cam", "--checkpoint", path("fold/stage1.qnck"), "--data", path("data"), "--out", path("cam"),
                      "--subject", "sub-001"}),
            0);
  EXPECT_TRUE(fs::exists(path("cam/sub-001_slice00.pgm")));
  EXPECT_TRUE(fs::exists(path("cam/sub-001_slice00_overlay.pgm")));
  EXPECT_TRUE(fs::exists(path("cam/sub-001_slice00.csv")));
  EXPECT_FALSE(fs::exists(path("cam/sub-000_slice00.pgm")));
  const auto pgm = slurp(path("cam/sub-001_slice00.pgm"));
  const auto meta = read_meta_sidecar(path("fold/stage1.qnck"));
  EXPECT_NE(pgm.find("config_hash=" + meta.config_hash), std::string::npos);

  EXPECT_EQ(cli::run({"cam", "--checkpoint", path("fold/stage2.qnck"), "--data", path("data"), "--out", path("c2")}), 2);
}
