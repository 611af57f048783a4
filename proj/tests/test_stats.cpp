#include <gtest/gtest.h>

#include <cmath>

#include "qnet/rng.hpp"
#include "qnet/stats.hpp"
#include "qnet/train.hpp"
#include "support/stats_oracle.hpp"

using namespace qnet;
using qnet::testing::brute_force_auc;
using qnet::testing::jackknife_auc_cov;

namespace {

struct Instance {
  std::vector<double> s;
  std::vector<int> y;
};

// n in [2, 30] with both classes and scores on a coarse grid so ties are common.
Instance random_instance(Rng& rng, std::size_t min_per_class = 1) {
  Instance in;
  const auto n = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(2 * min_per_class), 30));
  for (std::size_t i = 0; i < n; ++i) {
    in.y.push_back(i < min_per_class ? 1 : (i < 2 * min_per_class ? 0 : static_cast<int>(rng.below(2))));
    in.s.push_back(static_cast<double>(rng.integer(0, 12)) / 12.0 + (rng.bernoulli(0.3) ? rng.uniform(0.0, 0.01) : 0.0));
  }
  return in;
}

}  // namespace

TEST(Confusion, HandEvaluatedExample) {
  const auto m = confusion_metrics({.tp = 2, .fp = 0, .tn = 3, .fn = 1});
  EXPECT_NEAR(*m.sensitivity, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(*m.specificity, 1.0);
  EXPECT_NEAR(*m.accuracy, 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(*m.f1, 0.8, 1e-15);
  EXPECT_NEAR(*m.sensitivity, 0.6667, 5e-5);
  EXPECT_NEAR(*m.accuracy, 0.8333, 5e-5);
}

TEST(Confusion, AllCorrectAndUndefinedFlags) {
  const auto all = confusion_metrics({.tp = 4, .fp = 0, .tn = 5, .fn = 0});
  for (const auto& v : {all.accuracy, all.sensitivity, all.specificity, all.precision, all.f1}) EXPECT_EQ(*v, 1.0);
  const auto none = confusion_metrics({.tp = 0, .fp = 0, .tn = 3, .fn = 2});
  EXPECT_FALSE(none.precision.has_value());
  EXPECT_FALSE(none.f1.has_value());
  EXPECT_EQ(*none.sensitivity, 0.0);
  const auto empty = confusion_metrics({});
  EXPECT_FALSE(empty.accuracy.has_value());
}

TEST(Confusion, CountsFollowThresholdAndSumToN) {
  const std::vector<double> p{0.9, 0.5, 0.51, 0.1, 0.7};
  const std::vector<int> y{1, 1, 0, 0, 1};
  const auto c = count_predictions(p, y);
  EXPECT_EQ(c, (ConfusionCounts{.tp = 2, .fp = 1, .tn = 1, .fn = 1}));
  EXPECT_EQ(c.total(), p.size());
}

TEST(RocAuc, WorkedExamples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}).auc, 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.8, 0.3, 0.5, 0.1}, std::vector<int>{1, 1, 0, 0}).auc, 0.75);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}).auc, 0.5);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), DimensionError);
}

TEST(RocAuc, MatchesPairCountingWithTies) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(rng);
    EXPECT_NEAR(roc_auc(in.s, in.y).auc, brute_force_auc(in.s, in.y), 1e-12);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransforms) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng);
    for (auto& v : in.s) v = v * 2.0 - 1.0;  // include negative scores so x^3 is tested on both signs
    const double a = roc_auc(in.s, in.y).auc;
    auto lin = in.s, cube = in.s;
    for (auto& v : lin) v = 2.0 * v + 1.0;
    for (auto& v : cube) v = v * v * v;
    EXPECT_EQ(roc_auc(lin, in.y).auc, a);
    EXPECT_EQ(roc_auc(cube, in.y).auc, a);
  }
}

TEST(RocAuc, CurveShape) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng);
    const auto roc = roc_auc(in.s, in.y);
    ASSERT_GE(roc.points.size(), 2u);
    EXPECT_EQ(roc.points.front().fpr, 0.0);
    EXPECT_EQ(roc.points.front().tpr, 0.0);
    EXPECT_EQ(roc.points.back().fpr, 1.0);
    EXPECT_EQ(roc.points.back().tpr, 1.0);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
      EXPECT_GE(roc.points[i].fpr, roc.points[i - 1].fpr);
      EXPECT_GE(roc.points[i].tpr, roc.points[i - 1].tpr);
      EXPECT_LT(roc.points[i].threshold, roc.points[i - 1].threshold);
    }
  }
}

TEST(DeLong, IdenticalModelsGivePOne) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng);
    const auto r = delong_test(in.s, in.s, in.y);
    EXPECT_EQ(r.z, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_EQ(r.band, "ns");
    EXPECT_FALSE(r.degenerate);
  }
}

TEST(DeLong, SwappingModelsNegatesZAndKeepsP) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_instance(rng, 2);
    auto b = a.s;
    for (auto& v : b) v += rng.normal(0.0, 0.2);
    const auto ab = delong_test(a.s, b, a.y), ba = delong_test(b, a.s, a.y);
    EXPECT_EQ(ab.z, -ba.z);
    EXPECT_EQ(ab.p_value, ba.p_value);
    EXPECT_EQ(ab.auc1, roc_auc(a.s, a.y).auc);
    EXPECT_EQ(ab.auc2, roc_auc(b, a.y).auc);
    EXPECT_GT(ab.p_value, 0.0);
    EXPECT_LE(ab.p_value, 1.0);
  }
}

TEST(DeLong, CovarianceMatchesJackknifeOnFourItems) {
  const std::vector<int> y{1, 0, 1, 0};
  const std::vector<double> s1{0.9, 0.3, 0.4, 0.6}, s2{0.7, 0.2, 0.1, 0.5};
  const auto r = delong_test(s1, s2, y);
  EXPECT_NEAR(r.var1, jackknife_auc_cov(s1, s1, y), 1e-14);
  EXPECT_NEAR(r.var2, jackknife_auc_cov(s2, s2, y), 1e-14);
  EXPECT_NEAR(r.cov12, jackknife_auc_cov(s1, s2, y), 1e-14);
  // hand values: V10 = {1, 0.5}, V01 = {0.5, 1} for model 1 -> var = 0.125/2 + 0.125/2
  EXPECT_NEAR(r.var1, 0.125, 1e-15);
}

TEST(DeLong, CovarianceMatchesJackknifeOnRandomInstances) {
  Rng rng(16);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_instance(rng, 2);
    auto b = a.s;
    for (auto& v : b) v = rng.bernoulli(0.5) ? v : rng.uniform();
    const auto r = delong_test(a.s, b, a.y);
    EXPECT_NEAR(r.var1, jackknife_auc_cov(a.s, a.s, a.y), 1e-12);
    EXPECT_NEAR(r.var2, jackknife_auc_cov(b, b, a.y), 1e-12);
    EXPECT_NEAR(r.cov12, jackknife_auc_cov(a.s, b, a.y), 1e-12);
  }
}

TEST(DeLong, ZeroVarianceWithDifferentAucIsFlagged) {
  // both models separate perfectly but one ranks a tie: structural components are constant
  const std::vector<int> y{1, 1, 0, 0};
  const std::vector<double> s1{0.9, 0.8, 0.1, 0.2}, s2{0.5, 0.5, 0.5, 0.5};
  const auto r = delong_test(s1, s2, y);
  EXPECT_TRUE(r.degenerate);
  EXPECT_GT(r.z, 0.0);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_EQ(r.band, "****");
}

TEST(DeLong, TwoSidedTailValues) {
  EXPECT_NEAR(two_sided_p(1.9767), 0.0480, 5e-4);
  EXPECT_NEAR(two_sided_p(1.959963984540054), 0.05, 1e-12);
  EXPECT_EQ(two_sided_p(0.0), 1.0);
  EXPECT_GT(two_sided_p(60.0), 0.0);
  EXPECT_EQ(two_sided_p(-2.5), two_sided_p(2.5));
}

TEST(Significance, BandsAndBoundaries) {
  // p-values as printed in a published comparison table, with their bands
  const std::vector<std::pair<double, std::string>> rows{
      {0.0589, "ns"}, {6.2e-33, "****"}, {1.1e-25, "****"}, {0.0480, "*"}, {1.5e-35, "****"}, {2.7e-29, "****"}};
  for (const auto& [p, band] : rows) EXPECT_EQ(p_to_significance(p), band) << p;
  EXPECT_EQ(p_to_significance(1.0), "ns");
  EXPECT_EQ(p_to_significance(0.05), "*");
  EXPECT_EQ(p_to_significance(0.01), "**");
  EXPECT_EQ(p_to_significance(0.001), "***");
  EXPECT_EQ(p_to_significance(0.0001), "****");
  EXPECT_EQ(p_to_significance(std::nextafter(0.05, 1.0)), "ns");
  EXPECT_EQ(p_to_significance(std::nextafter(0.0001, 1.0)), "***");
  for (double bad : {0.0, -0.1, 1.0000001, std::nan("")}) EXPECT_THROW(p_to_significance(bad), ValidationError);
}

TEST(Bootstrap, PerfectSeparationAlwaysOne) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1, 0.2};
  const std::vector<int> y{1, 1, 1, 0, 0};
  const auto b = bootstrap_auc(s, y, 200, 3);
  ASSERT_EQ(b.aucs.size(), 200u);
  for (double a : b.aucs) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(b.median, 1.0);
}

TEST(Bootstrap, DeterministicAndOrdered) {
  Rng rng(17);
  const auto in = random_instance(rng, 3);
  const auto a = bootstrap_auc(in.s, in.y, 300, 9), b = bootstrap_auc(in.s, in.y, 300, 9);
  EXPECT_EQ(a.aucs, b.aucs);
  EXPECT_NE(a.aucs, bootstrap_auc(in.s, in.y, 300, 10).aucs);
  EXPECT_LE(a.min, a.q1);
  EXPECT_LE(a.q1, a.median);
  EXPECT_LE(a.median, a.q3);
  EXPECT_LE(a.q3, a.max);
}

TEST(Bootstrap, StratifiedResamplesKeepClassCounts) {
  // with one positive the resample always holds that positive, so AUC depends only on the negatives drawn
  const std::vector<double> s{0.5, 0.4, 0.6};
  const std::vector<int> y{1, 0, 0};
  const auto b = bootstrap_auc(s, y, 100, 1);
  for (double a : b.aucs) EXPECT_TRUE(a == 0.0 || a == 0.5 || a == 1.0) << a;
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 0.5), 2.5);
  EXPECT_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 0.25), 1.75);
  EXPECT_EQ(quantile({7.0}, 0.9), 7.0);
  EXPECT_THROW(quantile({}, 0.5), ValidationError);
}

TEST(MajorityVote, RuleAndTieBreak) {
  EXPECT_EQ(majority_vote(std::vector<double>{0.2, 0.3, 0.9}), Label::HC);
  EXPECT_EQ(majority_vote(std::vector<double>{0.9, 0.8, 0.1}), Label::HH);
  EXPECT_EQ(majority_vote(std::vector<double>{0.4, 1.0}), Label::HH);  // mean 0.7
  EXPECT_EQ(majority_vote(std::vector<double>{0.6, 0.2}), Label::HC);
  EXPECT_EQ(majority_vote(std::vector<double>{0.4, 0.6}), Label::HC);  // tie in both
  EXPECT_THROW(majority_vote(std::vector<double>{}), ValidationError);
}

TEST(MajorityVote, AgreesWithVoteScoreThreshold) {
  Rng rng(18);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(static_cast<std::size_t>(rng.integer(1, 8)));
    for (auto& v : p) v = static_cast<double>(rng.integer(0, 10)) / 10.0;
    EXPECT_EQ(majority_vote(p), vote_score(p) > 0.5 ? Label::HH : Label::HC);
  }
}

TEST(Evaluate, GroupsByModelModeAndLevel) {
  std::vector<ScoreRow> rows{
      {"a", 0, Label::HH, 0.9, "resnet", "full"}, {"b", 0, Label::HC, 0.2, "resnet", "full"},
      {"a", -1, Label::HH, 0.8, "qnet", "full"},  {"b", -1, Label::HC, 0.6, "qnet", "full"},
      {"a", -1, Label::HH, 0.8, "qnet", "cropped"}};
  const auto rep = evaluate_scores(rows);
  ASSERT_EQ(rep.size(), 3u);
  EXPECT_EQ(rep[0].model, "resnet");
  EXPECT_EQ(rep[0].level, "image");
  EXPECT_EQ(rep[0].keys, (std::vector<std::string>{"a:0", "b:0"}));
  EXPECT_EQ(rep[0].roc->auc, 1.0);
  EXPECT_EQ(rep[1].counts, (ConfusionCounts{.tp = 1, .fp = 1, .tn = 0, .fn = 0}));
  EXPECT_EQ(rep[1].level, "scan");
  EXPECT_FALSE(rep[2].roc.has_value());
  EXPECT_EQ(format_roc_csv(*rep[0].roc).substr(0, 18), "fpr,tpr,threshold\n");
}
