#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qnet/scores.hpp"

namespace qnet {

// Positive class is HH everywhere: label 1 = HH, 0 = HC.

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Metrics with a zero denominator are left empty instead of NaN.
struct ConfusionMetrics {
  std::optional<double> accuracy, sensitivity, specificity, precision, f1;
};

ConfusionMetrics confusion_metrics(const ConfusionCounts& c);

/// Counts with prediction HH iff p > threshold.
ConfusionCounts count_predictions(std::span<const double> p, std::span<const int> labels, double threshold = 0.5);

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
  double threshold = 0.0;  // score >= threshold is called positive; +inf for the (0,0) point
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last
  double auc = 0.0;
};

/// Threshold sweep over distinct scores. The trapezoid area is computed from integer counts,
/// so it equals the Mann-Whitney pair count (ties 1/2) exactly. Throws ValidationError on one class.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

struct DeLongResult {
  double auc1 = 0.0, auc2 = 0.0;
  double var1 = 0.0, var2 = 0.0, cov12 = 0.0;
  double std_error = 0.0;  // of auc1 - auc2
  double z = 0.0;
  double p_value = 1.0;
  std::string band;
  bool degenerate = false;  // zero variance of the difference with auc1 != auc2
};

/// Paired DeLong test with naive O(m n) structural components.
DeLongResult delong_test(std::span<const double> scores1, std::span<const double> scores2, std::span<const int> labels);

/// Two-sided normal tail, clamped into (0, 1].
double two_sided_p(double z);

/// ns / * / ** / *** / **** with right-inclusive bounds 0.05, 0.01, 0.001, 0.0001.
std::string p_to_significance(double p);

struct BootstrapResult {
  std::vector<double> aucs;  // in resample order
  double median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
};

/// Stratified resampling with replacement; resample b uses derive_seed(seed, {b}).
BootstrapResult bootstrap_auc(std::span<const double> scores, std::span<const int> labels, std::size_t B = 1000,
                              std::uint64_t seed = 1);

/// Linear-interpolation quantile of unsorted values, q in [0,1].
double quantile(std::vector<double> values, double q);

/// Scan label from slice probabilities: majority of p > 0.5, ties by mean p > 0.5, then HC.
Label majority_vote(std::span<const double> slice_p);

/// Metrics for one (model, mode, level) group of a score table.
struct ModelReport {
  std::string model, mode, level;  // level: "image" or "scan"
  std::vector<double> p;
  std::vector<int> labels;
  std::vector<std::string> keys;  // subject_id[:slice] per row, used to pair models
  ConfusionCounts counts;
  ConfusionMetrics metrics;
  std::optional<RocCurve> roc;  // empty if only one class is present
};

/// Groups a score table in first-appearance order and scores each group.
std::vector<ModelReport> evaluate_scores(const std::vector<ScoreRow>& rows);

std::string format_roc_csv(const RocCurve& roc);
std::string format_bootstrap_csv(const BootstrapResult& b);

}  // namespace qnet
