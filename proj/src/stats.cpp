#include "qnet/stats.hpp"

#include <algorithm>
#include <array>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "qnet/error.hpp"
#include "qnet/rng.hpp"

namespace qnet {

namespace {

struct ClassSplit {
  std::vector<double> pos, neg;
};

ClassSplit split_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                         std::to_string(labels.size()) + ")");
  ClassSplit s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ValidationError("non-finite score");
    (labels[i] ? s.pos : s.neg).push_back(scores[i]);
  }
  if (s.pos.empty() || s.neg.empty()) throw ValidationError("AUC needs both classes present");
  return s;
}

double psi(double x, double y) { return x > y ? 1.0 : (x == y ? 0.5 : 0.0); }

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
  ConfusionMetrics m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.precision = ratio(c.tp, c.tp + c.fp);
  if (m.precision && m.sensitivity && *m.precision + *m.sensitivity > 0.0)
    m.f1 = 2.0 * *m.precision * *m.sensitivity / (*m.precision + *m.sensitivity);
  return m;
}

ConfusionCounts count_predictions(std::span<const double> p, std::span<const int> labels, double threshold) {
  if (p.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = p[i] > threshold;
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto cls = split_classes(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const auto P = cls.pos.size(), N = cls.neg.size();
  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0, twice_area = 0;  // area in units of one half pos-neg pair
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    const std::uint64_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == t; ++i) (labels[order[i]] ? tp : fp)++;
    twice_area += (fp - fp0) * (tp + tp0);
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P), t});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
  return roc;
}

double two_sided_p(double z) {
  if (std::isnan(z)) throw ValidationError("z is NaN");
  return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), DBL_MIN, 1.0);
}

std::string p_to_significance(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("p-value must be in (0,1]");
  if (p > 0.05) return "ns";
  if (p > 0.01) return "*";
  if (p > 0.001) return "**";
  if (p > 0.0001) return "***";
  return "****";
}

DeLongResult delong_test(std::span<const double> scores1, std::span<const double> scores2, std::span<const int> labels) {
  if (scores1.size() != scores2.size()) throw DimensionError("DeLong: models scored different numbers of items");
  const std::array<ClassSplit, 2> cls{split_classes(scores1, labels), split_classes(scores2, labels)};
  const std::size_t m = cls[0].pos.size(), n = cls[0].neg.size();

  // structural components V10 (one per positive) and V01 (one per negative) for each model
  std::array<std::vector<double>, 2> v10, v01;
  std::array<double, 2> auc{};
  for (std::size_t k = 0; k < 2; ++k) {
    v10[k].assign(m, 0.0);
    v01[k].assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double s = psi(cls[k].pos[i], cls[k].neg[j]);
        v10[k][i] += s;
        v01[k][j] += s;
      }
    for (auto& v : v10[k]) v /= static_cast<double>(n);
    for (auto& v : v01[k]) v /= static_cast<double>(m);
    auc[k] = roc_auc(k == 0 ? scores1 : scores2, labels).auc;
  }

  auto cov = [](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2) return 0.0;
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / static_cast<double>(a.size() - 1);
  };
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  DeLongResult r;
  r.auc1 = auc[0];
  r.auc2 = auc[1];
  r.var1 = cov(v10[0], v10[0]) / dm + cov(v01[0], v01[0]) / dn;
  r.var2 = cov(v10[1], v10[1]) / dm + cov(v01[1], v01[1]) / dn;
  r.cov12 = cov(v10[0], v10[1]) / dm + cov(v01[0], v01[1]) / dn;
  const double var = r.var1 + r.var2 - 2.0 * r.cov12;
  const double diff = r.auc1 - r.auc2;
  if (var > 0.0) {
    r.std_error = std::sqrt(var);
    r.z = diff / r.std_error;
    r.p_value = two_sided_p(r.z);
  } else if (diff == 0.0) {
    r.z = 0.0;
    r.p_value = 1.0;
  } else {
    r.degenerate = true;
    r.z = std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = DBL_MIN;
  }
  r.band = p_to_significance(r.p_value);
  return r;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must be in [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_auc(std::span<const double> scores, std::span<const int> labels, std::size_t B,
                              std::uint64_t seed) {
  if (B == 0) throw ValidationError("bootstrap needs B >= 1");
  const auto cls = split_classes(scores, labels);
  const std::size_t m = cls.pos.size(), n = cls.neg.size();
  BootstrapResult r;
  r.aucs.assign(B, 0.0);
  const auto nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(b)}));
    std::vector<double> s;
    std::vector<int> y;
    s.reserve(m + n);
    y.reserve(m + n);
    for (std::size_t i = 0; i < m; ++i) {
      s.push_back(cls.pos[rng.below(m)]);
      y.push_back(1);
    }
    for (std::size_t j = 0; j < n; ++j) {
      s.push_back(cls.neg[rng.below(n)]);
      y.push_back(0);
    }
    r.aucs[static_cast<std::size_t>(b)] = roc_auc(s, y).auc;
  }
  r.median = quantile(r.aucs, 0.5);
  r.q1 = quantile(r.aucs, 0.25);
  r.q3 = quantile(r.aucs, 0.75);
  const auto [lo, hi] = std::minmax_element(r.aucs.begin(), r.aucs.end());
  r.min = *lo;
  r.max = *hi;
  return r;
}

Label majority_vote(std::span<const double> slice_p) {
  if (slice_p.empty()) throw ValidationError("majority vote over zero slices");
  std::size_t hh = 0;
  for (double p : slice_p) hh += p > 0.5;
  const std::size_t hc = slice_p.size() - hh;
  if (hh != hc) return hh > hc ? Label::HH : Label::HC;
  const double mean = std::accumulate(slice_p.begin(), slice_p.end(), 0.0) / static_cast<double>(slice_p.size());
  return mean > 0.5 ? Label::HH : Label::HC;
}

std::vector<ModelReport> evaluate_scores(const std::vector<ScoreRow>& rows) {
  std::vector<ModelReport> out;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> index;
  for (const auto& r : rows) {
    const std::string level = r.slice_index < 0 ? "scan" : "image";
    const auto key = std::make_tuple(r.model, r.mode, level);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({});
      out.back().model = r.model;
      out.back().mode = r.mode;
      out.back().level = level;
    }
    auto& g = out[it->second];
    g.p.push_back(r.p_hh);
    g.labels.push_back(r.label == Label::HH ? 1 : 0);
    g.keys.push_back(r.slice_index < 0 ? r.subject_id : r.subject_id + ":" + std::to_string(r.slice_index));
  }
  for (auto& g : out) {
    g.counts = count_predictions(g.p, g.labels);
    g.metrics = confusion_metrics(g.counts);
    const bool both = std::count(g.labels.begin(), g.labels.end(), 1) > 0 &&
                      std::count(g.labels.begin(), g.labels.end(), 0) > 0;
    if (both) g.roc = roc_auc(g.p, g.labels);
  }
  return out;
}

std::string format_roc_csv(const RocCurve& roc) {
  std::string out = "fpr,tpr,threshold\n";
  char line[128];
  for (const auto& p : roc.points) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
    out += line;
  }
  return out;
}

std::string format_bootstrap_csv(const BootstrapResult& b) {
  std::string out = "resample,auc\n";
  char line[64];
  for (std::size_t i = 0; i < b.aucs.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i, b.aucs[i]);
    out += line;
  }
  return out;
}

}  // namespace qnet
