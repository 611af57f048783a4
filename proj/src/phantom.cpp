#include "qnet/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace qnet {

namespace {

constexpr std::size_t kChannels = 3;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Ellipse {
  double row, col, semi_row, semi_col, theta;
  double drift_row = 0, drift_col = 0;
  std::array<double, kChannels> contrast{};
  double ct = 1.0, st = 0.0;

  void prepare() {
    ct = std::cos(theta);
    st = std::sin(theta);
  }

  /// Normalized radius at (r, c) for slice offset s (drifted center).
  double rho(double r, double c, double s, double scale = 1.0) const {
    const double dr = r - (row + drift_row * s), dc = c - (col + drift_col * s);
    const double u = (ct * dr + st * dc) / (semi_row * scale), v = (-st * dr + ct * dc) / (semi_col * scale);
    return std::sqrt(u * u + v * v);
  }
};

// Lesion intensity per channel: QSM-like and R2*-like carry it, T1W does not.
constexpr std::array<double, kChannels> kLesionGain = {1.0, 0.8, 0.0};
// Bright scalp rim just outside the head on every channel. It saturates near 1 and covers several
// percent of the frame, so the per-slice percentile stretch is pinned by anatomy rather than lesions.
constexpr double kRimLevel = 1.0;
constexpr double kRimWidth = 0.09;  // in units of the head semi-axes

}  // namespace

std::string to_string(Label l) { return l == Label::HH ? "HH" : "HC"; }

Label label_from_string(const std::string& s) {
  if (s == "HC") return Label::HC;
  if (s == "HH") return Label::HH;
  throw ValidationError("unknown label '" + s + "' (expected HC or HH)");
}

void PhantomParams::validate() const {
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ValidationError("phantom amplitude must be >= 0");
  if (seq_len == 0) throw ValidationError("phantom seq_len must be >= 1");
  if (size < 48) throw ValidationError("phantom size must be >= 48");
  if (!(noise_sigma >= 0.0)) throw ValidationError("phantom noise_sigma must be >= 0");
  if (!(blob_peak >= 0.0)) throw ValidationError("phantom blob_peak must be >= 0");
}

Scan generate_phantom_scan(std::uint64_t seed, Label label, const PhantomParams& p, const std::string& subject_id,
                           PhantomTruth* truth) {
  p.validate();
  Rng rng(seed);
  const std::size_t S = p.size, T = p.seq_len;
  const double sd = static_cast<double>(S);
  const double mid = (sd - 1.0) / 2.0;

  Ellipse head{mid + rng.normal(0.0, 1.0), mid + rng.normal(0.0, 1.0), sd * rng.uniform(0.36, 0.40),
               sd * rng.uniform(0.30, 0.34), rng.uniform(-0.1, 0.1)};
  const std::array<double, kChannels> tissue = {0.35 + rng.uniform(-0.05, 0.05), 0.40 + rng.uniform(-0.05, 0.05),
                                                0.55 + rng.uniform(-0.05, 0.05)};

  std::vector<Ellipse> structures(4);
  for (auto& e : structures) {
    e.row = mid + rng.uniform(-0.22, 0.22) * sd;
    e.col = mid + rng.uniform(-0.22, 0.22) * sd;
    e.semi_row = sd * rng.uniform(0.05, 0.12);
    e.semi_col = sd * rng.uniform(0.05, 0.12);
    e.theta = rng.uniform(0.0, std::numbers::pi);
    e.drift_row = rng.normal(0.0, 0.3);
    e.drift_col = rng.normal(0.0, 0.3);
    for (auto& c : e.contrast) c = rng.uniform(-0.15, 0.15);
  }

  Ellipse bg{mid + rng.uniform(-2.0, 2.0), mid + rng.uniform(-2.0, 2.0), rng.uniform(7.0, 8.5), rng.uniform(5.5, 7.0),
             0.0};
  bg.contrast = {0.08, 0.06, -0.06};
  head.prepare();
  bg.prepare();
  for (auto& e : structures) e.prepare();

  Scan scan;
  scan.subject_id = subject_id;
  scan.label = label;
  const auto row0 = static_cast<std::size_t>(std::floor(bg.row - bg.semi_row));
  const auto col0 = static_cast<std::size_t>(std::floor(bg.col - bg.semi_col));
  scan.bbox = BBox{row0, col0, static_cast<std::size_t>(std::floor(bg.row + bg.semi_row)) + 1 - row0,
                   static_cast<std::size_t>(std::floor(bg.col + bg.semi_col)) + 1 - col0};

  // Blob centers random-walk one pixel per axis per slice, kept far enough inside the bbox
  // that the truncated support never leaves it.
  const std::size_t nb = p.blobs_per_scan;
  std::vector<Blob> blobs(nb);
  std::vector<std::array<double, 4>> bounds(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    const double extent = static_cast<double>(std::min(scan.bbox.rows, scan.bbox.cols)) - 1.0;
    double sigma = std::min(rng.uniform(1.2, 1.8), extent / 5.0);
    const double m = 2.5 * sigma + 1e-6;  // clearance so center + radius never rounds past the edge
    const double rlo = static_cast<double>(scan.bbox.row0) + m, rhi = static_cast<double>(scan.bbox.row0 + scan.bbox.rows - 1) - m;
    const double clo = static_cast<double>(scan.bbox.col0) + m, chi = static_cast<double>(scan.bbox.col0 + scan.bbox.cols - 1) - m;
    bounds[j] = {rlo, rhi, clo, chi};
    blobs[j] = Blob{rng.uniform(rlo, rhi), rng.uniform(clo, chi), sigma};
  }
  const double lesion_scale = label == Label::HH ? p.amplitude * p.blob_peak : 0.0;

  if (truth) truth->blobs.assign(T, {});
  scan.slices.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      for (std::size_t j = 0; j < nb; ++j) {
        blobs[j].row = std::clamp(blobs[j].row + static_cast<double>(rng.integer(-1, 1)), bounds[j][0], bounds[j][1]);
        blobs[j].col = std::clamp(blobs[j].col + static_cast<double>(rng.integer(-1, 1)), bounds[j][2], bounds[j][3]);
      }
    }
    if (truth) truth->blobs[t] = blobs;

    const double s = static_cast<double>(t) - (static_cast<double>(T) - 1.0) / 2.0;
    const double head_scale = 1.0 - 0.004 * s * s;
    Slice img({kChannels, S, S});
    for (std::size_t r = 0; r < S; ++r) {
      for (std::size_t c = 0; c < S; ++c) {
        const double rr = static_cast<double>(r), cc = static_cast<double>(c);
        const double rho = head.rho(rr, cc, 0.0, head_scale);
        const double inside = sigmoid((1.0 - rho) / 0.04);
        const double rim = sigmoid((rho - 1.0) / 0.01) * sigmoid((1.0 + kRimWidth - rho) / 0.01);
        std::array<double, kChannels> v{};
        for (std::size_t ch = 0; ch < kChannels; ++ch) v[ch] = tissue[ch] * inside + kRimLevel * rim;
        for (const auto& e : structures) {
          const double w = sigmoid((1.0 - e.rho(rr, cc, s)) / 0.08) * inside;
          for (std::size_t ch = 0; ch < kChannels; ++ch) v[ch] += e.contrast[ch] * w;
        }
        const double wb = sigmoid((1.0 - bg.rho(rr, cc, 0.0)) / 0.08);
        double lesion = 0.0;
        for (const auto& b : blobs) {
          const double d2 = (rr - b.row) * (rr - b.row) + (cc - b.col) * (cc - b.col);
          if (d2 <= b.radius() * b.radius()) lesion += std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
        for (std::size_t ch = 0; ch < kChannels; ++ch) {
          const double x = v[ch] + bg.contrast[ch] * wb + lesion_scale * kLesionGain[ch] * lesion +
                           p.noise_sigma * rng.normal();
          img[(ch * S + r) * S + c] = static_cast<float>(std::clamp(x, 0.0, 1.0));
        }
      }
    }
    scan.slices.push_back(std::move(img));
  }
  return scan;
}

std::vector<Scan> generate_cohort(std::size_t subjects, std::uint64_t seed, const PhantomParams& params) {
  params.validate();
  std::vector<Scan> out(subjects);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < subjects; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sub-%03zu", i);
    out[i] = generate_phantom_scan(derive_seed(seed, {i}), i % 2 ? Label::HH : Label::HC, params, id);
  }
  return out;
}

}  // namespace qnet
