#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qnet/augment.hpp"

namespace qnet {

enum class Label : int { HC = 0, HH = 1 };

std::string to_string(Label l);
Label label_from_string(const std::string& s);

struct Scan {
  std::string subject_id;
  Label label = Label::HC;
  std::vector<Slice> slices;
  BBox bbox;
};

struct PhantomParams {
  double amplitude = 1.0;
  std::size_t seq_len = 8;
  std::size_t size = 96;
  double noise_sigma = 0.04;
  std::size_t blobs_per_scan = 3;
  double blob_peak = 0.3;  // channel-0 peak at amplitude 1 (before noise)

  void validate() const;
};

/// One lesion blob on one slice (generator ground truth).
struct Blob {
  double row = 0, col = 0, sigma = 0;
  /// Support radius; the blob is exactly zero beyond it.
  double radius() const { return 2.5 * sigma; }
};

struct PhantomTruth {
  /// blobs[t][j]: blob j on slice t. Present for both labels; only HH scans carry intensity.
  std::vector<std::vector<Blob>> blobs;
};

/// The draw sequence depends only on (seed, params); the label only scales the lesion term,
/// so amplitude 0 makes HH and HC scans identical.
Scan generate_phantom_scan(std::uint64_t seed, Label label, const PhantomParams& params, const std::string& subject_id,
                           PhantomTruth* truth = nullptr);

/// Balanced cohort: subject i gets label HH when i is odd; ids "sub-000", "sub-001", ...
/// Subjects are generated in parallel with derived seeds.
std::vector<Scan> generate_cohort(std::size_t subjects, std::uint64_t seed, const PhantomParams& params);

}  // namespace qnet
