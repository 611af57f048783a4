#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qnet/augment.hpp"
#include "qnet/backbone.hpp"
#include "qnet/dataset.hpp"
#include "qnet/optim.hpp"
#include "qnet/scores.hpp"
#include "qnet/sequence.hpp"

namespace qnet {

// Desk defaults train from random init for a few hundred steps, so stage 1 runs its cosine
// schedule ten times higher than the full-scale preset (3e-4 -> 1e-4).
struct Stage1Config {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  double lr_max = 3e-3;
  double lr_min = 1e-3;
  bool swa = true;
  double swa_start_fraction = 0.75;  // snapshots at the end of each epoch from here on
};

struct Stage2Config {
  std::size_t epochs = 15;
  std::size_t batch = 16;  // scans per batch
  double lr = 3e-4;
  bool augment = false;  // re-embed with the train pipeline every epoch
};

struct TrainConfig {
  Stage1Config stage1;
  Stage2Config stage2;
  std::uint64_t seed = 1;
  CropMode input_mode = CropMode::Full;
  std::string lr_schedule = "cosine_per_step";
  bool verbose = false;

  /// 100/50 epochs, batch 64, stage-1 cosine 3e-4 -> 1e-4, stage-2 fixed 3e-4.
  static TrainConfig full_scale();
  void validate() const;
};

/// Everything that shapes a training run.
struct PipelineConfig {
  TrainConfig train;
  AugmentConfig augment;
  BackboneConfig backbone;
  QNetConfig qnet;

  void validate() const;
  /// Augmentation settings for the given mode with the run's input mode applied.
  AugmentConfig augment_for(AugmentMode mode) const;
};

/// A slice reference into a list of scans.
struct SliceRef {
  const Scan* scan;
  std::size_t index;
};

/// Stacks augmented slices into an N x C x S x S batch. Each sample uses its own derived seed;
/// samples are processed in parallel.
Tensor<float> make_batch(const std::vector<SliceRef>& refs, const AugmentConfig& aug,
                         const std::vector<std::uint64_t>& seeds);

struct Stage1Result {
  ImageModel<float> last;  // final iterate
  ImageModel<float> swa;   // SWA average with recomputed BN statistics (copy of last if SWA is off)
  std::vector<double> loss_trace;  // one entry per optimizer step
  std::size_t swa_snapshots = 0;
};

Stage1Result train_stage1(const std::vector<const Scan*>& scans, const PipelineConfig& cfg, std::uint64_t seed);

/// Recomputes BN running statistics with one pass of test-pipeline batches.
void recompute_bn(ImageModel<float>& model, const std::vector<const Scan*>& scans, const PipelineConfig& cfg);

/// Scan padded to seq_len by repeating its last slice; mask marks real slices.
struct PaddedScan {
  std::vector<SliceRef> slices;
  std::vector<char> mask;
};
PaddedScan pad_scan(const Scan& scan, std::size_t seq_len);

/// seq_len x d embeddings of one scan (inference mode).
Tensor<float> embed_scan(Backbone<float>& backbone, const Scan& scan, const PipelineConfig& cfg,
                         AugmentMode mode = AugmentMode::Test, std::uint64_t seed = 0);

struct Stage2Result {
  QNet<float> qnet;
  std::vector<double> loss_trace;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

/// Trains the BiLSTM and both heads on frozen embeddings. The backbone is marked frozen.
Stage2Result train_stage2(Backbone<float>& backbone, const std::vector<const Scan*>& scans, const PipelineConfig& cfg,
                          std::uint64_t seed);

/// p(HH) for each real slice of a scan under the test pipeline.
std::vector<double> predict_slices(ImageModel<float>& model, const Scan& scan, const PipelineConfig& cfg);

struct QNetPrediction {
  double scan_p = 0.0;
  std::vector<double> image_p;  // real slices only
};
QNetPrediction predict_qnet(Backbone<float>& backbone, QNet<float>& qnet, const Scan& scan, const PipelineConfig& cfg);

/// Majority vote over slice probabilities encoded as a score: fraction of slices with p > 0.5,
/// plus 1e-3 (mean p - 0.5). Thresholding the score at 0.5 gives the vote label with its tie rule.
double vote_score(const std::vector<double>& slice_p);

std::string mode_name(CropMode m);  // "full" or "cropped"

/// Sees each fold's trained models and held-out scans after scoring. Called from CV worker
/// threads, possibly concurrently for different folds.
using FoldObserver = std::function<void(std::size_t fold, const std::vector<const Scan*>& test, Stage1Result& s1,
                                        Stage2Result& s2)>;

/// Held-out predictions of one fold, in the order of the fold's test subjects.
std::vector<ScoreRow> run_fold(const Dataset& data, const FoldSplit& split, std::size_t fold, const PipelineConfig& cfg,
                               const FoldObserver& observe = {});

/// Runs all folds (up to `workers` at once) and pools the held-out rows. Row order is by model,
/// then manifest subject order, then slice; it does not depend on the worker count.
std::vector<ScoreRow> cross_validate(const Dataset& data, const FoldSplit& split, const PipelineConfig& cfg,
                                     std::size_t workers = 1, const FoldObserver& observe = {});

/// Worker count from QNET_THREADS (default 1).
std::size_t workers_from_env();

}  // namespace qnet
