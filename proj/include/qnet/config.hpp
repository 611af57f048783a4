#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qnet/phantom.hpp"
#include "qnet/train.hpp"

namespace qnet {

struct DataConfig {
  std::size_t subjects = 60;
  std::uint64_t seed = 1;
  PhantomParams phantom;
};

struct CvConfig {
  std::size_t folds = 10;
  std::uint64_t fold_seed = 1;
  std::size_t workers = 0;  // 0 = take QNET_THREADS
};

struct EvalConfig {
  std::size_t bootstrap = 1000;
  std::uint64_t bootstrap_seed = 1;
};

struct PathsConfig {
  std::string data;
  std::string out;
};

/// One JSON document covering every knob. The augmentation crop mode is not a key of its own;
/// it always follows train.input_mode.
struct ExperimentConfig {
  PipelineConfig pipeline;
  DataConfig data;
  CvConfig cv;
  EvalConfig eval;
  PathsConfig paths;

  void validate() const;
};

/// Dotted key paths ("train.stage1.epochs") of every field, in document order.
std::vector<std::string> config_keys();

/// Pretty JSON with every field present.
std::string config_to_json(const ExperimentConfig& c);

/// Missing keys keep their defaults. Unknown keys and wrong types raise ValidationError,
/// malformed JSON raises FormatError. The result is validated.
ExperimentConfig config_from_json(const std::string& text, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::filesystem::path& file, const ExperimentConfig& base = {});

/// Sets one field from its text form (as a CLI flag would). ValidationError on unknown key or bad value.
void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& c, const std::string& key);

/// FNV-1a of the compact canonical JSON, hex. Keys that cannot change results
/// (paths, cv.workers, train.verbose) are left out.
std::string config_hash(const ExperimentConfig& c);

/// cv.workers, or QNET_THREADS when it is 0.
std::size_t resolve_workers(const ExperimentConfig& c);

/// 100/50-epoch, batch-64, 64..512-wide settings.
ExperimentConfig full_scale_config();

}  // namespace qnet
