#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qnet/phantom.hpp"

namespace qnet {

struct SubjectRecord {
  std::string id;
  Label label = Label::HC;
  BBox bbox;
  std::vector<std::string> slices;  // paths relative to the dataset directory
};

struct DatasetManifest {
  int version = 1;
  std::size_t height = 0, width = 0;
  std::vector<std::string> channels = {"qsm", "r2star", "t1w"};
  std::size_t seq_len = 0;
  std::vector<SubjectRecord> subjects;
  double amplitude = 0.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Scan> scans;  // same order as manifest.subjects
};

/// Writes <dir>/manifest.json and <dir>/<id>/slice_NN.qns.
DatasetManifest write_dataset(const std::vector<Scan>& scans, const std::filesystem::path& dir, double amplitude,
                              std::uint64_t seed);
Dataset read_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

void write_slice_file(const Slice& s, const std::filesystem::path& file);
Slice read_slice_file(const std::filesystem::path& file);

struct FoldSplit {
  std::size_t k = 0;
  std::vector<std::string> subject_ids;
  std::vector<std::size_t> fold_of;  // parallel to subject_ids
  bool stratified = true;

  std::vector<std::size_t> test_indices(std::size_t fold) const;
  std::vector<std::size_t> train_indices(std::size_t fold) const;
};

/// Stratified round-robin over shuffled class members. When a class has fewer than k members,
/// prints a warning and falls back to a plain shuffled round-robin.
FoldSplit make_folds(const std::vector<std::string>& ids, const std::vector<Label>& labels, std::size_t k,
                     std::uint64_t seed);
FoldSplit make_folds(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed);

}  // namespace qnet
