#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qnet/tensor.hpp"

namespace qnet {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// Named float32 tensors plus provenance. Stage "stage1" holds backbone + image head,
/// "stage2" holds backbone + qnet.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string config_json;  // resolved experiment config, verbatim
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

/// "QNCK" | u32 version | u32 header bytes | JSON header | float32-LE blobs in header order.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Appends copies of parameter values and buffers; names must be unique.
void capture_tensors(Checkpoint& ck, const ParamRefs<float>& params, const BufferRefs<float>& buffers);

/// Copies matching tensors back. Every requested name must exist with the same shape.
void restore_tensors(const Checkpoint& ck, const ParamRefs<float>& params, const BufferRefs<float>& buffers);

}  // namespace qnet
