#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "qnet/tensor.hpp"

namespace qnet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update at step t >= 1. Frozen parameters are untouched.
template <typename T>
void adam_step(Parameter<T>& p, double lr, std::size_t t, const AdamConfig& cfg = {});

/// Adam over a fixed parameter list with its own step counter.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamRefs<T> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {}

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  ParamRefs<T> params_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi t / total)) / 2; exact at both ends.
double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min);

/// Equal-weight running average of parameter snapshots, accumulated in double.
template <typename T>
class SwaState {
 public:
  void update(const ParamRefs<T>& params);
  std::size_t count() const { return count_; }
  /// Mean of parameter i.
  std::vector<double> mean(std::size_t i) const;
  /// Writes the averaged weights into params (same list and order as every update).
  void install(const ParamRefs<T>& params) const;

 private:
  std::vector<std::vector<double>> sum_;
  std::size_t count_ = 0;
};

/// FNV-1a over parameter names and value bytes.
template <typename T>
std::uint64_t hash_parameters(const ParamRefs<T>& params);

}  // namespace qnet
