#include "qnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "qnet/hash.hpp"

namespace qnet {

template <typename T>
void adam_step(Parameter<T>& p, double lr, std::size_t t, const AdamConfig& cfg) {
  if (p.frozen) return;
  if (t == 0) throw ValidationError("adam step index starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  T* w = p.value.raw();
  const T* g = p.grad.raw();
  T* m = p.adam_m.raw();
  T* v = p.adam_v.raw();
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double gi = g[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    w[i] = static_cast<T>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++t_;
  for (auto* p : params_) adam_step(*p, lr, t_, cfg_);
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min) {
  if (t > total) throw ValidationError("cosine_lr: step beyond schedule");
  if (t == 0) return lr_max;
  if (t == total) return lr_min;
  const double x = static_cast<double>(t) / static_cast<double>(total);
  const double lr = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * x));
  return std::min(lr_max, std::max(lr_min, lr));
}

template <typename T>
void SwaState<T>::update(const ParamRefs<T>& params) {
  if (count_ == 0) {
    sum_.clear();
    for (auto* p : params) sum_.emplace_back(p->value.size(), 0.0);
  } else if (params.size() != sum_.size()) {
    throw DimensionError("swa: parameter list changed between snapshots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.size() != sum_[i].size()) throw DimensionError("swa: parameter " + params[i]->name + " resized");
    const T* w = params[i]->value.raw();
    for (std::size_t j = 0; j < sum_[i].size(); ++j) sum_[i][j] += static_cast<double>(w[j]);
  }
  ++count_;
}

template <typename T>
std::vector<double> SwaState<T>::mean(std::size_t i) const {
  if (count_ == 0) throw ValidationError("swa: no snapshots accumulated");
  std::vector<double> out(sum_.at(i));
  for (auto& v : out) v /= static_cast<double>(count_);
  return out;
}

template <typename T>
void SwaState<T>::install(const ParamRefs<T>& params) const {
  if (count_ == 0) throw ValidationError("swa: finalize with zero snapshots");
  if (params.size() != sum_.size()) throw DimensionError("swa: parameter list differs from snapshots");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto m = mean(i);
    T* w = params[i]->value.raw();
    for (std::size_t j = 0; j < m.size(); ++j) w[j] = static_cast<T>(m[j]);
  }
}

template <typename T>
std::uint64_t hash_parameters(const ParamRefs<T>& params) {
  Fnv1a h;
  for (const auto* p : params) {
    h.update(p->name);
    h.update(p->value.raw(), p->value.size() * sizeof(T));
  }
  return h.digest();
}

#define QNET_INSTANTIATE_OPTIM(T)                                                      \
  template void adam_step<T>(Parameter<T>&, double, std::size_t, const AdamConfig&); \
  template class Adam<T>;                                                             \
  template class SwaState<T>;                                                         \
  template std::uint64_t hash_parameters<T>(const ParamRefs<T>&);

QNET_INSTANTIATE_OPTIM(float)
QNET_INSTANTIATE_OPTIM(double)

}  // namespace qnet
