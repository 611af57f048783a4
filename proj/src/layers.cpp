#include "qnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qnet {

namespace {

using index_t = std::ptrdiff_t;

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
  }
  if (w.dim(2) != w.dim(3)) throw DimensionError("conv2d: kernel must be square");
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  const std::size_t k = w.dim(2);
  if (k > x.dim(2) + 2 * pad || k > x.dim(3) + 2 * pad) throw DimensionError("conv2d: kernel larger than padded input");
  return ConvGeometry{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), k, stride, pad};
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<T> c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), c.raw(), false);
  return c;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (dc.shape() != Shape{m, n}) throw DimensionError("matmul_backward: upstream gradient shape mismatch");
  Tensor<T> da({m, k});
  Tensor<T> db({k, n});
  kernels::gemm_nt(m, k, n, dc.raw(), b.raw(), da.raw(), false);
  kernels::gemm_tn(k, n, m, a.raw(), dc.raw(), db.raw(), false);
  return {std::move(da), std::move(db)};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x, w, stride, pad);
  Tensor<T> y({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward<T>(g, x.data(), w.data(), y.data());
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, std::size_t stride,
                             std::size_t pad, bool need_dx) {
  const auto g = conv_geometry(x, w, stride, pad);
  if (dy.shape() != Shape{g.batch, g.out_channels, g.out_h(), g.out_w()}) {
    throw DimensionError("conv2d_backward: upstream gradient shape " + shape_string(dy.shape()));
  }
  ConvGrads<T> out;
  out.dw = Tensor<T>(w.shape());
  if (need_dx) out.dx = Tensor<T>(x.shape());
  kernels::conv2d_backward<T>(g, x.data(), w.data(), dy.data(), need_dx ? out.dx.data() : std::span<T>{},
                              out.dw.data());
  return out;
}

template <typename T>
T activate(ActivationKind kind, T x) {
  switch (kind) {
    case ActivationKind::Relu:
      return x > T{0} ? x : T{0};
    case ActivationKind::Sigmoid:
      return T{1} / (T{1} + std::exp(-x));
    case ActivationKind::Tanh:
      return std::tanh(x);
  }
  return x;
}

template <typename T>
T activate_grad(ActivationKind kind, T x, T y) {
  switch (kind) {
    case ActivationKind::Relu:
      return x > T{0} ? T{1} : T{0};
    case ActivationKind::Sigmoid:
      return y * (T{1} - y);
    case ActivationKind::Tanh:
      return T{1} - y * y;
  }
  return T{1};
}

template <typename T>
Tensor<T> gap(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "gap input");
  const std::size_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({b, c});
  for (std::size_t i = 0; i < b * c; ++i) {
    double acc = 0.0;
    const T* p = x.raw() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    y[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return y;
}

template <typename T>
Tensor<T> gap_backward(const Shape& input_shape, const Tensor<T>& dy) {
  require_rank(input_shape, 4, "gap input");
  const std::size_t b = input_shape[0], c = input_shape[1], plane = input_shape[2] * input_shape[3];
  if (dy.shape() != Shape{b, c}) throw DimensionError("gap_backward: upstream gradient shape mismatch");
  Tensor<T> dx(input_shape);
  const T scale = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < b * c; ++i) {
    const T g = dy[i] * scale;
    std::fill_n(dx.raw() + i * plane, plane, g);
  }
  return dx;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(w.shape(), 2, "linear weight");
  if (w.dim(1) != x.dim(1) || b.size() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(w.shape()) + " and bias " + shape_string(b.shape()));
  }
  const std::size_t batch = x.dim(0), out = w.dim(0);
  Tensor<T> y({batch, out});
  for (std::size_t i = 0; i < batch; ++i) std::copy_n(b.raw(), out, y.raw() + i * out);
  kernels::gemm_nt(batch, out, x.dim(1), x.raw(), w.raw(), y.raw(), true);
  return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax input");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* z = logits.raw() + i * k;
    const T zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - zmax)) / denom);
  }
  return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                    const std::vector<char>& mask) {
  require_rank(logits.shape(), 2, "cross-entropy logits");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  if (labels.size() != rows || mask.size() != rows) {
    throw DimensionError("cross-entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                         " rows");
  }
  LossResult<T> r;
  r.probs = Tensor<T>(logits.shape());
  r.grad = Tensor<T>(logits.shape());
  std::size_t active = 0;
  for (auto m : mask) active += m ? 1 : 0;
  if (active == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(active);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ValidationError("cross-entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* z = logits.raw() + i * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = std::exp(static_cast<double>(z[j]) - zmax - log_denom);
      r.probs[i * k + j] = static_cast<T>(pj);
      if (mask[i]) r.grad[i * k + j] = static_cast<T>((pj - (static_cast<int>(j) == label ? 1.0 : 0.0)) * inv_n);
    }
    if (mask[i]) total += -(static_cast<double>(z[label]) - zmax - log_denom);
  }
  r.loss = total * inv_n;
  return r;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  return softmax_cross_entropy(logits, labels, std::vector<char>(logits.rank() == 2 ? logits.dim(0) : 0, 1));
}

// ---- Conv2d ------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                  std::size_t pad)
    : weight(std::move(name), {out_ch, in_ch, kernel, kernel}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch_ * kernel_ * kernel_));
  for (auto& v : weight.value.data()) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  input_ = x;
  return conv2d(x, weight.value, stride_, pad_);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_dx) {
  auto g = conv2d_backward(input_, weight.value, dy, stride_, pad_, need_dx);
  auto& acc = weight.grad.storage();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.dw[i];
  return std::move(g.dx);
}

// ---- BatchNorm2d -------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, std::size_t channels)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      name_(std::move(name)),
      channels_(channels) {
  gamma.value.fill(T{1});
}

template <typename T>
void BatchNorm2d<T>::begin_recompute() {
  recomputing_ = true;
  sum_.assign(channels_, 0.0);
  sum_sq_.assign(channels_, 0.0);
  count_ = 0;
}

template <typename T>
void BatchNorm2d<T>::end_recompute() {
  if (!recomputing_) return;
  recomputing_ = false;
  if (count_ == 0) return;
  const double n = static_cast<double>(count_);
  for (std::size_t c = 0; c < channels_; ++c) {
    const double mean = sum_[c] / n;
    double var = std::max(0.0, sum_sq_[c] / n - mean * mean);
    if (count_ > 1) var *= n / (n - 1.0);
    running_mean[c] = static_cast<T>(mean);
    running_var[c] = static_cast<T>(var);
  }
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x.shape(), 4, "batchnorm input");
  if (x.dim(1) != channels_) {
    throw DimensionError("batchnorm: expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(x.dim(1)));
  }
  const std::size_t batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  const std::size_t n = batch * plane;
  input_shape_ = x.shape();
  last_mode_ = mode;
  xhat_.resize(x.size());
  inv_std_.assign(channels_, 0.0);
  Tensor<T> y(x.shape());
  const auto channels = static_cast<index_t>(channels_);
#pragma omp parallel for schedule(static) if (x.size() >= (1u << 15))
  for (index_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.raw() + (b * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      mean = s / static_cast<double>(n);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.raw() + (b * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = static_cast<double>(p[j]) - mean;
          s2 += d * d;
        }
      }
      var = s2 / static_cast<double>(n);
      if (recomputing_) {
        sum_[c] += s;
        sum_sq_[c] += s2 + static_cast<double>(n) * mean * mean;
      } else {
        const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
        running_mean[c] = static_cast<T>((1.0 - kMomentum) * running_mean[c] + kMomentum * mean);
        running_var[c] = static_cast<T>((1.0 - kMomentum) * running_var[c] + kMomentum * unbiased);
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv_std;
    const double g = gamma.value[c], bt = beta.value[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double xh = (static_cast<double>(x[off + j]) - mean) * inv_std;
        xhat_[off + j] = xh;
        y[off + j] = static_cast<T>(g * xh + bt);
      }
    }
  }
  if (recomputing_ && mode == Mode::Train) count_ += n;
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  if (dy.shape() != input_shape_) throw DimensionError("batchnorm_backward: upstream gradient shape mismatch");
  const std::size_t batch = input_shape_[0], plane = input_shape_[2] * input_shape_[3];
  const double n = static_cast<double>(batch * plane);
  Tensor<T> dx(input_shape_);
  const auto channels = static_cast<index_t>(channels_);
#pragma omp parallel for schedule(static) if (dy.size() >= (1u << 15))
  for (index_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += dy[off + j];
        sum_dy_xhat += static_cast<double>(dy[off + j]) * xhat_[off + j];
      }
    }
    gamma.grad[c] += static_cast<T>(sum_dy_xhat);
    beta.grad[c] += static_cast<T>(sum_dy);
    const double g = gamma.value[c];
    const double inv_std = inv_std_[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        double v;
        if (last_mode_ == Mode::Train) {
          v = g * inv_std / n * (n * dy[off + j] - sum_dy - xhat_[off + j] * sum_dy_xhat);
        } else {
          v = g * inv_std * dy[off + j];
        }
        dx[off + j] = static_cast<T>(v);
      }
    }
  }
  return dx;
}

// ---- Activation / pooling ------------------------------------------------------

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x) {
  input_ = x;
  output_ = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) output_[i] = activate(kind_, x[i]);
  return output_;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& dy) const {
  if (dy.shape() != input_.shape()) throw DimensionError("activation_backward: shape mismatch");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * activate_grad(kind_, input_[i], output_[i]);
  return dx;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "maxpool input");
  if (kernel_ > x.dim(2) + 2 * pad_ || kernel_ > x.dim(3) + 2 * pad_) {
    throw DimensionError("maxpool: window larger than padded input");
  }
  geom_ = PoolGeometry{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel_, stride_, pad_};
  Tensor<T> y({geom_.batch, geom_.channels, geom_.out_h(), geom_.out_w()});
  argmax_.assign(y.size(), 0);
  kernels::maxpool2d_forward<T>(geom_, x.data(), y.data(), argmax_);
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx({geom_.batch, geom_.channels, geom_.in_h, geom_.in_w});
  kernels::maxpool2d_backward<T>(geom_, dy.data(), argmax_, dx.data());
  return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  input_shape_ = x.shape();
  return gap(x);
}

// ---- Linear ----------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  for (auto& v : weight.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  bias.value.fill(T{0});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  input_ = x;
  return linear(x, weight.value, bias.value);
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const std::size_t batch = input_.dim(0);
  if (dy.shape() != Shape{batch, out_}) throw DimensionError("linear_backward: upstream gradient shape mismatch");
  kernels::gemm_tn(out_, in_, batch, dy.raw(), input_.raw(), weight.grad.raw(), true);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < out_; ++j) bias.grad[j] += dy[i * out_ + j];
  Tensor<T> dx({batch, in_});
  kernels::gemm_nn(batch, in_, out_, dy.raw(), weight.value.raw(), dx.raw(), false);
  return dx;
}

#define QNET_INSTANTIATE_LAYERS(T)                                                                                 \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                               \
  template std::pair<Tensor<T>, Tensor<T>> matmul_backward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                                               const Tensor<T>&);                                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                     \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,     \
                                           std::size_t, bool);                                                    \
  template T activate<T>(ActivationKind, T);                                                                      \
  template T activate_grad<T>(ActivationKind, T, T);                                                              \
  template Tensor<T> gap<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> gap_backward<T>(const Shape&, const Tensor<T>&);                                             \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                                \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);                     \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&,                      \
                                                  const std::vector<char>&);                                      \
  template class Conv2d<T>;                                                                                       \
  template class BatchNorm2d<T>;                                                                                  \
  template class Activation<T>;                                                                                   \
  template class MaxPool2d<T>;                                                                                    \
  template class GlobalAvgPool<T>;                                                                                \
  template class Linear<T>;

QNET_INSTANTIATE_LAYERS(float)
QNET_INSTANTIATE_LAYERS(double)

}  // namespace qnet
