#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qnet/kernels.hpp"
#include "qnet/rng.hpp"
#include "qnet/tensor.hpp"

namespace qnet {

enum class Mode { Train, Infer };

enum class ActivationKind { Relu, Sigmoid, Tanh };

// ---- functional forms ------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGrads {
  Tensor<T> dx;  // empty when not requested
  Tensor<T> dw;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, std::size_t stride,
                             std::size_t pad, bool need_dx = true);

template <typename T>
T activate(ActivationKind kind, T x);

/// Derivative expressed through the forward input x and output y.
template <typename T>
T activate_grad(ActivationKind kind, T x, T y);

template <typename T>
Tensor<T> gap(const Tensor<T>& x);

template <typename T>
Tensor<T> gap_backward(const Shape& input_shape, const Tensor<T>& dy);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;   // d(loss)/d(logits)
  Tensor<T> probs;  // softmax(logits)
};

/// Mean over rows of -log softmax(logits)[label]; max-shifted for stability.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

/// As above, averaged over rows with mask[i] != 0 only; masked-out rows get zero gradient.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                    const std::vector<char>& mask);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// ---- layers ----------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t pad);

  /// Kaiming normal with fan-in scaling.
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates into weight.grad; returns dx (empty when need_dx is false).
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);

  void collect(ParamRefs<T>& out) { out.push_back(&weight); }

  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t pad() const { return pad_; }

  Parameter<T> weight;

 private:
  std::size_t in_ch_ = 0, out_ch_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);

  /// While active, train-mode forwards accumulate exact population statistics
  /// instead of the moving average; end_recompute() installs them.
  void begin_recompute();
  void end_recompute();

  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(BufferRefs<T>& out) {
    out.push_back({name_ + ".running_mean", &running_mean});
    out.push_back({name_ + ".running_var", &running_var});
  }

  std::size_t channels() const { return channels_; }

  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

 private:
  std::string name_;
  std::size_t channels_ = 0;
  Mode last_mode_ = Mode::Train;
  Shape input_shape_;
  std::vector<double> xhat_;
  std::vector<double> inv_std_;
  bool recomputing_ = false;
  std::vector<double> sum_, sum_sq_;
  std::size_t count_ = 0;
};

template <typename T>
class Activation {
 public:
  explicit Activation(ActivationKind kind = ActivationKind::Relu) : kind_(kind) {}
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;
  ActivationKind kind() const { return kind_; }

 private:
  ActivationKind kind_;
  Tensor<T> input_, output_;
};

template <typename T>
class MaxPool2d {
 public:
  MaxPool2d(std::size_t kernel = 2, std::size_t stride = 2, std::size_t pad = 0)
      : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::size_t kernel_, stride_, pad_;
  PoolGeometry geom_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const { return gap_backward(input_shape_, dy); }

 private:
  Shape input_shape_;
};

/// y = x W^T + b with W stored [out x in].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  /// Uniform(+-1/sqrt(in)) weights, zero bias.
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;
};

}  // namespace qnet
