#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qnet/layers.hpp"

namespace qnet {

/// Weights of one LSTM direction: W_* act on the input, U_* on the previous hidden state.
template <typename T>
struct LstmCellParams {
  LstmCellParams() = default;
  LstmCellParams(const std::string& prefix, std::size_t input, std::size_t hidden);

  /// uniform(+-1/sqrt(hidden)) for all weights and biases, then forget bias = 1.
  void init(Rng& rng);
  void collect(ParamRefs<T>& out);

  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }

  Parameter<T> W_i, W_o, W_f, W_c;
  Parameter<T> U_i, U_o, U_f, U_c;
  Parameter<T> b_i, b_o, b_f, b_c;

 private:
  std::size_t input_ = 0, hidden_ = 0;
};

/// Everything one step produces, kept for backpropagation through time.
template <typename T>
struct LstmStep {
  std::vector<T> x, h_prev, c_prev;
  std::vector<T> input_gate, output_gate, forget_gate, candidate;
  std::vector<T> c, tanh_c, h;
};

/// One application of the gated cell:
///   i = s(W_i x + U_i h + b_i), o = s(...), f = s(...)
///   c' = f*c + i*tanh(W_c x + U_c h + b_c),  h' = o*tanh(c')
template <typename T>
LstmStep<T> lstm_step(const LstmCellParams<T>& p, std::span<const T> x, std::span<const T> h_prev,
                      std::span<const T> c_prev);

/// Gradients flowing out of one step, given upstream dh and dc at its outputs.
/// Parameter gradients are accumulated into p.
template <typename T>
void lstm_step_backward(LstmCellParams<T>& p, const LstmStep<T>& step, std::span<const T> dh, std::span<const T> dc,
                        std::span<T> dx, std::span<T> dh_prev, std::span<T> dc_prev);

/// A single-direction LSTM over a T x d sequence starting from zero state.
template <typename T>
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(const std::string& prefix, std::size_t input, std::size_t hidden) : params(prefix, input, hidden) {}

  Tensor<T> forward(const Tensor<T>& sequence);
  /// dH: T x hidden; returns dX: T x d.
  Tensor<T> backward(const Tensor<T>& dh_seq);

  LstmCellParams<T> params;
  const std::vector<LstmStep<T>>& steps() const { return steps_; }

 private:
  std::vector<LstmStep<T>> steps_;
};

/// Row t of the output is [h_fwd(t) | h_bwd(t)]; the backward direction reads the
/// sequence reversed and its outputs are re-aligned to input positions.
template <typename T>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(std::size_t input, std::size_t hidden);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& sequence);
  Tensor<T> backward(const Tensor<T>& dout);
  void collect(ParamRefs<T>& out);

  std::size_t hidden_size() const { return forward_dir.params.hidden_size(); }

  LstmLayer<T> forward_dir;
  LstmLayer<T> backward_dir;
};

struct QNetConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden = 32;
  std::size_t seq_len = 8;
  std::size_t num_classes = 2;

  void validate() const;
  std::size_t image_head_inputs() const { return 2 * hidden; }
  std::size_t scan_head_inputs() const { return seq_len * 2 * hidden; }
};

template <typename T>
struct QNetOutput {
  Tensor<T> image_logits;  // seq_len x num_classes
  Tensor<T> scan_logits;   // 1 x num_classes
};

/// Scan-level model on top of frozen slice embeddings: BiLSTM, a per-slice image head
/// shared across positions, and a scan head over the concatenation of all positions.
template <typename T>
class QNet {
 public:
  QNet() = default;
  explicit QNet(const QNetConfig& cfg);

  void init(std::uint64_t seed);
  /// embeddings: seq_len x embed_dim
  QNetOutput<T> forward(const Tensor<T>& embeddings);
  Tensor<T> backward(const Tensor<T>& d_image_logits, const Tensor<T>& d_scan_logits);

  ParamRefs<T> parameters();
  const QNetConfig& config() const { return cfg_; }

  BiLstm<T> bilstm;
  Linear<T> image_head;
  Linear<T> scan_head;

 private:
  QNetConfig cfg_;
};

}  // namespace qnet
