#include "qnet/sequence.hpp"

#include <cmath>

#include "qnet/error.hpp"

namespace qnet {

namespace {

// y (+)= M x, M stored rows x cols
template <typename T>
void matvec_add(const Tensor<T>& m, std::span<const T> x, std::vector<T>& y) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = m.raw() + r * cols;
    T acc{0};
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[r] += acc;
  }
}

// y += M^T v
template <typename T>
void matvec_t_add(const Tensor<T>& m, std::span<const T> v, std::span<T> y) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = m.raw() + r * cols;
    const T vr = v[r];
    for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * vr;
  }
}

// G += v u^T
template <typename T>
void outer_add(Tensor<T>& g, std::span<const T> v, std::span<const T> u) {
  const std::size_t rows = g.dim(0), cols = g.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = g.raw() + r * cols;
    const T vr = v[r];
    for (std::size_t j = 0; j < cols; ++j) row[j] += vr * u[j];
  }
}

template <typename T>
T sigmoid(T z) {
  return T{1} / (T{1} + std::exp(-z));
}

template <typename T>
std::vector<T> preactivation(const Parameter<T>& w, const Parameter<T>& u, const Parameter<T>& b,
                             std::span<const T> x, std::span<const T> h) {
  std::vector<T> z(b.value.storage());
  matvec_add(w.value, x, z);
  matvec_add(u.value, h, z);
  return z;
}

}  // namespace

template <typename T>
LstmCellParams<T>::LstmCellParams(const std::string& prefix, std::size_t input, std::size_t hidden)
    : W_i(prefix + ".W_i", {hidden, input}),
      W_o(prefix + ".W_o", {hidden, input}),
      W_f(prefix + ".W_f", {hidden, input}),
      W_c(prefix + ".W_c", {hidden, input}),
      U_i(prefix + ".U_i", {hidden, hidden}),
      U_o(prefix + ".U_o", {hidden, hidden}),
      U_f(prefix + ".U_f", {hidden, hidden}),
      U_c(prefix + ".U_c", {hidden, hidden}),
      b_i(prefix + ".b_i", {hidden}),
      b_o(prefix + ".b_o", {hidden}),
      b_f(prefix + ".b_f", {hidden}),
      b_c(prefix + ".b_c", {hidden}),
      input_(input),
      hidden_(hidden) {}

template <typename T>
void LstmCellParams<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  ParamRefs<T> all;
  collect(all);
  for (auto* p : all)
    for (auto& v : p->value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  b_f.value.fill(T{1});
}

template <typename T>
void LstmCellParams<T>::collect(ParamRefs<T>& out) {
  for (auto* p : {&W_i, &W_o, &W_f, &W_c, &U_i, &U_o, &U_f, &U_c, &b_i, &b_o, &b_f, &b_c}) out.push_back(p);
}

template <typename T>
LstmStep<T> lstm_step(const LstmCellParams<T>& p, std::span<const T> x, std::span<const T> h_prev,
                      std::span<const T> c_prev) {
  const std::size_t hidden = p.hidden_size();
  if (x.size() != p.input_size() || h_prev.size() != hidden || c_prev.size() != hidden) {
    throw DimensionError("lstm_step: expected input " + std::to_string(p.input_size()) + " and state " +
                         std::to_string(hidden) + ", got " + std::to_string(x.size()) + "/" +
                         std::to_string(h_prev.size()) + "/" + std::to_string(c_prev.size()));
  }
  LstmStep<T> s;
  s.x.assign(x.begin(), x.end());
  s.h_prev.assign(h_prev.begin(), h_prev.end());
  s.c_prev.assign(c_prev.begin(), c_prev.end());
  s.input_gate = preactivation(p.W_i, p.U_i, p.b_i, x, h_prev);
  s.output_gate = preactivation(p.W_o, p.U_o, p.b_o, x, h_prev);
  s.forget_gate = preactivation(p.W_f, p.U_f, p.b_f, x, h_prev);
  s.candidate = preactivation(p.W_c, p.U_c, p.b_c, x, h_prev);
  s.c.resize(hidden);
  s.tanh_c.resize(hidden);
  s.h.resize(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    s.input_gate[k] = sigmoid(s.input_gate[k]);
    s.output_gate[k] = sigmoid(s.output_gate[k]);
    s.forget_gate[k] = sigmoid(s.forget_gate[k]);
    s.candidate[k] = std::tanh(s.candidate[k]);
    s.c[k] = s.forget_gate[k] * c_prev[k] + s.input_gate[k] * s.candidate[k];
    s.tanh_c[k] = std::tanh(s.c[k]);
    s.h[k] = s.output_gate[k] * s.tanh_c[k];
  }
  return s;
}

template <typename T>
void lstm_step_backward(LstmCellParams<T>& p, const LstmStep<T>& s, std::span<const T> dh, std::span<const T> dc,
                        std::span<T> dx, std::span<T> dh_prev, std::span<T> dc_prev) {
  const std::size_t hidden = p.hidden_size();
  std::vector<T> dz_i(hidden), dz_o(hidden), dz_f(hidden), dz_c(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    const T i = s.input_gate[k], o = s.output_gate[k], f = s.forget_gate[k], g = s.candidate[k];
    const T tc = s.tanh_c[k];
    const T d_o = dh[k] * tc;
    const T d_c = dc[k] + dh[k] * o * (T{1} - tc * tc);
    dz_i[k] = d_c * g * i * (T{1} - i);
    dz_f[k] = d_c * s.c_prev[k] * f * (T{1} - f);
    dz_c[k] = d_c * i * (T{1} - g * g);
    dz_o[k] = d_o * o * (T{1} - o);
    dc_prev[k] = d_c * f;
  }
  std::fill(dx.begin(), dx.end(), T{0});
  std::fill(dh_prev.begin(), dh_prev.end(), T{0});
  const std::span<const T> xs(s.x), hs(s.h_prev);
  auto apply = [&](Parameter<T>& w, Parameter<T>& u, Parameter<T>& b, const std::vector<T>& dz) {
    const std::span<const T> dzs(dz);
    outer_add(w.grad, dzs, xs);
    outer_add(u.grad, dzs, hs);
    for (std::size_t k = 0; k < hidden; ++k) b.grad[k] += dz[k];
    matvec_t_add(w.value, dzs, dx);
    matvec_t_add(u.value, dzs, dh_prev);
  };
  apply(p.W_i, p.U_i, p.b_i, dz_i);
  apply(p.W_o, p.U_o, p.b_o, dz_o);
  apply(p.W_f, p.U_f, p.b_f, dz_f);
  apply(p.W_c, p.U_c, p.b_c, dz_c);
}

template <typename T>
Tensor<T> LstmLayer<T>::forward(const Tensor<T>& sequence) {
  if (sequence.rank() != 2 || sequence.dim(1) != params.input_size()) {
    throw DimensionError("lstm: expected T x " + std::to_string(params.input_size()) + " sequence, got " +
                         shape_string(sequence.shape()));
  }
  const std::size_t len = sequence.dim(0), hidden = params.hidden_size(), d = params.input_size();
  steps_.clear();
  steps_.reserve(len);
  std::vector<T> h(hidden, T{0}), c(hidden, T{0});
  Tensor<T> out({len, hidden});
  for (std::size_t t = 0; t < len; ++t) {
    steps_.push_back(lstm_step<T>(params, std::span<const T>(sequence.raw() + t * d, d), h, c));
    h = steps_.back().h;
    c = steps_.back().c;
    std::copy(h.begin(), h.end(), out.raw() + t * hidden);
  }
  return out;
}

template <typename T>
Tensor<T> LstmLayer<T>::backward(const Tensor<T>& dh_seq) {
  const std::size_t len = steps_.size(), hidden = params.hidden_size(), d = params.input_size();
  if (dh_seq.shape() != Shape{len, hidden}) throw DimensionError("lstm_backward: upstream gradient shape mismatch");
  Tensor<T> dx({len, d});
  std::vector<T> dh_next(hidden, T{0}), dc_next(hidden, T{0});
  std::vector<T> dh(hidden), dh_prev(hidden), dc_prev(hidden);
  for (std::size_t t = len; t-- > 0;) {
    for (std::size_t k = 0; k < hidden; ++k) dh[k] = dh_seq[t * hidden + k] + dh_next[k];
    lstm_step_backward<T>(params, steps_[t], dh, dc_next, std::span<T>(dx.raw() + t * d, d), dh_prev, dc_prev);
    dh_next.swap(dh_prev);
    dc_next.swap(dc_prev);
  }
  return dx;
}

namespace {

template <typename T>
Tensor<T> reverse_rows(const Tensor<T>& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor<T> out(m.shape());
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(m.raw() + (rows - 1 - r) * cols, cols, out.raw() + r * cols);
  return out;
}

}  // namespace

template <typename T>
BiLstm<T>::BiLstm(std::size_t input, std::size_t hidden)
    : forward_dir("lstm.fwd", input, hidden), backward_dir("lstm.bwd", input, hidden) {}

template <typename T>
void BiLstm<T>::init(Rng& rng) {
  forward_dir.params.init(rng);
  backward_dir.params.init(rng);
}

template <typename T>
Tensor<T> BiLstm<T>::forward(const Tensor<T>& sequence) {
  const auto hf = forward_dir.forward(sequence);
  const auto hb = reverse_rows(backward_dir.forward(reverse_rows(sequence)));
  const std::size_t len = sequence.dim(0), hidden = hidden_size();
  Tensor<T> out({len, 2 * hidden});
  for (std::size_t t = 0; t < len; ++t) {
    std::copy_n(hf.raw() + t * hidden, hidden, out.raw() + t * 2 * hidden);
    std::copy_n(hb.raw() + t * hidden, hidden, out.raw() + t * 2 * hidden + hidden);
  }
  return out;
}

template <typename T>
Tensor<T> BiLstm<T>::backward(const Tensor<T>& dout) {
  const std::size_t len = dout.dim(0), hidden = hidden_size();
  if (dout.shape() != Shape{len, 2 * hidden}) throw DimensionError("bilstm_backward: upstream gradient shape mismatch");
  Tensor<T> df({len, hidden}), db({len, hidden});
  for (std::size_t t = 0; t < len; ++t) {
    std::copy_n(dout.raw() + t * 2 * hidden, hidden, df.raw() + t * hidden);
    std::copy_n(dout.raw() + t * 2 * hidden + hidden, hidden, db.raw() + t * hidden);
  }
  auto dx = forward_dir.backward(df);
  const auto dxb = reverse_rows(backward_dir.backward(reverse_rows(db)));
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxb[i];
  return dx;
}

template <typename T>
void BiLstm<T>::collect(ParamRefs<T>& out) {
  forward_dir.params.collect(out);
  backward_dir.params.collect(out);
}

void QNetConfig::validate() const {
  if (embed_dim == 0 || hidden == 0 || seq_len == 0 || num_classes < 2) {
    throw ValidationError("qnet: embed_dim, hidden and seq_len must be positive and num_classes >= 2");
  }
}

template <typename T>
QNet<T>::QNet(const QNetConfig& cfg)
    : bilstm(cfg.embed_dim, cfg.hidden),
      image_head("qnet.image_head", cfg.image_head_inputs(), cfg.num_classes),
      scan_head("qnet.scan_head", cfg.scan_head_inputs(), cfg.num_classes),
      cfg_(cfg) {
  cfg.validate();
}

template <typename T>
void QNet<T>::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5E0}));
  bilstm.init(rng);
  image_head.init(rng);
  scan_head.init(rng);
}

template <typename T>
QNetOutput<T> QNet<T>::forward(const Tensor<T>& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != cfg_.seq_len || embeddings.dim(1) != cfg_.embed_dim) {
    throw DimensionError("qnet: expected " + std::to_string(cfg_.seq_len) + " x " + std::to_string(cfg_.embed_dim) +
                         " embeddings, got " + shape_string(embeddings.shape()));
  }
  const auto seq = bilstm.forward(embeddings);
  QNetOutput<T> out;
  out.image_logits = image_head.forward(seq);
  out.scan_logits = scan_head.forward(seq.reshaped({1, seq.size()}));
  return out;
}

template <typename T>
Tensor<T> QNet<T>::backward(const Tensor<T>& d_image_logits, const Tensor<T>& d_scan_logits) {
  auto dseq = image_head.backward(d_image_logits);
  const auto dflat = scan_head.backward(d_scan_logits);
  for (std::size_t i = 0; i < dseq.size(); ++i) dseq[i] += dflat[i];
  return bilstm.backward(dseq);
}

template <typename T>
ParamRefs<T> QNet<T>::parameters() {
  ParamRefs<T> out;
  bilstm.collect(out);
  image_head.collect(out);
  scan_head.collect(out);
  return out;
}

#define QNET_INSTANTIATE_SEQUENCE(T)                                                                       \
  template struct LstmCellParams<T>;                                                                      \
  template LstmStep<T> lstm_step<T>(const LstmCellParams<T>&, std::span<const T>, std::span<const T>,      \
                                    std::span<const T>);                                                  \
  template void lstm_step_backward<T>(LstmCellParams<T>&, const LstmStep<T>&, std::span<const T>,         \
                                      std::span<const T>, std::span<T>, std::span<T>, std::span<T>);      \
  template class LstmLayer<T>;                                                                            \
  template class BiLstm<T>;                                                                               \
  template class QNet<T>;

QNET_INSTANTIATE_SEQUENCE(float)
QNET_INSTANTIATE_SEQUENCE(double)

}  // namespace qnet
