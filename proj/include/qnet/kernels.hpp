#pragma once

// Hot loops of the network. Two implementations share one interface:
//
//   qnet::kernels            im2col + GEMM, OpenMP-parallel over independent outputs
//   qnet::kernels::reference naive nested loops, single-threaded, used as the test oracle
//
// Every parallel kernel partitions work over output elements only and keeps each
// element's reduction order fixed, so results are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace qnet {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * patch(); }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t output_size() const { return batch * channels * out_h() * out_w(); }
};

namespace kernels {

/// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

/// C[m x n] (+)= A[m x k] * B[k x n], all row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// C[m x n] (+)= A^T * B where A is stored [k x m].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// C[m x n] (+)= A * B^T where B is stored [n x k].
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);

/// dx may be empty when the input gradient is not needed. dw is overwritten.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw);

/// argmax receives the flat input offset of each window maximum (first row-major occurrence on ties).
template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax);

template <typename T>
void maxpool2d_backward(const PoolGeometry& g, std::span<const T> dy, std::span<const std::size_t> argmax,
                        std::span<T> dx);

namespace reference {

template <typename T>
void matmul(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw);

template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax);

}  // namespace reference
}  // namespace kernels
}  // namespace qnet
