#include <benchmark/benchmark.h>

#include <vector>

#include "qnet/kernels.hpp"
#include "qnet/rng.hpp"

using namespace qnet;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// Shapes the desk backbone sees at batch 16 on 64x64 inputs.
ConvGeometry conv_case(int which) {
  switch (which) {
    case 0:  // stem: 3 -> 8, 7x7 stride 2
      return {16, 3, 64, 64, 8, 7, 2, 3};
    case 1:  // first stage block conv
      return {16, 8, 16, 16, 8, 3, 1, 1};
    default:  // last stage block conv
      return {16, 64, 2, 2, 64, 3, 1, 1};
  }
}

void label_conv(benchmark::State& state, const ConvGeometry& g) {
  state.SetLabel(std::to_string(g.in_channels) + "->" + std::to_string(g.out_channels) + " k" +
                 std::to_string(g.kernel) + " " + std::to_string(g.in_h) + "x" + std::to_string(g.in_w));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.output_size() * g.patch()));
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_case(static_cast<int>(state.range(0)));
  const auto x = random_values(g.input_size(), 1);
  const auto w = random_values(g.weight_size(), 2);
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_forward<float>(g, x, w, y);
    else kernels::reference::conv2d_forward<float>(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  label_conv(state, g);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = conv_case(static_cast<int>(state.range(0)));
  const auto x = random_values(g.input_size(), 1);
  const auto w = random_values(g.weight_size(), 2);
  const auto dy = random_values(g.output_size(), 3);
  std::vector<float> dx(g.input_size()), dw(g.weight_size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_backward<float>(g, x, w, dy, dx, dw);
    else kernels::reference::conv2d_backward<float>(g, x, w, dy, dx, dw);
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
  label_conv(state, g);
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm_nn<float>(n, n, n, a.data(), b.data(), c.data(), false);
    else kernels::reference::matmul<float>(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <bool Parallel>
void BM_MaxPool(benchmark::State& state) {
  const PoolGeometry g{16, 8, 32, 32, 3, 2, 1};
  const auto x = random_values(g.batch * g.channels * g.in_h * g.in_w, 1);
  std::vector<float> y(g.output_size());
  std::vector<std::size_t> arg(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::maxpool2d_forward<float>(g, x, y, arg);
    else kernels::reference::maxpool2d_forward<float>(g, x, y, arg);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->DenseRange(0, 2);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/openmp")->DenseRange(0, 2);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->DenseRange(0, 2);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/openmp")->DenseRange(0, 2);
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_MaxPool<false>)->Name("maxpool_forward/reference");
BENCHMARK(BM_MaxPool<true>)->Name("maxpool_forward/openmp");

BENCHMARK_MAIN();
