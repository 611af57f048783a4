#include "qnet/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <cstddef>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qnet/error.hpp"

namespace qnet::kernels {

namespace {

constexpr std::size_t kRowBlock = 16;
constexpr std::size_t kColBlock = 64;
constexpr std::size_t kMicroRows = 4;
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using index_t = std::ptrdiff_t;

// Per-thread scratch that only grows, so repeated layer calls neither fault in fresh
// pages nor zero-fill buffers that are about to be overwritten.
enum Scratch { kScratchA, kScratchB, kScratchC, kScratchCount };

template <typename T>
T* scratch(Scratch slot, std::size_t n) {
  thread_local std::vector<T> buffers[kScratchCount];
  auto& buf = buffers[slot];
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

template <typename T>
void check_span(std::span<T> s, std::size_t n, const char* what) {
  if (s.size() != n) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(n) + " elements, got " +
                         std::to_string(s.size()));
  }
}

// 64-byte GCC/Clang vector; lowered to whatever SIMD width the target offers.
template <typename T>
using Vec [[gnu::vector_size(64)]] = T;

// One C tile [ib, ib+kRowBlock) x [jb, jb+kColBlock). a_at(i, p) abstracts the A layout
// and b_row(p, jb) returns the start of row p of the column block beginning at jb. Kept
// out of line from the parallel loop so its operands are locals, not shared captures.
template <typename T, typename AAt, typename BRow>
void gemm_tile(std::size_t m, std::size_t n, std::size_t k, AAt a_at, BRow b_row, T* c, bool accumulate,
               std::size_t ib, std::size_t jb) {
  const std::size_t ie = std::min(m, ib + kRowBlock);
  const std::size_t je = std::min(n, jb + kColBlock);
  const std::size_t width = je - jb;
  std::size_t i = ib;
  if (width == kColBlock) {
    // Register-blocked path: kMicroRows full-width rows accumulate in vector registers over all of k.
    using V = Vec<T>;
    constexpr std::size_t lanes = sizeof(V) / sizeof(T);
    constexpr std::size_t nv = kColBlock / lanes;
    for (; i + kMicroRows <= ie; i += kMicroRows) {
      V acc[kMicroRows][nv];
      for (std::size_t r = 0; r < kMicroRows; ++r)
        for (std::size_t v = 0; v < nv; ++v) {
          if (accumulate) {
            std::memcpy(&acc[r][v], c + (i + r) * n + jb + v * lanes, sizeof(V));
          } else {
            acc[r][v] = V{};
          }
        }
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b_row(p, jb);
        V bv[nv];
        for (std::size_t v = 0; v < nv; ++v) std::memcpy(&bv[v], brow + v * lanes, sizeof(V));
        for (std::size_t r = 0; r < kMicroRows; ++r) {
          const T av = a_at(i + r, p);
          for (std::size_t v = 0; v < nv; ++v) acc[r][v] += av * bv[v];
        }
      }
      for (std::size_t r = 0; r < kMicroRows; ++r)
        for (std::size_t v = 0; v < nv; ++v) std::memcpy(c + (i + r) * n + jb + v * lanes, &acc[r][v], sizeof(V));
    }
  }
  if (!accumulate) {
    for (std::size_t r = i; r < ie; ++r) std::fill_n(c + r * n + jb, width, T{0});
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b_row(p, jb);
    for (std::size_t r = i; r < ie; ++r) {
      const T av = a_at(r, p);
      T* crow = c + r * n + jb;
      for (std::size_t j = 0; j < width; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T, typename AAt, typename BRow>
void gemm_tiles(std::size_t m, std::size_t n, std::size_t k, AAt a_at, BRow b_row, T* c, bool accumulate) {
  const std::size_t row_blocks = (m + kRowBlock - 1) / kRowBlock;
  const std::size_t col_blocks = (n + kColBlock - 1) / kColBlock;
  const auto tiles = static_cast<index_t>(row_blocks * col_blocks);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (index_t t = 0; t < tiles; ++t) {
    gemm_tile(m, n, k, a_at, b_row, c, accumulate, (static_cast<std::size_t>(t) / col_blocks) * kRowBlock,
              (static_cast<std::size_t>(t) % col_blocks) * kColBlock);
  }
}

// Column panels of width kColBlock: element (r, q) lives at
// panels[(q / kColBlock) * patch * kColBlock + r * kColBlock + q % kColBlock], with
// r = (c*k + ki)*k + kj and q = b*P + oh*OW + ow. The tail panel is zero-padded.
template <typename T>
void im2col_panel(const ConvGeometry g, const T* x, T* panels, std::size_t pi) {
  const std::size_t ow_n = g.out_w(), plane = g.out_h() * ow_n;
  const std::size_t bp = g.batch * plane;
  const std::size_t patch = g.patch();
  const std::size_t q0 = pi * kColBlock;
  const std::size_t qn = std::min(kColBlock, bp - q0);
  T* panel = panels + pi * patch * kColBlock;
  // Split the panel into runs that share one (image, output row).
  struct Run {
    std::size_t j0, j1, image, oh, ow0;
  };
  Run runs[kColBlock];
  std::size_t n_runs = 0;
  for (std::size_t j = 0; j < qn;) {
    const std::size_t q = q0 + j;
    const std::size_t ow0 = q % ow_n;
    const std::size_t len = std::min(qn - j, ow_n - ow0);
    runs[n_runs++] = {j, j + len, q / plane, (q % plane) / ow_n, ow0};
    j += len;
  }
  const auto h = static_cast<index_t>(g.in_h), w = static_cast<index_t>(g.in_w);
  const auto pad = static_cast<index_t>(g.pad), stride = static_cast<index_t>(g.stride);
  std::size_t r = 0;
  for (std::size_t ch = 0; ch < g.in_channels; ++ch) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj, ++r) {
        T* out = panel + r * kColBlock;
        // ow values whose input column ow*stride + kj - pad falls inside [0, w)
        const index_t shift = static_cast<index_t>(kj) - pad;
        const index_t ow_lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
        const index_t ow_hi = w - 1 - shift < 0 ? 0 : (w - 1 - shift) / stride + 1;
        for (std::size_t ru = 0; ru < n_runs; ++ru) {
          const Run& run = runs[ru];
          const index_t ih = static_cast<index_t>(run.oh) * stride + static_cast<index_t>(ki) - pad;
          T* o = out + run.j0;
          const std::size_t len = run.j1 - run.j0;
          if (ih < 0 || ih >= h) {
            std::fill_n(o, len, T{0});
            continue;
          }
          const T* src = x + ((run.image * g.in_channels + ch) * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          const auto a = static_cast<index_t>(run.ow0);
          const auto e = a + static_cast<index_t>(len);
          const index_t lo = std::clamp(ow_lo, a, e), hi = std::clamp(ow_hi, lo, e);
          std::size_t t = 0;
          for (index_t ow = a; ow < lo; ++ow) o[t++] = T{0};
          if (stride == 1) {
            std::copy(src + (lo + shift), src + (hi + shift), o + t);
            t += static_cast<std::size_t>(hi - lo);
          } else {
            for (index_t ow = lo; ow < hi; ++ow) o[t++] = src[ow * stride + shift];
          }
          for (index_t ow = hi; ow < e; ++ow) o[t++] = T{0};
        }
        std::fill(out + qn, out + kColBlock, T{0});
      }
    }
  }
}

template <typename T>
void im2col_panels(const ConvGeometry& g, const T* x, T* panels) {
  const std::size_t bp = g.batch * g.out_h() * g.out_w();
  const auto total = static_cast<index_t>((bp + kColBlock - 1) / kColBlock);
#pragma omp parallel for schedule(static) if (g.patch() * bp >= kParallelWork)
  for (index_t pi = 0; pi < total; ++pi) im2col_panel(g, x, panels, static_cast<std::size_t>(pi));
}

// dx[b, c] planes are independent; within a plane contributions are summed in (r, q) order.
template <typename T>
void col2im_plane(const ConvGeometry g, const T* cols, T* dx, std::size_t pi) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w(), plane = oh_n * ow_n;
  const std::size_t bp = g.batch * plane;
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t b = pi / g.in_channels;
  const std::size_t ch = pi % g.in_channels;
  const auto h = static_cast<index_t>(g.in_h), w = static_cast<index_t>(g.in_w);
  const auto pad = static_cast<index_t>(g.pad), stride = static_cast<index_t>(g.stride);
  T* dst = dx + pi * g.in_h * g.in_w;
  std::fill_n(dst, g.in_h * g.in_w, T{0});
  for (std::size_t kidx = 0; kidx < kk; ++kidx) {
    const auto ki = static_cast<index_t>(kidx / g.kernel), kj = static_cast<index_t>(kidx % g.kernel);
    const T* src = cols + (ch * kk + kidx) * bp + b * plane;
    const index_t shift = kj - pad;
    const index_t ow_lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
    const index_t ow_hi = std::min(static_cast<index_t>(ow_n), w - 1 - shift < 0 ? 0 : (w - 1 - shift) / stride + 1);
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      const index_t ih = static_cast<index_t>(oh) * stride + ki - pad;
      if (ih < 0 || ih >= h) continue;
      T* drow = dst + ih * w;
      const T* srow = src + oh * ow_n;
      for (index_t ow = ow_lo; ow < ow_hi; ++ow) drow[ow * stride + shift] += srow[ow];
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const auto planes = static_cast<index_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static) if (g.patch() * g.batch * g.out_h() * g.out_w() >= kParallelWork)
  for (index_t pi = 0; pi < planes; ++pi) col2im_plane(g, cols, dx, static_cast<std::size_t>(pi));
}

// dW[f][r] = sum_q dyt[f][q] * cols[r][q] with both operands in the panel layout of
// im2col_panels (dyt padded with zeros to whole panels). Each output owns one vector
// accumulator summed panel by panel, then reduced lane by lane: a fixed order.
template <typename T>
void weight_grad_block(const T* dyt_panels, const T* panels, std::size_t n_panels, std::size_t out_channels,
                       std::size_t patch, T* dw, std::size_t f0, std::size_t r0) {
  using V = Vec<T>;
  constexpr std::size_t lanes = sizeof(V) / sizeof(T);
  constexpr std::size_t nv = kColBlock / lanes;
  constexpr std::size_t kF = 4, kR = 4;
  const std::size_t fn = std::min(kF, out_channels - f0), rn = std::min(kR, patch - r0);
  V acc[kF][kR] = {};
  for (std::size_t pn = 0; pn < n_panels; ++pn) {
    const T* dpanel = dyt_panels + pn * out_channels * kColBlock;
    const T* cpanel = panels + pn * patch * kColBlock;
    for (std::size_t v = 0; v < nv; ++v) {
      V dv[kF] = {}, cv[kR] = {};
      for (std::size_t a = 0; a < kF; ++a)
        if (a < fn) std::memcpy(&dv[a], dpanel + (f0 + a) * kColBlock + v * lanes, sizeof(V));
      for (std::size_t r = 0; r < kR; ++r)
        if (r < rn) std::memcpy(&cv[r], cpanel + (r0 + r) * kColBlock + v * lanes, sizeof(V));
      for (std::size_t a = 0; a < kF; ++a)
        for (std::size_t r = 0; r < kR; ++r)
          if (a < fn && r < rn) acc[a][r] += dv[a] * cv[r];
    }
  }
  for (std::size_t a = 0; a < fn; ++a)
    for (std::size_t r = 0; r < rn; ++r) {
      T sum = T{0};
      for (std::size_t l = 0; l < lanes; ++l) sum += acc[a][r][l];
      dw[(f0 + a) * patch + r0 + r] = sum;
    }
}

template <typename T>
void weight_grad(const T* dyt_panels, const T* panels, std::size_t n_panels, std::size_t out_channels,
                 std::size_t patch, T* dw) {
  const std::size_t fb = (out_channels + 3) / 4, rb = (patch + 3) / 4;
  const auto blocks = static_cast<index_t>(fb * rb);
#pragma omp parallel for schedule(static) if (n_panels * kColBlock * out_channels * patch >= kParallelWork)
  for (index_t t = 0; t < blocks; ++t) {
    const auto u = static_cast<std::size_t>(t);
    weight_grad_block(dyt_panels, panels, n_panels, out_channels, patch, dw, (u / rb) * 4, (u % rb) * 4);
  }
}

void check_geometry(const ConvGeometry& g) {
  if (g.stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (g.kernel > g.in_h + 2 * g.pad || g.kernel > g.in_w + 2 * g.pad) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  gemm_tiles<T>(
      m, n, k, [a, k](std::size_t i, std::size_t p) { return a[i * k + p]; },
      [b, n](std::size_t p, std::size_t jb) { return b + p * n + jb; }, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  gemm_tiles<T>(
      m, n, k, [a, m](std::size_t i, std::size_t p) { return a[p * m + i]; },
      [b, n](std::size_t p, std::size_t jb) { return b + p * n + jb; }, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto rows = static_cast<index_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (index_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  check_geometry(g);
  check_span(x, g.input_size(), "conv2d input");
  check_span(w, g.weight_size(), "conv2d weight");
  check_span(y, g.output_size(), "conv2d output");
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t bp = g.batch * plane;
  const std::size_t k = g.patch();
  const std::size_t n_panels = (bp + kColBlock - 1) / kColBlock;
  T* panels = scratch<T>(kScratchA, n_panels * k * kColBlock);
  T* out = scratch<T>(kScratchB, g.out_channels * bp);
  im2col_panels(g, x.data(), panels);
  const T* wp = w.data();
  const T* pp = panels;
  gemm_tiles<T>(
      g.out_channels, bp, k, [wp, k](std::size_t i, std::size_t p) { return wp[i * k + p]; },
      [pp, k](std::size_t p, std::size_t jb) { return pp + (jb / kColBlock) * k * kColBlock + p * kColBlock; },
      out, false);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      std::copy_n(out + f * bp + b * plane, plane, y.data() + (b * g.out_channels + f) * plane);
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw) {
  check_geometry(g);
  check_span(x, g.input_size(), "conv2d input");
  check_span(w, g.weight_size(), "conv2d weight");
  check_span(dy, g.output_size(), "conv2d output gradient");
  check_span(dw, g.weight_size(), "conv2d weight gradient");
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t bp = g.batch * plane;
  T* dyt = scratch<T>(kScratchA, g.out_channels * bp);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      std::copy_n(dy.data() + (b * g.out_channels + f) * plane, plane, dyt + f * bp + b * plane);
    }
  }
  const std::size_t n_panels = (bp + kColBlock - 1) / kColBlock;
  T* panels = scratch<T>(kScratchB, n_panels * g.patch() * kColBlock);
  im2col_panels(g, x.data(), panels);
  T* dyt_panels = scratch<T>(kScratchC, n_panels * g.out_channels * kColBlock);
  for (std::size_t pn = 0; pn < n_panels; ++pn) {
    const std::size_t q0 = pn * kColBlock, qn = std::min(kColBlock, bp - q0);
    for (std::size_t f = 0; f < g.out_channels; ++f) {
      T* dst = dyt_panels + (pn * g.out_channels + f) * kColBlock;
      std::copy_n(dyt + f * bp + q0, qn, dst);
      std::fill(dst + qn, dst + kColBlock, T{0});
    }
  }
  weight_grad(dyt_panels, panels, n_panels, g.out_channels, g.patch(), dw.data());
  if (!dx.empty()) {
    check_span(dx, g.input_size(), "conv2d input gradient");
    T* dcols = scratch<T>(kScratchB, g.patch() * bp);
    gemm_tn(g.patch(), bp, g.out_channels, w.data(), dyt, dcols, false);
    col2im(g, dcols, dx.data());
  }
}

template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  check_span(y, g.output_size(), "maxpool output");
  check_span(argmax, g.output_size(), "maxpool argmax");
  check_span(x, g.batch * g.channels * g.in_h * g.in_w, "maxpool input");
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  const auto planes = static_cast<index_t>(g.batch * g.channels);
#pragma omp parallel for schedule(static) if (g.output_size() * g.kernel * g.kernel >= kParallelWork)
  for (index_t pi = 0; pi < planes; ++pi) {
    const std::size_t base = static_cast<std::size_t>(pi) * g.in_h * g.in_w;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_at = std::numeric_limits<std::size_t>::max();
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
          const auto ih = static_cast<index_t>(oh * g.stride + ki) - static_cast<index_t>(g.pad);
          if (ih < 0 || ih >= static_cast<index_t>(g.in_h)) continue;
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const auto iw = static_cast<index_t>(ow * g.stride + kj) - static_cast<index_t>(g.pad);
            if (iw < 0 || iw >= static_cast<index_t>(g.in_w)) continue;
            const std::size_t at = base + static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw);
            if (best_at == std::numeric_limits<std::size_t>::max() || x[at] > best) {
              best = x[at];
              best_at = at;
            }
          }
        }
        const std::size_t o = static_cast<std::size_t>(pi) * oh_n * ow_n + oh * ow_n + ow;
        y[o] = best;
        argmax[o] = best_at;
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(const PoolGeometry& g, std::span<const T> dy, std::span<const std::size_t> argmax,
                        std::span<T> dx) {
  check_span(dy, g.output_size(), "maxpool output gradient");
  check_span(dx, g.batch * g.channels * g.in_h * g.in_w, "maxpool input gradient");
  std::fill(dx.begin(), dx.end(), T{0});
  const std::size_t per_plane = g.out_h() * g.out_w();
  const auto planes = static_cast<index_t>(g.batch * g.channels);
#pragma omp parallel for schedule(static) if (g.output_size() >= kParallelWork)
  for (index_t pi = 0; pi < planes; ++pi) {
    const std::size_t o0 = static_cast<std::size_t>(pi) * per_plane;
    for (std::size_t o = o0; o < o0 + per_plane; ++o) dx[argmax[o]] += dy[o];
  }
}

namespace reference {

template <typename T>
void matmul(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  check_geometry(g);
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t f = 0; f < g.out_channels; ++f)
      for (std::size_t oh = 0; oh < oh_n; ++oh)
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          T acc{0};
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const auto ih = static_cast<index_t>(oh * g.stride + ki) - static_cast<index_t>(g.pad);
                const auto iw = static_cast<index_t>(ow * g.stride + kj) - static_cast<index_t>(g.pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<index_t>(g.in_h) || iw >= static_cast<index_t>(g.in_w))
                  continue;
                acc += x[((b * g.in_channels + c) * g.in_h + static_cast<std::size_t>(ih)) * g.in_w +
                         static_cast<std::size_t>(iw)] *
                       w[((f * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
              }
          y[((b * g.out_channels + f) * oh_n + oh) * ow_n + ow] = acc;
        }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw) {
  check_geometry(g);
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  std::fill(dw.begin(), dw.end(), T{0});
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), T{0});
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t f = 0; f < g.out_channels; ++f)
      for (std::size_t oh = 0; oh < oh_n; ++oh)
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          const T gy = dy[((b * g.out_channels + f) * oh_n + oh) * ow_n + ow];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
              for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const auto ih = static_cast<index_t>(oh * g.stride + ki) - static_cast<index_t>(g.pad);
                const auto iw = static_cast<index_t>(ow * g.stride + kj) - static_cast<index_t>(g.pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<index_t>(g.in_h) || iw >= static_cast<index_t>(g.in_w))
                  continue;
                const std::size_t xi = ((b * g.in_channels + c) * g.in_h + static_cast<std::size_t>(ih)) * g.in_w +
                                       static_cast<std::size_t>(iw);
                const std::size_t wi = ((f * g.in_channels + c) * g.kernel + ki) * g.kernel + kj;
                dw[wi] += x[xi] * gy;
                if (!dx.empty()) dx[xi] += w[wi] * gy;
              }
        }
}

template <typename T>
void maxpool2d_forward(const PoolGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
  for (std::size_t pl = 0; pl < g.batch * g.channels; ++pl)
    for (std::size_t oh = 0; oh < oh_n; ++oh)
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        bool found = false;
        T best{};
        std::size_t best_at = 0;
        for (std::size_t ki = 0; ki < g.kernel; ++ki)
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const auto ih = static_cast<index_t>(oh * g.stride + ki) - static_cast<index_t>(g.pad);
            const auto iw = static_cast<index_t>(ow * g.stride + kj) - static_cast<index_t>(g.pad);
            if (ih < 0 || iw < 0 || ih >= static_cast<index_t>(g.in_h) || iw >= static_cast<index_t>(g.in_w))
              continue;
            const std::size_t at = (pl * g.in_h + static_cast<std::size_t>(ih)) * g.in_w + static_cast<std::size_t>(iw);
            if (!found || x[at] > best) {
              found = true;
              best = x[at];
              best_at = at;
            }
          }
        const std::size_t o = (pl * oh_n + oh) * ow_n + ow;
        y[o] = best;
        argmax[o] = best_at;
      }
}

}  // namespace reference

#define QNET_INSTANTIATE_KERNELS(T)                                                                                 \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);                   \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);                   \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);                   \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>);      \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,                    \
                                   std::span<const T>, std::span<T>, std::span<T>);                                \
  template void maxpool2d_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>,                        \
                                     std::span<std::size_t>);                                                      \
  template void maxpool2d_backward<T>(const PoolGeometry&, std::span<const T>, std::span<const std::size_t>,       \
                                      std::span<T>);                                                               \
  template void reference::matmul<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);               \
  template void reference::conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,          \
                                             std::span<T>);                                                        \
  template void reference::conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,         \
                                              std::span<const T>, std::span<T>, std::span<T>);                     \
  template void reference::maxpool2d_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>,             \
                                                std::span<std::size_t>);

QNET_INSTANTIATE_KERNELS(float)
QNET_INSTANTIATE_KERNELS(double)

}  // namespace qnet::kernels
