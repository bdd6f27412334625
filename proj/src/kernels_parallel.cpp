#include <algorithm>
#include <cstddef>
#include <vector>

#include <omp.h>

#include "flowsan/kernels.hpp"

namespace flowsan::kernels {

namespace {

// Zero-padded planes split into stride phases: phase (a, b) of a plane holds the
// padded pixels (a + s*i, b + s*j). A strided correlation tap (ky, kx) then reads
// one phase at a fixed offset, so every tap is a contiguous sweep of length span().
struct PhaseLayout {
  int stride, pad, h, w, hq, wq;

  PhaseLayout(int stride_, int pad_, int h_, int w_)
      : stride(stride_), pad(pad_), h(h_), w(w_),
        hq((h_ + 2 * pad_ + stride_ - 1) / stride_), wq((w_ + 2 * pad_ + stride_ - 1) / stride_) {}

  bool identity() const { return stride == 1 && pad == 0; }
  std::size_t phase_size() const { return static_cast<std::size_t>(hq) * wq; }
  std::size_t plane_size() const { return static_cast<std::size_t>(stride) * stride * phase_size(); }
  std::size_t tap_offset(int ky, int kx) const {
    return static_cast<std::size_t>((ky % stride) * stride + kx % stride) * phase_size() +
           static_cast<std::size_t>(ky / stride) * wq + static_cast<std::size_t>(kx / stride);
  }
  int span(int ho, int wo) const { return (ho - 1) * wq + wo; }
};

// Calls fn(phase_index, y, x, count) for each run of unpadded pixels
// (y, x), (y, x + s), ... that lands contiguously in one phase row.
template <class Fn>
void for_each_phase_run(const PhaseLayout& L, Fn&& fn) {
  const int s = L.stride;
  for (int a = 0; a < s; ++a) {
    for (int b = 0; b < s; ++b) {
      const std::size_t base = static_cast<std::size_t>(a * s + b) * L.phase_size();
      // Columns j with 0 <= b + s*j - pad < w.
      const int jlo = std::max(0, (L.pad - b + s - 1) / s);
      const int jhi = std::min(L.wq, (L.w - 1 + L.pad - b) / s + 1);
      if (jhi <= jlo || L.w - 1 + L.pad - b < 0) continue;
      for (int i = 0; i < L.hq; ++i) {
        const int y = a + s * i - L.pad;
        if (y < 0 || y >= L.h) continue;
        fn(base + static_cast<std::size_t>(i) * L.wq + jlo, y, b + s * jlo - L.pad, jhi - jlo);
      }
    }
  }
}

template <class T>
std::vector<T> to_phases(const T* src, std::ptrdiff_t planes, const PhaseLayout& L) {
  std::vector<T> out(static_cast<std::size_t>(planes) * L.plane_size(), T(0));
  const int s = L.stride;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* in = src + pl * L.h * L.w;
    T* dst = out.data() + pl * L.plane_size();
    for_each_phase_run(L, [&](std::size_t at, int y, int x, int count) {
      const T* row = in + y * L.w + x;
      if (s == 1) {
        std::copy_n(row, count, dst + at);
      } else {
        for (int j = 0; j < count; ++j) dst[at + j] = row[j * s];
      }
    });
  }
  return out;
}

// Phase planes of src, or src itself when the layout is the identity.
template <class T>
const T* phases_of(const T* src, std::ptrdiff_t planes, const PhaseLayout& L, std::vector<T>& storage) {
  if (L.identity()) return src;
  storage = to_phases(src, planes, L);
  return storage.data();
}

// Adds the unpadded pixels of a phase plane into a [h, w] plane.
template <class T>
void add_from_phases(const T* phases, const PhaseLayout& L, T* dst) {
  const int s = L.stride;
  for_each_phase_run(L, [&](std::size_t at, int y, int x, int count) {
    T* row = dst + y * L.w + x;
    if (s == 1) {
#pragma omp simd
      for (int j = 0; j < count; ++j) row[j] += phases[at + j];
    } else {
      for (int j = 0; j < count; ++j) row[j * s] += phases[at + j];
    }
  });
}

// [planes, ho, wo] re-laid with row stride wq; the extra columns are zero.
template <class T>
std::vector<T> widen_rows(const T* src, std::ptrdiff_t planes, int ho, int wo, int wq) {
  std::vector<T> out(static_cast<std::size_t>(planes) * ho * wq, T(0));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl)
    for (int y = 0; y < ho; ++y)
      std::copy_n(src + (pl * ho + y) * wo, wo, out.data() + (pl * ho + y) * wq);
  return out;
}

}  // namespace

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int num_threads() { return omp_get_max_threads(); }

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int Ho = g.out_h(), Wo = g.out_w(), k = g.kernel;
  const int Ci = g.in_channels, Co = g.out_channels;
  const PhaseLayout L(g.stride, g.padding, g.in_h, g.in_w);
  std::vector<T> xq_storage;
  const T* xq = phases_of(x.data(), static_cast<std::ptrdiff_t>(g.batch) * Ci, L, xq_storage);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.batch) * Co;
  const int span = L.span(Ho, Wo);

#pragma omp parallel
  {
    std::vector<T> acc(static_cast<std::size_t>(Ho) * L.wq);
#pragma omp for schedule(static)
    for (std::ptrdiff_t plane = 0; plane < planes; ++plane) {
      const int n = static_cast<int>(plane / Co), co = static_cast<int>(plane % Co);
      std::fill(acc.begin(), acc.end(), bias.empty() ? T(0) : bias[co]);
      T* a = acc.data();
      for (int ci = 0; ci < Ci; ++ci) {
        const T* in = xq + (static_cast<std::size_t>(n) * Ci + ci) * L.plane_size();
        const T* wk = w.data() + (static_cast<std::size_t>(co) * Ci + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            const T* src = in + L.tap_offset(ky, kx);
#pragma omp simd
            for (int i = 0; i < span; ++i) a[i] += wv * src[i];
          }
        }
      }
      T* out = y.data() + plane * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) std::copy_n(a + oy * L.wq, Wo, out + oy * Wo);
    }
  }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> gy, std::span<const T> w,
                           std::span<T> gx) {
  const int Ho = g.out_h(), Wo = g.out_w(), k = g.kernel;
  const int Ci = g.in_channels, Co = g.out_channels, H = g.in_h, W = g.in_w;
  const PhaseLayout L(g.stride, g.padding, H, W);
  const std::vector<T> gw = widen_rows(gy.data(), static_cast<std::ptrdiff_t>(g.batch) * Co, Ho, Wo, L.wq);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.batch) * Ci;
  const std::size_t wide_plane = static_cast<std::size_t>(Ho) * L.wq;
  const int span = L.span(Ho, Wo);

#pragma omp parallel
  {
    std::vector<T> acc(L.plane_size());
#pragma omp for schedule(static)
    for (std::ptrdiff_t plane = 0; plane < planes; ++plane) {
      const int n = static_cast<int>(plane / Ci), ci = static_cast<int>(plane % Ci);
      std::fill(acc.begin(), acc.end(), T(0));
      for (int co = 0; co < Co; ++co) {
        const T* src = gw.data() + (static_cast<std::size_t>(n) * Co + co) * wide_plane;
        const T* wk = w.data() + (static_cast<std::size_t>(co) * Ci + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            T* dst = acc.data() + L.tap_offset(ky, kx);
#pragma omp simd
            for (int i = 0; i < span; ++i) dst[i] += wv * src[i];
          }
        }
      }
      add_from_phases(acc.data(), L, gx.data() + plane * H * W);
    }
  }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> gy, std::span<const T> x,
                            std::span<T> gw, std::span<T> gbias) {
  const int Ho = g.out_h(), Wo = g.out_w(), k = g.kernel;
  const int Ci = g.in_channels, Co = g.out_channels;
  const PhaseLayout L(g.stride, g.padding, g.in_h, g.in_w);
  std::vector<T> xq_storage;
  const T* xq = phases_of(x.data(), static_cast<std::ptrdiff_t>(g.batch) * Ci, L, xq_storage);
  const std::vector<T> gwide = widen_rows(gy.data(), static_cast<std::ptrdiff_t>(g.batch) * Co, Ho, Wo, L.wq);
  const std::size_t wide_plane = static_cast<std::size_t>(Ho) * L.wq;
  const std::ptrdiff_t pairs = static_cast<std::ptrdiff_t>(Co) * Ci;
  const int span = L.span(Ho, Wo);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pair = 0; pair < pairs; ++pair) {
    const int co = static_cast<int>(pair / Ci), ci = static_cast<int>(pair % Ci);
    T* gwk = gw.data() + pair * k * k;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T acc = 0;
        for (int n = 0; n < g.batch; ++n) {
          const T* gr = gwide.data() + (static_cast<std::size_t>(n) * Co + co) * wide_plane;
          const T* in = xq + (static_cast<std::size_t>(n) * Ci + ci) * L.plane_size() + L.tap_offset(ky, kx);
#pragma omp simd reduction(+ : acc)
          for (int i = 0; i < span; ++i) acc += gr[i] * in[i];
        }
        gwk[ky * k + kx] += acc;
      }
    }
  }

  if (gbias.empty()) return;
  const std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
#pragma omp parallel for schedule(static)
  for (int co = 0; co < Co; ++co) {
    T acc = 0;
    for (int n = 0; n < g.batch; ++n) {
      const T* gout = gy.data() + (static_cast<std::size_t>(n) * Co + co) * out_plane;
#pragma omp simd reduction(+ : acc)
      for (std::size_t i = 0; i < out_plane; ++i) acc += gout[i];
    }
    gbias[co] += acc;
  }
}

template <class T>
void upsample2x_forward(int planes, int h, int w, std::span<const T> x, std::span<T> y) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* in = x.data() + static_cast<std::size_t>(p) * h * w;
    T* out = y.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int iy = 0; iy < h; ++iy) {
      T* r0 = out + static_cast<std::size_t>(2 * iy) * 2 * w;
      T* r1 = r0 + 2 * w;
      for (int ix = 0; ix < w; ++ix) {
        const T v = in[iy * w + ix];
        r0[2 * ix] = v;
        r0[2 * ix + 1] = v;
        r1[2 * ix] = v;
        r1[2 * ix + 1] = v;
      }
    }
  }
}

template <class T>
void upsample2x_backward(int planes, int h, int w, std::span<const T> gy, std::span<T> gx) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* gout = gy.data() + static_cast<std::size_t>(p) * 4 * h * w;
    T* gin = gx.data() + static_cast<std::size_t>(p) * h * w;
    for (int iy = 0; iy < h; ++iy) {
      const T* r0 = gout + static_cast<std::size_t>(2 * iy) * 2 * w;
      const T* r1 = r0 + 2 * w;
      for (int ix = 0; ix < w; ++ix)
        gin[iy * w + ix] += r0[2 * ix] + r0[2 * ix + 1] + r1[2 * ix] + r1[2 * ix + 1];
    }
  }
}

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  const int I = g.in_features, O = g.out_features;
  const std::ptrdiff_t cells = static_cast<std::ptrdiff_t>(g.batch) * O;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cell = 0; cell < cells; ++cell) {
    const int n = static_cast<int>(cell / O), o = static_cast<int>(cell % O);
    const T* xr = x.data() + static_cast<std::size_t>(n) * I;
    const T* wr = w.data() + static_cast<std::size_t>(o) * I;
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < I; ++i) acc += wr[i] * xr[i];
    y[cell] = acc + (bias.empty() ? T(0) : bias[o]);
  }
}

template <class T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> gy, std::span<const T> w,
                          std::span<T> gx) {
  const int I = g.in_features, O = g.out_features;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    T* gr = gx.data() + static_cast<std::size_t>(n) * I;
    for (int o = 0; o < O; ++o) {
      const T gv = gy[static_cast<std::size_t>(n) * O + o];
      const T* wr = w.data() + static_cast<std::size_t>(o) * I;
#pragma omp simd
      for (int i = 0; i < I; ++i) gr[i] += gv * wr[i];
    }
  }
}

template <class T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> gy, std::span<const T> x,
                           std::span<T> gw, std::span<T> gbias) {
  const int I = g.in_features, O = g.out_features;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    T* gr = gw.data() + static_cast<std::size_t>(o) * I;
    T bacc = 0;
    for (int n = 0; n < g.batch; ++n) {
      const T gv = gy[static_cast<std::size_t>(n) * O + o];
      const T* xr = x.data() + static_cast<std::size_t>(n) * I;
#pragma omp simd
      for (int i = 0; i < I; ++i) gr[i] += gv * xr[i];
      bacc += gv;
    }
    if (!gbias.empty()) gbias[o] += bacc;
  }
}

#define FLOWSAN_INSTANTIATE(T)                                                                   \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,  \
                                  std::span<const T>, std::span<T>);                            \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,               \
                                         std::span<const T>, std::span<T>);                     \
  template void conv2d_backward_params<T>(const ConvGeometry&, std::span<const T>,              \
                                          std::span<const T>, std::span<T>, std::span<T>);      \
  template void upsample2x_forward<T>(int, int, int, std::span<const T>, std::span<T>);         \
  template void upsample2x_backward<T>(int, int, int, std::span<const T>, std::span<T>);        \
  template void dense_forward<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,  \
                                 std::span<const T>, std::span<T>);                             \
  template void dense_backward_input<T>(const DenseGeometry&, std::span<const T>,               \
                                        std::span<const T>, std::span<T>);                      \
  template void dense_backward_params<T>(const DenseGeometry&, std::span<const T>,              \
                                         std::span<const T>, std::span<T>, std::span<T>);

FLOWSAN_INSTANTIATE(float)
FLOWSAN_INSTANTIATE(double)

#undef FLOWSAN_INSTANTIATE

}  // namespace flowsan::kernels
