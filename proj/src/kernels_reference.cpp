#include <cstddef>

#include "flowsan/kernels.hpp"

namespace flowsan::kernels::reference {

namespace {

std::size_t idx4(int n, int c, int y, int x, int C, int H, int W) {
  return ((static_cast<std::size_t>(n) * C + c) * H + y) * W + x;
}

}  // namespace

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int Ho = g.out_h(), Wo = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = bias.empty() ? T(0) : bias[co];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride + ky - g.padding;
                const int ix = ox * g.stride + kx - g.padding;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += w[idx4(co, ci, ky, kx, g.in_channels, k, k)] *
                       x[idx4(n, ci, iy, ix, g.in_channels, g.in_h, g.in_w)];
              }
          y[idx4(n, co, oy, ox, g.out_channels, Ho, Wo)] = acc;
        }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> gy, std::span<const T> w,
                           std::span<T> gx) {
  const int Ho = g.out_h(), Wo = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int iy = 0; iy < g.in_h; ++iy)
        for (int ix = 0; ix < g.in_w; ++ix) {
          T acc = 0;
          for (int co = 0; co < g.out_channels; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int ty = iy + g.padding - ky;
                const int tx = ix + g.padding - kx;
                if (ty < 0 || tx < 0 || ty % g.stride != 0 || tx % g.stride != 0) continue;
                const int oy = ty / g.stride, ox = tx / g.stride;
                if (oy >= Ho || ox >= Wo) continue;
                acc += w[idx4(co, ci, ky, kx, g.in_channels, k, k)] *
                       gy[idx4(n, co, oy, ox, g.out_channels, Ho, Wo)];
              }
          gx[idx4(n, ci, iy, ix, g.in_channels, g.in_h, g.in_w)] += acc;
        }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> gy, std::span<const T> x,
                            std::span<T> gw, std::span<T> gbias) {
  const int Ho = g.out_h(), Wo = g.out_w(), k = g.kernel;
  for (int co = 0; co < g.out_channels; ++co) {
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T acc = 0;
          for (int n = 0; n < g.batch; ++n)
            for (int oy = 0; oy < Ho; ++oy)
              for (int ox = 0; ox < Wo; ++ox) {
                const int iy = oy * g.stride + ky - g.padding;
                const int ix = ox * g.stride + kx - g.padding;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += gy[idx4(n, co, oy, ox, g.out_channels, Ho, Wo)] *
                       x[idx4(n, ci, iy, ix, g.in_channels, g.in_h, g.in_w)];
              }
          gw[idx4(co, ci, ky, kx, g.in_channels, k, k)] += acc;
        }
    if (!gbias.empty()) {
      T acc = 0;
      for (int n = 0; n < g.batch; ++n)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) acc += gy[idx4(n, co, oy, ox, g.out_channels, Ho, Wo)];
      gbias[co] += acc;
    }
  }
}

template <class T>
void upsample2x_forward(int planes, int h, int w, std::span<const T> x, std::span<T> y) {
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < 2 * h; ++oy)
      for (int ox = 0; ox < 2 * w; ++ox)
        y[(static_cast<std::size_t>(p) * 2 * h + oy) * 2 * w + ox] =
            x[(static_cast<std::size_t>(p) * h + oy / 2) * w + ox / 2];
}

template <class T>
void upsample2x_backward(int planes, int h, int w, std::span<const T> gy, std::span<T> gx) {
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < 2 * h; ++oy)
      for (int ox = 0; ox < 2 * w; ++ox)
        gx[(static_cast<std::size_t>(p) * h + oy / 2) * w + ox / 2] +=
            gy[(static_cast<std::size_t>(p) * 2 * h + oy) * 2 * w + ox];
}

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_features; ++o) {
      T acc = bias.empty() ? T(0) : bias[o];
      for (int i = 0; i < g.in_features; ++i)
        acc += w[static_cast<std::size_t>(o) * g.in_features + i] *
               x[static_cast<std::size_t>(n) * g.in_features + i];
      y[static_cast<std::size_t>(n) * g.out_features + o] = acc;
    }
}

template <class T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> gy, std::span<const T> w,
                          std::span<T> gx) {
  for (int n = 0; n < g.batch; ++n)
    for (int i = 0; i < g.in_features; ++i) {
      T acc = 0;
      for (int o = 0; o < g.out_features; ++o)
        acc += w[static_cast<std::size_t>(o) * g.in_features + i] *
               gy[static_cast<std::size_t>(n) * g.out_features + o];
      gx[static_cast<std::size_t>(n) * g.in_features + i] += acc;
    }
}

template <class T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> gy, std::span<const T> x,
                           std::span<T> gw, std::span<T> gbias) {
  for (int o = 0; o < g.out_features; ++o) {
    for (int i = 0; i < g.in_features; ++i) {
      T acc = 0;
      for (int n = 0; n < g.batch; ++n)
        acc += gy[static_cast<std::size_t>(n) * g.out_features + o] *
               x[static_cast<std::size_t>(n) * g.in_features + i];
      gw[static_cast<std::size_t>(o) * g.in_features + i] += acc;
    }
    if (!gbias.empty()) {
      T acc = 0;
      for (int n = 0; n < g.batch; ++n) acc += gy[static_cast<std::size_t>(n) * g.out_features + o];
      gbias[o] += acc;
    }
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

}  // namespace flowsan::kernels::reference
