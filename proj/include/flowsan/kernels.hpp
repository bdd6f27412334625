#pragma once

// Layer kernels over batched [N,C,H,W] feature maps and [N,F] matrices.
//
// Two implementations share one interface:
//   flowsan::kernels             OpenMP-parallel, used by the autodiff tape.
//   flowsan::kernels::reference  plain serial loops, kept as the test oracle
//                                and benchmark baseline.
//
// Every parallel kernel assigns each output element to exactly one thread and
// sums in a fixed order, so results do not depend on the thread count.
// Backward kernels accumulate (+=) into their gradient outputs.

#include <span>

namespace flowsan {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;

  int out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  bool valid() const {
    return batch > 0 && in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 &&
           padding >= 0 && in_h + 2 * padding >= kernel && in_w + 2 * padding >= kernel;
  }
};

struct DenseGeometry {
  int batch = 1;
  int in_features = 1;
  int out_features = 1;
};

namespace kernels {

// Shared driver for the number of OpenMP threads; 0 keeps the runtime default.
void set_num_threads(int threads);
int num_threads();

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> gy, std::span<const T> w,
                           std::span<T> gx);
template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> gy, std::span<const T> x,
                            std::span<T> gw, std::span<T> gbias);

template <class T>
void upsample2x_forward(int planes, int h, int w, std::span<const T> x, std::span<T> y);
template <class T>
void upsample2x_backward(int planes, int h, int w, std::span<const T> gy, std::span<T> gx);

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);
template <class T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> gy, std::span<const T> w,
                          std::span<T> gx);
template <class T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> gy, std::span<const T> x,
                           std::span<T> gw, std::span<T> gbias);

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> gy, std::span<const T> w,
                           std::span<T> gx);
template <class T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> gy, std::span<const T> x,
                            std::span<T> gw, std::span<T> gbias);

template <class T>
void upsample2x_forward(int planes, int h, int w, std::span<const T> x, std::span<T> y);
template <class T>
void upsample2x_backward(int planes, int h, int w, std::span<const T> gy, std::span<T> gx);

template <class T>
void dense_forward(const DenseGeometry& g, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);
template <class T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> gy, std::span<const T> w,
                          std::span<T> gx);
template <class T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> gy, std::span<const T> x,
                           std::span<T> gw, std::span<T> gbias);

}  // namespace reference
}  // namespace kernels
}  // namespace flowsan
