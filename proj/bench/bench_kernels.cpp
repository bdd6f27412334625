#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "flowsan/kernels.hpp"

using namespace flowsan;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

// SAN encoder-sized convolution: batch 32, 16 -> 32 channels, 3x3 on 32x32.
ConvGeometry san_conv() {
  ConvGeometry g;
  g.batch = 32;
  g.in_channels = 16;
  g.in_h = 32;
  g.in_w = 32;
  g.out_channels = 32;
  g.kernel = 3;
  g.stride = 1;
  g.padding = 1;
  return g;
}

struct ConvBuffers {
  ConvGeometry g = san_conv();
  std::vector<float> x, w, b, y, gx, gw, gb;
  ConvBuffers()
      : x(filled(static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w, 1)),
        w(filled(static_cast<std::size_t>(g.out_channels) * g.in_channels * g.kernel * g.kernel, 2)),
        b(filled(static_cast<std::size_t>(g.out_channels), 3)),
        y(static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h() * g.out_w()),
        gx(x.size()),
        gw(w.size()),
        gb(b.size()) {}
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  ConvBuffers c;
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_forward<float>(c.g, c.x, c.w, c.b, c.y);
    } else {
      kernels::reference::conv2d_forward<float>(c.g, c.x, c.w, c.b, c.y);
    }
    benchmark::DoNotOptimize(c.y.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  ConvBuffers c;
  const std::vector<float> gy = filled(c.y.size(), 4);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_backward_input<float>(c.g, gy, c.w, c.gx);
      kernels::conv2d_backward_params<float>(c.g, gy, c.x, c.gw, c.gb);
    } else {
      kernels::reference::conv2d_backward_input<float>(c.g, gy, c.w, c.gx);
      kernels::reference::conv2d_backward_params<float>(c.g, gy, c.x, c.gw, c.gb);
    }
    benchmark::DoNotOptimize(c.gw.data());
  }
}

template <bool Parallel>
void BM_Dense(benchmark::State& state) {
  const DenseGeometry g{64, 512, 64};
  const auto x = filled(static_cast<std::size_t>(g.batch) * g.in_features, 5);
  const auto w = filled(static_cast<std::size_t>(g.out_features) * g.in_features, 6);
  const auto b = filled(static_cast<std::size_t>(g.out_features), 7);
  std::vector<float> y(static_cast<std::size_t>(g.batch) * g.out_features);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::dense_forward<float>(g, x, w, b, y);
    } else {
      kernels::reference::dense_forward<float>(g, x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Upsample(benchmark::State& state) {
  const int planes = 32 * 16, h = 16, w = 16;
  const auto x = filled(static_cast<std::size_t>(planes) * h * w, 8);
  std::vector<float> y(x.size() * 4);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::upsample2x_forward<float>(planes, h, w, x, y);
    } else {
      kernels::reference::upsample2x_forward<float>(planes, h, w, x, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Dense<false>)->Name("dense_forward/reference")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Dense<true>)->Name("dense_forward/parallel")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Upsample<false>)->Name("upsample/reference")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Upsample<true>)->Name("upsample/parallel")->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
