#include "doctest.h"

#include <random>
#include <vector>

#include "flowsan/kernels.hpp"

using namespace flowsan;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <class T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <class T>
double tol() {
  return std::is_same_v<T, double> ? 1e-10 : 1e-4;
}

ConvGeometry random_geometry(std::mt19937_64& rng) {
  for (;;) {
    ConvGeometry g;
    g.batch = 1 + static_cast<int>(rng() % 3);
    g.in_channels = 1 + static_cast<int>(rng() % 4);
    g.out_channels = 1 + static_cast<int>(rng() % 4);
    g.kernel = 1 + static_cast<int>(rng() % 5);
    g.stride = 1 + static_cast<int>(rng() % 3);
    g.padding = static_cast<int>(rng() % 3);
    g.in_h = 1 + static_cast<int>(rng() % 11);
    g.in_w = 1 + static_cast<int>(rng() % 13);
    if (g.valid()) return g;
  }
}

}  // namespace

TEST_CASE_TEMPLATE("parallel conv kernels match the serial reference", T, float, double) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    CAPTURE(trial);
    const std::size_t nx = static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w;
    const std::size_t nw = static_cast<std::size_t>(g.out_channels) * g.in_channels * g.kernel * g.kernel;
    const std::size_t ny = static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h() * g.out_w();
    const auto x = random_vec<T>(nx, rng), w = random_vec<T>(nw, rng), b = random_vec<T>(g.out_channels, rng);
    const auto gy = random_vec<T>(ny, rng);

    std::vector<T> y1(ny), y2(ny);
    kernels::conv2d_forward<T>(g, x, w, b, y1);
    kernels::reference::conv2d_forward<T>(g, x, w, b, y2);
    CHECK(max_diff(y1, y2) <= tol<T>());

    // Backward kernels accumulate, so start both from the same non-zero buffer.
    auto gx1 = random_vec<T>(nx, rng);
    auto gx2 = gx1;
    kernels::conv2d_backward_input<T>(g, gy, w, gx1);
    kernels::reference::conv2d_backward_input<T>(g, gy, w, gx2);
    CHECK(max_diff(gx1, gx2) <= tol<T>());

    auto gw1 = random_vec<T>(nw, rng);
    auto gw2 = gw1;
    auto gb1 = random_vec<T>(g.out_channels, rng);
    auto gb2 = gb1;
    kernels::conv2d_backward_params<T>(g, gy, x, gw1, gb1);
    kernels::reference::conv2d_backward_params<T>(g, gy, x, gw2, gb2);
    CHECK(max_diff(gw1, gw2) <= tol<T>());
    CHECK(max_diff(gb1, gb2) <= tol<T>());
  }
}

TEST_CASE_TEMPLATE("parallel upsample and dense kernels match the reference", T, float, double) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int planes = 1 + static_cast<int>(rng() % 5), h = 1 + static_cast<int>(rng() % 6),
              w = 1 + static_cast<int>(rng() % 6);
    const auto x = random_vec<T>(static_cast<std::size_t>(planes) * h * w, rng);
    const auto gy = random_vec<T>(static_cast<std::size_t>(planes) * h * w * 4, rng);
    std::vector<T> y1(gy.size()), y2(gy.size()), gx1(x.size()), gx2(x.size());
    kernels::upsample2x_forward<T>(planes, h, w, x, y1);
    kernels::reference::upsample2x_forward<T>(planes, h, w, x, y2);
    CHECK(max_diff(y1, y2) == 0.0);
    kernels::upsample2x_backward<T>(planes, h, w, gy, gx1);
    kernels::reference::upsample2x_backward<T>(planes, h, w, gy, gx2);
    CHECK(max_diff(gx1, gx2) <= tol<T>());

    const DenseGeometry d{1 + static_cast<int>(rng() % 5), 1 + static_cast<int>(rng() % 9),
                          1 + static_cast<int>(rng() % 7)};
    const auto dx = random_vec<T>(static_cast<std::size_t>(d.batch) * d.in_features, rng);
    const auto dw = random_vec<T>(static_cast<std::size_t>(d.out_features) * d.in_features, rng);
    const auto db = random_vec<T>(static_cast<std::size_t>(d.out_features), rng);
    const auto dgy = random_vec<T>(static_cast<std::size_t>(d.batch) * d.out_features, rng);
    std::vector<T> dy1(dgy.size()), dy2(dgy.size());
    kernels::dense_forward<T>(d, dx, dw, db, dy1);
    kernels::reference::dense_forward<T>(d, dx, dw, db, dy2);
    CHECK(max_diff(dy1, dy2) <= tol<T>());
    std::vector<T> dgx1(dx.size()), dgx2(dx.size()), dgw1(dw.size()), dgw2(dw.size()), dgb1(db.size()),
        dgb2(db.size());
    kernels::dense_backward_input<T>(d, dgy, dw, dgx1);
    kernels::reference::dense_backward_input<T>(d, dgy, dw, dgx2);
    CHECK(max_diff(dgx1, dgx2) <= tol<T>());
    kernels::dense_backward_params<T>(d, dgy, dx, dgw1, dgb1);
    kernels::reference::dense_backward_params<T>(d, dgy, dx, dgw2, dgb2);
    CHECK(max_diff(dgw1, dgw2) <= tol<T>());
    CHECK(max_diff(dgb1, dgb2) <= tol<T>());
  }
}

TEST_CASE("conv results do not depend on the thread count") {
  std::mt19937_64 rng(9);
  ConvGeometry g{4, 8, 16, 16, 16, 3, 2, 1};
  const auto x = random_vec<float>(static_cast<std::size_t>(4) * 8 * 16 * 16, rng);
  const auto w = random_vec<float>(static_cast<std::size_t>(16) * 8 * 9, rng);
  const auto b = random_vec<float>(16, rng);
  const auto gy = random_vec<float>(static_cast<std::size_t>(4) * 16 * 8 * 8, rng);
  auto run = [&](int threads) {
    kernels::set_num_threads(threads);
    std::vector<float> y(gy.size()), gx(x.size()), gw(w.size()), gb(b.size());
    kernels::conv2d_forward<float>(g, x, w, b, y);
    kernels::conv2d_backward_input<float>(g, gy, w, gx);
    kernels::conv2d_backward_params<float>(g, gy, x, gw, gb);
    y.insert(y.end(), gx.begin(), gx.end());
    y.insert(y.end(), gw.begin(), gw.end());
    y.insert(y.end(), gb.begin(), gb.end());
    return y;
  };
  const int original = kernels::num_threads();
  const auto one = run(1);
  const auto three = run(3);
  kernels::set_num_threads(original);
  CHECK(one == three);
}
