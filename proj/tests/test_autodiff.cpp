#include "doctest.h"

#include <algorithm>

#include "flowsan/autodiff.hpp"
#include "flowsan/layers.hpp"
#include "flowsan/optimizer.hpp"
#include "support.hpp"

using namespace flowsan;
using namespace flowsan::testing;

namespace {

constexpr int kProbes = 120;

template <class T>
double tolerance() {
  return std::is_same_v<T, double> ? 1e-6 : 1e-3;
}

template <class T>
void expect_gradients(const GraphFn<T>& f, const std::vector<Tensor<T>>& inputs, std::uint64_t seed) {
  const GradReport r = check_gradients<T>(f, inputs, kProbes, seed);
  CHECK(r.probes == kProbes);
  CHECK(r.max_rel_error <= tolerance<T>());
}

}  // namespace

TEST_CASE_TEMPLATE("conv2d gradients over stride and padding", T, float, double) {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2}) {
    for (int kernel : {1, 3}) {
      CAPTURE(stride);
      CAPTURE(kernel);
      const int pad = kernel / 2;
      GraphFn<T> f = [&](Tape<T>& t, const std::vector<Var>& v) { return ad::conv2d(t, v[0], v[1], v[2], stride, pad); };
      expect_gradients<T>(f,
                          {random_tensor<T>({2, 3, 7, 6}, rng), random_tensor<T>({4, 3, kernel, kernel}, rng),
                           random_tensor<T>({4}, rng)},
                          10 + static_cast<std::uint64_t>(stride * 3 + kernel));
    }
  }
}

TEST_CASE_TEMPLATE("upsample, sigmoid, add, mul, sum gradients", T, float, double) {
  std::mt19937_64 rng(2);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::upsample2x(t, v[0]); },
                      {random_tensor<T>({2, 3, 4, 5}, rng)}, 21);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::sigmoid(t, v[0]); },
                      {random_tensor<T>({3, 7}, rng, -3, 3)}, 22);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::add(t, v[0], v[1]); },
                      {random_tensor<T>({4, 5}, rng), random_tensor<T>({4, 5}, rng)}, 23);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::mul(t, v[0], v[1]); },
                      {random_tensor<T>({4, 5}, rng), random_tensor<T>({4, 5}, rng)}, 24);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::sum(t, v[0]); },
                      {random_tensor<T>({6, 2}, rng)}, 25);
}

TEST_CASE_TEMPLATE("leaky relu gradients away from the kink", T, float, double) {
  std::mt19937_64 rng(3);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::leaky_relu(t, v[0], T(0.2)); },
                      {away_from_zero<T>({5, 8}, rng, 0.05)}, 31);
}

TEST_CASE_TEMPLATE("shape plumbing gradients", T, float, double) {
  std::mt19937_64 rng(4);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::concat_channels(t, v[0], v[1]); },
                      {random_tensor<T>({2, 1, 4, 4}, rng), random_tensor<T>({2, 3, 4, 4}, rng)}, 41);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::mean_pool(t, v[0]); },
                      {random_tensor<T>({2, 3, 5, 4}, rng)}, 42);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::flatten(t, v[0]); },
                      {random_tensor<T>({3, 2, 2, 3}, rng)}, 43);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::dense(t, v[0], v[1], v[2]); },
                      {random_tensor<T>({4, 6}, rng), random_tensor<T>({3, 6}, rng), random_tensor<T>({3}, rng)}, 44);
}

TEST_CASE_TEMPLATE("loss primitive gradients", T, float, double) {
  std::mt19937_64 rng(5);
  expect_gradients<T>(
      [](Tape<T>& t, const std::vector<Var>& v) { return ad::binary_cross_entropy(t, v[0], v[1]); },
      {random_tensor<T>({2, 1, 4, 4}, rng, 0.0, 1.0), random_tensor<T>({2, 1, 4, 4}, rng, 0.1, 0.9)}, 51);
  expect_gradients<T>([](Tape<T>& t, const std::vector<Var>& v) { return ad::squared_distance(t, v[0], v[1]); },
                      {random_tensor<T>({3, 5}, rng), random_tensor<T>({3, 5}, rng)}, 52);
  expect_gradients<T>(
      [](Tape<T>& t, const std::vector<Var>& v) { return ad::softmax_cross_entropy(t, v[0], {0, 2, 1, 2}); },
      {random_tensor<T>({4, 3}, rng, -2, 2)}, 53);
  expect_gradients<T>(
      [](Tape<T>& t, const std::vector<Var>& v) {
        return ad::weighted_sum(t, {ad::sum(t, v[0]), ad::sum(t, v[1]), ad::sum(t, v[2])}, {T(0.5), T(2), T(3)});
      },
      {random_tensor<T>({3}, rng), random_tensor<T>({2}, rng), random_tensor<T>({4}, rng)}, 54);
}

TEST_CASE("weighted_sum routes gradients when the first term is constant") {
  Tape<double> tape;
  const Var c = tape.constant(Tensor<double>({1}, 3.0));
  const Var x = tape.variable(Tensor<double>({1}, 2.0));
  const Var y = ad::weighted_sum(tape, {c, x}, {1.0, 4.0});
  tape.backward(y);
  CHECK(tape.value(y)[0] == doctest::Approx(11.0));
  CHECK(tape.grad(x)[0] == doctest::Approx(4.0));
}

TEST_CASE("binary cross-entropy gradient is zero where the probability is clamped") {
  Tape<double> tape;
  const Var target = tape.constant(Tensor<double>({2}, 1.0));
  Tensor<double> q({2});
  q[0] = 0.0;
  q[1] = 0.5;
  const Var prob = tape.variable(q);
  tape.backward(ad::binary_cross_entropy(tape, target, prob));
  CHECK(tape.grad(prob)[0] == 0.0);
  CHECK(tape.grad(prob)[1] == doctest::Approx(-1.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape<double> tape;
  const Var x = tape.variable(Tensor<double>({3}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), UsageError);
}

TEST_CASE("frozen parameters receive no gradient") {
  std::mt19937_64 rng(6);
  const Conv2dLayer<double> layer("frozen", 1, 2, 3, 1, InitScheme::he, rng);
  Tape<double> tape;
  const Var x = tape.variable(random_tensor<double>({1, 1, 4, 4}, rng));
  tape.backward(ad::sum(tape, layer(tape, x)));
  CHECK(layer.weight.grad.size() == layer.weight.value.size());
  for (double g : layer.weight.grad.values()) CHECK(g == 0.0);
  double total = 0;
  for (double g : tape.grad(x).values()) total += std::abs(g);
  CHECK(total > 0);
}

TEST_CASE("layer primitive examples") {
  Tape<double> tape;
  std::mt19937_64 rng(7);
  const Tensor<double> x = random_tensor<double>({1, 3, 5, 4}, rng);

  Tensor<double> identity({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) identity[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  const Var same = ad::conv2d(tape, tape.constant(x), tape.constant(identity), tape.constant(Tensor<double>({3})), 1, 0);
  CHECK(std::ranges::equal(tape.value(same).values(), x.values()));

  const Var zero = ad::conv2d(tape, tape.constant(x), tape.constant(Tensor<double>({2, 3, 3, 3})),
                              tape.constant(Tensor<double>({2})), 1, 1);
  for (double v : tape.value(zero).values()) CHECK(v == 0.0);

  // Brute-force cross-correlation of a 1x4x4 input with 2x1x3x3 kernels.
  const Tensor<double> img = random_tensor<double>({1, 1, 4, 4}, rng);
  const Tensor<double> k = random_tensor<double>({2, 1, 3, 3}, rng);
  const Tensor<double> kb = random_tensor<double>({2}, rng);
  const Tensor<double>& y = tape.value(ad::conv2d(tape, tape.constant(img), tape.constant(k), tape.constant(kb), 1, 1));
  for (int o = 0; o < 2; ++o) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double acc = kb[static_cast<std::size_t>(o)];
        for (int di = 0; di < 3; ++di) {
          for (int dj = 0; dj < 3; ++dj) {
            const int r = i + di - 1, c = j + dj - 1;
            if (r < 0 || r >= 4 || c < 0 || c >= 4) continue;
            acc += img[static_cast<std::size_t>(r * 4 + c)] * k[static_cast<std::size_t>(o * 9 + di * 3 + dj)];
          }
        }
        CHECK(std::abs(y[static_cast<std::size_t>(o * 16 + i * 4 + j)] - acc) <= 1e-10);
      }
    }
  }

  const Tensor<double> up_in = random_tensor<double>({1, 2, 3, 3}, rng);
  const Tensor<double>& up = tape.value(ad::upsample2x(tape, tape.constant(up_in)));
  REQUIRE(up.shape() == Shape{1, 2, 6, 6});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        CHECK(up[static_cast<std::size_t>(c * 36 + i * 6 + j)] ==
              up_in[static_cast<std::size_t>(c * 9 + (i / 2) * 3 + j / 2)]);

  CHECK(tape.value(ad::sigmoid(tape, tape.constant(Tensor<double>({1}, 0.0))))[0] == 0.5);
  CHECK(tape.value(ad::leaky_relu(tape, tape.constant(Tensor<double>({1}, -1.0)), 0.01))[0] == doctest::Approx(-0.01));

  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[static_cast<std::size_t>(i * 4)] = 1.0;
  const Tensor<double> row = random_tensor<double>({2, 3}, rng);
  const Var d = ad::dense(tape, tape.constant(row), tape.constant(eye), tape.constant(Tensor<double>({3})));
  CHECK(std::ranges::equal(tape.value(d).values(), row.values()));

  CHECK_THROWS_AS(ad::add(tape, tape.constant(Tensor<double>({2})), tape.constant(Tensor<double>({3}))), ShapeError);
}

TEST_CASE("simple analytic gradients") {
  Tape<double> tape;
  Tensor<double> p({2});
  p[0] = 1;
  p[1] = 2;
  const Var v = tape.variable(p);
  tape.backward(ad::sum(tape, v));
  CHECK(tape.grad(v)[0] == 1.0);
  CHECK(tape.grad(v)[1] == 1.0);

  Tape<double> sq;
  const Var w = sq.variable(p);
  sq.backward(ad::sum(sq, ad::mul(sq, w, w)));
  CHECK(sq.grad(w)[0] == 2.0);
  CHECK(sq.grad(w)[1] == 4.0);
}

TEST_CASE("adam update examples") {
  Parameter<double> a("a", Tensor<double>({1}, 3.0));
  Adam<double> zero_grad({&a}, AdamConfig{0.1});
  zero_grad.step();
  CHECK(a.value[0] == 3.0);
  CHECK(zero_grad.steps() == 1);

  Parameter<double> b("b", Tensor<double>({1}, 3.0));
  Adam<double> opt({&b}, AdamConfig{0.1});
  b.grad[0] = 1.0;
  opt.step();
  CHECK(b.value[0] == doctest::Approx(2.9).epsilon(1e-6));
  CHECK(b.grad[0] == 0.0);

  std::mt19937_64 rng(8);
  Parameter<float> c("c", random_tensor<float>({4, 3}, rng)), d("d", c.value);
  const Tensor<float> g = random_tensor<float>({4, 3}, rng);
  Adam<float> oc({&c}, AdamConfig{}), od({&d}, AdamConfig{});
  for (int i = 0; i < 3; ++i) {
    c.grad = g;
    d.grad = g;
    oc.step();
    od.step();
  }
  CHECK(std::ranges::equal(c.value.values(), d.value.values()));
  CHECK(oc.first_moments()[0].shape() == c.value.shape());
}
