#pragma once

#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "flowsan/autodiff.hpp"

namespace flowsan {

enum class InitScheme { he, xavier };

// Centered uniform init scaled by fan-in (He) or fan-in + fan-out (Xavier).
template <class T>
Tensor<T> init_uniform(Shape shape, int fan_in, int fan_out, InitScheme scheme, std::mt19937_64& rng) {
  const double bound = scheme == InitScheme::he ? std::sqrt(6.0 / fan_in)
                                                : std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (T& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

// Non-const parameters join the gradient graph; const ones enter frozen.
template <class T, class P>
Var bind_param(Tape<T>& tape, P& p) {
  if constexpr (std::is_const_v<P>) {
    return tape.frozen(p);
  } else {
    return tape.parameter(p);
  }
}

template <class T>
struct Conv2dLayer {
  Parameter<T> weight;
  Parameter<T> bias;
  int stride = 1;
  int padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int in_ch, int out_ch, int kernel, int stride_, InitScheme scheme,
              std::mt19937_64& rng)
      : weight(name + ".weight",
               init_uniform<T>({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel,
                               out_ch * kernel * kernel, scheme, rng)),
        bias(name + ".bias", Tensor<T>({out_ch})),
        stride(stride_),
        padding(kernel / 2) {}

  Var operator()(Tape<T>& tape, Var x) { return apply(*this, tape, x); }
  Var operator()(Tape<T>& tape, Var x) const { return apply(*this, tape, x); }

  template <class Self>
  static Var apply(Self& self, Tape<T>& tape, Var x) {
    return ad::conv2d(tape, x, bind_param(tape, self.weight), bind_param(tape, self.bias), self.stride,
                      self.padding);
  }
};

template <class T>
struct DenseLayer {
  Parameter<T> weight;
  Parameter<T> bias;

  DenseLayer() = default;
  DenseLayer(const std::string& name, int in_features, int out_features, InitScheme scheme,
             std::mt19937_64& rng)
      : weight(name + ".weight",
               init_uniform<T>({out_features, in_features}, in_features, out_features, scheme, rng)),
        bias(name + ".bias", Tensor<T>({out_features})) {}

  Var operator()(Tape<T>& tape, Var x) { return apply(*this, tape, x); }
  Var operator()(Tape<T>& tape, Var x) const { return apply(*this, tape, x); }

  template <class Self>
  static Var apply(Self& self, Tape<T>& tape, Var x) {
    return ad::dense(tape, x, bind_param(tape, self.weight), bind_param(tape, self.bias));
  }
};

}  // namespace flowsan
