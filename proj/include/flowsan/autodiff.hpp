#pragma once

// Tape-based reverse-mode differentiation over the small layer set the models
// need. A Tape records every forward op together with a closure that pushes
// the output gradient back to the op's inputs; Tape::backward replays the
// closures in reverse order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "flowsan/error.hpp"
#include "flowsan/kernels.hpp"
#include "flowsan/tensor.hpp"

namespace flowsan {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  // Leaf that receives a gradient readable through grad().
  Var variable(Tensor<T> value) { return push(std::move(value), true, {}); }

  // Leaf whose gradient is accumulated into p.grad on backward().
  Var parameter(Parameter<T>& p) {
    Var v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  // Frozen weights enter as constants: no gradient is ever written to them.
  Var frozen(const Parameter<T>& p) { return constant(p.value); }

  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of an input, valid only during backward().
  Tensor<T>& grad_buffer(Var v) { return nodes_[v.id].grad; }
  const Tensor<T>& self_grad(int id) const { return nodes_[id].grad; }

  void backward(Var loss) {
    const Tensor<T>& lv = value(loss);
    if (lv.size() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(lv.shape()));
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad = Tensor<T>(n.value.shape());
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        T* dst = n.param->grad.data();
        const T* src = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += src[i];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr, std::move(fn)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

namespace ad {

// Probability clamp used inside every binary cross-entropy.
inline constexpr double kProbEpsilon = 1e-7;

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride, int padding) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(b);
  if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1) {
    throw ShapeError("conv2d expects x[N,C,H,W], w[Co,Ci,k,k], b[Co]");
  }
  if (wv.dim(1) != xv.dim(1) || wv.dim(0) != bv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d channel mismatch: x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()) + " b" + shape_str(bv.shape()));
  }
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), stride, padding};
  if (!g.valid() || g.out_h() <= 0 || g.out_w() <= 0) {
    throw ShapeError("conv2d geometry produces empty output for input " + shape_str(xv.shape()));
  }
  Tensor<T> out({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward<T>(g, xv.values(), wv.values(), bv.values(), out.values());
  return tape.record(std::move(out), {x, w, b}, [x, w, b, g](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    if (t.requires_grad(x)) {
      kernels::conv2d_backward_input<T>(g, gy.values(), t.value(w).values(),
                                        t.grad_buffer(x).values());
    }
    if (t.requires_grad(w) || t.requires_grad(b)) {
      // Params are leaves; a non-requiring side gets a scratch buffer.
      Tensor<T> scratch_w, scratch_b;
      std::span<T> gw, gb;
      if (t.requires_grad(w)) {
        gw = t.grad_buffer(w).values();
      } else {
        scratch_w = Tensor<T>(t.value(w).shape());
        gw = scratch_w.values();
      }
      if (t.requires_grad(b)) {
        gb = t.grad_buffer(b).values();
      } else {
        scratch_b = Tensor<T>(t.value(b).shape());
        gb = scratch_b.values();
      }
      kernels::conv2d_backward_params<T>(g, gy.values(), t.value(x).values(), gw, gb);
    }
  });
}

template <class T>
Var upsample2x(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 4) throw ShapeError("upsample2x expects [N,C,H,W]");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor<T> out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
  kernels::upsample2x_forward<T>(planes, h, w, xv.values(), out.values());
  return tape.record(std::move(out), {x}, [x, planes, h, w](Tape<T>& t, int self) {
    kernels::upsample2x_backward<T>(planes, h, w, t.self_grad(self).values(),
                                    t.grad_buffer(x).values());
  });
}

template <class T>
Var leaky_relu(Tape<T>& tape, Var x, T alpha) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  const std::size_t n = xv.size();
  const T* in = xv.data();
  T* o = out.data();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > T(0) ? in[i] : alpha * in[i];
  return tape.record(std::move(out), {x}, [x, alpha](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    const T* in = t.value(x).data();
    const T* g = gy.data();
    T* gx = t.grad_buffer(x).data();
    const std::size_t n = gy.size();
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) gx[i] += in[i] > T(0) ? g[i] : alpha * g[i];
  });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    const Tensor<T>& y = t.value(Var{self});
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor<T>& g = t.grad_buffer(v);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same_shape(av, bv, "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    if (t.requires_grad(a)) {
      Tensor<T>& g = t.grad_buffer(a);
      const Tensor<T>& other = t.value(b);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * other[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& g = t.grad_buffer(b);
      const Tensor<T>& other = t.value(a);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * other[i];
    }
  });
}

template <class T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T acc = 0;
  for (T v : xv.values()) acc += v;
  return tape.record(Tensor<T>({1}, acc), {x}, [x](Tape<T>& t, int self) {
    const T gy = t.self_grad(self)[0];
    Tensor<T>& g = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy;
  });
}

// Concatenate [N,Ca,H,W] and [N,Cb,H,W] along channels.
template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  const int N = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor<T> out({N, ca + cb, av.dim(2), av.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(av.data() + n * ca * plane, ca * plane, out.data() + n * (ca + cb) * plane);
    std::copy_n(bv.data() + n * cb * plane, cb * plane,
                out.data() + (n * (ca + cb) + ca) * plane);
  }
  return tape.record(std::move(out), {a, b}, [a, b, N, ca, cb, plane](Tape<T>& t, int self) {
    const T* gy = t.self_grad(self).data();
    if (t.requires_grad(a)) {
      T* g = t.grad_buffer(a).data();
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < ca * plane; ++i) g[n * ca * plane + i] += gy[n * (ca + cb) * plane + i];
    }
    if (t.requires_grad(b)) {
      T* g = t.grad_buffer(b).data();
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < cb * plane; ++i)
          g[n * cb * plane + i] += gy[(n * (ca + cb) + ca) * plane + i];
    }
  });
}

// [N,C,H,W] -> [N,C] spatial mean.
template <class T>
Var mean_pool(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 4) throw ShapeError("mean_pool expects [N,C,H,W]");
  const int N = xv.dim(0), C = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out({N, C});
  for (int p = 0; p < N * C; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i];
    out[p] = acc / static_cast<T>(plane);
  }
  return tape.record(std::move(out), {x}, [x, plane](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    Tensor<T>& g = t.grad_buffer(x);
    for (std::size_t p = 0; p < gy.size(); ++p) {
      const T v = gy[p] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += v;
    }
  });
}

// [N,...] -> [N,F].
template <class T>
Var flatten(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  const int N = xv.dim(0);
  const int F = static_cast<int>(xv.size() / static_cast<std::size_t>(N));
  return tape.record(xv.reshaped({N, F}), {x}, [x](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    Tensor<T>& g = t.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
  });
}

// y[N,O] = x[N,I] W^T + b, W stored [O,I].
template <class T>
Var dense(Tape<T>& tape, Var x, Var w, Var b) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || wv.dim(1) != xv.dim(1) ||
      wv.dim(0) != bv.dim(0)) {
    throw ShapeError("dense mismatch: x" + shape_str(xv.shape()) + " w" + shape_str(wv.shape()) +
                     " b" + shape_str(bv.shape()));
  }
  DenseGeometry g{xv.dim(0), xv.dim(1), wv.dim(0)};
  Tensor<T> out({g.batch, g.out_features});
  kernels::dense_forward<T>(g, xv.values(), wv.values(), bv.values(), out.values());
  return tape.record(std::move(out), {x, w, b}, [x, w, b, g](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.self_grad(self);
    if (t.requires_grad(x)) {
      kernels::dense_backward_input<T>(g, gy.values(), t.value(w).values(),
                                       t.grad_buffer(x).values());
    }
    if (t.requires_grad(w) || t.requires_grad(b)) {
      Tensor<T> scratch_w, scratch_b;
      std::span<T> gw, gb;
      if (t.requires_grad(w)) {
        gw = t.grad_buffer(w).values();
      } else {
        scratch_w = Tensor<T>(t.value(w).shape());
        gw = scratch_w.values();
      }
      if (t.requires_grad(b)) {
        gb = t.grad_buffer(b).values();
      } else {
        scratch_b = Tensor<T>(t.value(b).shape());
        gb = scratch_b.values();
      }
      kernels::dense_backward_params<T>(g, gy.values(), t.value(x).values(), gw, gb);
    }
  });
}

// Mean over all elements of H(target, clamp(prob)).
template <class T>
Var binary_cross_entropy(Tape<T>& tape, Var target, Var prob) {
  const Tensor<T>& pv = tape.value(target);
  const Tensor<T>& qv = tape.value(prob);
  require_same_shape(pv, qv, "binary_cross_entropy");
  const T eps = static_cast<T>(kProbEpsilon);
  const std::size_t n = qv.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(qv[i], eps, T(1) - eps);
    acc += -(pv[i] * std::log(q) + (T(1) - pv[i]) * std::log(T(1) - q));
  }
  const T mean = static_cast<T>(acc / static_cast<double>(n));
  return tape.record(Tensor<T>({1}, mean), {target, prob}, [target, prob, eps](Tape<T>& t, int self) {
    const T gy = t.self_grad(self)[0];
    const Tensor<T>& pv = t.value(target);
    const Tensor<T>& qv = t.value(prob);
    const T scale = gy / static_cast<T>(qv.size());
    if (t.requires_grad(prob)) {
      Tensor<T>& g = t.grad_buffer(prob);
      for (std::size_t i = 0; i < qv.size(); ++i) {
        const T q = qv[i];
        if (q < eps || q > T(1) - eps) continue;  // clamped: flat
        g[i] += scale * (-pv[i] / q + (T(1) - pv[i]) / (T(1) - q));
      }
    }
    if (t.requires_grad(target)) {
      Tensor<T>& g = t.grad_buffer(target);
      for (std::size_t i = 0; i < qv.size(); ++i) {
        const T q = std::clamp(qv[i], eps, T(1) - eps);
        g[i] += scale * (std::log(T(1) - q) - std::log(q));
      }
    }
  });
}

// Batch mean of per-row squared L2 distance between a[N,...] and b[N,...].
template <class T>
Var squared_distance(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same_shape(av, bv, "squared_distance");
  const int N = av.dim(0);
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const T mean = static_cast<T>(acc / N);
  return tape.record(Tensor<T>({1}, mean), {a, b}, [a, b, N](Tape<T>& t, int self) {
    const T scale = T(2) * t.self_grad(self)[0] / static_cast<T>(N);
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& g = t.grad_buffer(a);
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += scale * (av[i] - bv[i]);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& g = t.grad_buffer(b);
      for (std::size_t i = 0; i < av.size(); ++i) g[i] -= scale * (av[i] - bv[i]);
    }
  });
}

// Batch mean of -log softmax(logits)[label].
template <class T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::vector<int> labels) {
  const Tensor<T>& lv = tape.value(logits);
  if (lv.rank() != 2 || static_cast<std::size_t>(lv.dim(0)) != labels.size()) {
    throw ShapeError("softmax_cross_entropy expects logits[N,K] with N labels");
  }
  const int N = lv.dim(0), K = lv.dim(1);
  Tensor<T> probs({N, K});
  double acc = 0;
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) throw ShapeError("class label out of range");
    const T* row = lv.data() + static_cast<std::size_t>(n) * K;
    const T mx = *std::max_element(row, row + K);
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
    for (int k = 0; k < K; ++k) probs[n * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - mx)) / z);
    acc += -(static_cast<double>(row[labels[n]] - mx) - std::log(z));
  }
  const T mean = static_cast<T>(acc / N);
  return tape.record(Tensor<T>({1}, mean), {logits},
                     [logits, probs = std::move(probs), labels = std::move(labels), N, K](Tape<T>& t, int self) {
                       const T scale = t.self_grad(self)[0] / static_cast<T>(N);
                       Tensor<T>& g = t.grad_buffer(logits);
                       for (int n = 0; n < N; ++n)
                         for (int k = 0; k < K; ++k)
                           g[n * K + k] += scale * (probs[n * K + k] - (k == labels[n] ? T(1) : T(0)));
                     });
}

// Sum_i weights[i] * terms[i] over scalar terms.
template <class T>
Var weighted_sum(Tape<T>& tape, const std::vector<Var>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    throw ShapeError("weighted_sum needs one weight per term");
  }
  T acc = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (tape.value(terms[i]).size() != 1) throw ShapeError("weighted_sum terms must be scalars");
    acc += weights[i] * tape.value(terms[i])[0];
  }
  // record() takes an initializer_list; the closure routes gradients to every term.
  Var anchor = terms.front();
  for (Var v : terms) {
    if (tape.requires_grad(v)) anchor = v;
  }
  return tape.record(Tensor<T>({1}, acc), {anchor}, [terms, weights](Tape<T>& t, int self) {
    const T gy = t.self_grad(self)[0];
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (t.requires_grad(terms[i])) t.grad_buffer(terms[i])[0] += weights[i] * gy;
    }
  });
}

}  // namespace ad
}  // namespace flowsan
