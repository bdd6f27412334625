#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "flowsan/autodiff.hpp"
#include "flowsan/data.hpp"
#include "flowsan/metrics.hpp"

namespace flowsan::testing {

template <class T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (T& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

// Values with |v| >= margin so kinks and clamps stay out of finite-difference reach.
template <class T>
Tensor<T> away_from_zero(Shape shape, std::mt19937_64& rng, double margin) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<T> t(std::move(shape));
  for (T& v : t.storage()) v = static_cast<T>(sign(rng) ? u(rng) : -u(rng));
  return t;
}

template <class T>
using GraphFn = std::function<Var(Tape<T>&, const std::vector<Var>&)>;

struct GradReport {
  double max_rel_error = 0;
  int probes = 0;
};

template <class T>
struct GradSettings {
  double step;
  // Gradients smaller than this are compared in absolute terms.
  double scale;
};

template <class T>
GradSettings<T> default_settings() {
  if constexpr (std::is_same_v<T, double>) {
    return {1e-4, 1e-3};
  } else {
    return {1e-2, 1e-1};
  }
}

// Central finite differences of <f(inputs), R> against reverse-mode gradients,
// where R is a fixed random projection. Each probe perturbs one random
// element of one random input; steps h and h/2 are combined by Richardson
// extrapolation.
template <class T>
GradReport check_gradients(const GraphFn<T>& f, const std::vector<Tensor<T>>& inputs, int probes,
                           std::uint64_t seed, GradSettings<T> settings = default_settings<T>()) {
  std::mt19937_64 rng(seed);
  Tensor<T> projection;
  auto scalar = [&](const std::vector<Tensor<T>>& xs) {
    Tape<T> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    const Tensor<T>& out = tape.value(f(tape, vars));
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * static_cast<double>(projection[i]);
    return s;
  };

  Tape<T> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  const Var out = f(tape, vars);
  projection = random_tensor<T>(tape.value(out).shape(), rng, 0.5, 1.5);
  const Var loss = ad::sum(tape, ad::mul(tape, out, tape.constant(projection)));
  tape.backward(loss);

  GradReport report;
  std::uniform_int_distribution<std::size_t> which(0, inputs.size() - 1);
  for (int p = 0; p < probes; ++p) {
    const std::size_t k = which(rng);
    std::uniform_int_distribution<std::size_t> elem(0, inputs[k].size() - 1);
    const std::size_t e = elem(rng);
    auto central = [&](double step) {
      std::vector<Tensor<T>> plus = inputs, minus = inputs;
      plus[k][e] = static_cast<T>(static_cast<double>(plus[k][e]) + step);
      minus[k][e] = static_cast<T>(static_cast<double>(minus[k][e]) - step);
      const double h = (static_cast<double>(plus[k][e]) - static_cast<double>(minus[k][e])) / 2.0;
      return (scalar(plus) - scalar(minus)) / (2.0 * h);
    };
    const double numeric = (4.0 * central(settings.step / 2.0) - central(settings.step)) / 3.0;
    const double analytic = static_cast<double>(tape.grad(vars[k])[e]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic), settings.scale});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(numeric - analytic) / denom);
    ++report.probes;
  }
  return report;
}

// ---- brute-force metric oracles ----

inline double auc_pair_oracle(const ScoreSet& s) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels[i] != 1) continue;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[j] != 0) continue;
      pairs += 1;
      if (s.scores[i] > s.scores[j]) wins += 1;
      if (s.scores[i] == s.scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Sweeps every candidate threshold (each distinct score and +inf) counting
// errors directly, then interpolates FPR linearly where FPR - FNR changes sign.
inline double eer_sweep_oracle(const ScoreSet& s) {
  std::vector<double> thresholds = s.scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());
  std::vector<double> fpr, fnr;
  for (double t : thresholds) {
    double fp = 0, fn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      if (s.labels[i] == 1) {
        pos += 1;
        if (s.scores[i] < t) fn += 1;
      } else {
        neg += 1;
        if (s.scores[i] >= t) fp += 1;
      }
    }
    fpr.push_back(fp / neg);
    fnr.push_back(fn / pos);
  }
  for (std::size_t k = 0; k + 1 < thresholds.size(); ++k) {
    const double a = fpr[k] - fnr[k];
    const double b = fpr[k + 1] - fnr[k + 1];
    if (a == 0) return fpr[k];
    if (a > 0 && b <= 0) return fpr[k] + (a / (a - b)) * (fpr[k + 1] - fpr[k]);
  }
  return fpr.back();
}

// Threshold: the (1 - fmr) quantile of impostor scores, linearly interpolated
// between order statistics; TMR counts genuine scores at or above it.
inline double tmr_sweep_oracle(const std::vector<double>& genuine, const std::vector<double>& impostor, double fmr) {
  const double m = static_cast<double>(impostor.size());
  const double level = 1.0 - std::max(fmr, 1.0 / m);
  const double pos = level * (m - 1);
  const auto rank = static_cast<std::size_t>(pos);
  std::vector<double> a = impostor, b = impostor;
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(rank), a.end());
  const double lo = a[rank];
  const std::size_t next = std::min(rank + 1, impostor.size() - 1);
  std::nth_element(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(next), b.end());
  const double threshold = lo + (pos - static_cast<double>(rank)) * (b[next] - lo);
  double accepted = 0;
  for (double g : genuine)
    if (g >= threshold) accepted += 1;
  return accepted / static_cast<double>(genuine.size());
}

// Random score set with both classes, optionally quantised to force ties.
inline ScoreSet random_score_set(std::mt19937_64& rng, std::size_t n, bool ties) {
  ScoreSet s;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const double shift = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i < 2 ? static_cast<int>(i) : static_cast<int>(coin(rng));
    double v = noise(rng) + (y == 1 ? shift : 0.0);
    if (ties) v = std::round(v * 2.0) / 2.0;
    s.scores.push_back(v);
    s.labels.push_back(y);
  }
  return s;
}

// Small dataset for fast unit tests.
inline GenerationSpec tiny_spec(std::uint64_t seed = 11, int size = 16) {
  GenerationSpec spec;
  spec.n_identities = 20;
  spec.samples_per_identity = 4;
  spec.height = size;
  spec.width = size;
  spec.seed = seed;
  return spec;
}

}  // namespace flowsan::testing
