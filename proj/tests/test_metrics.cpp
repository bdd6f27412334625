#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "flowsan/log.hpp"
#include "flowsan/metrics.hpp"
#include "support.hpp"

using namespace flowsan;
using namespace flowsan::testing;

namespace {

ScoreSet make_set(std::vector<double> scores, std::vector<int> labels) { return {std::move(scores), std::move(labels)}; }

// Silences warnings for the lifetime of the guard and counts them.
struct CountWarnings {
  int count = 0;
  LogSink previous;
  CountWarnings() {
    previous = set_log_sink([this](LogLevel level, const std::string&) { count += level == LogLevel::warning; });
  }
  ~CountWarnings() { set_log_sink(previous); }
};

}  // namespace

TEST_CASE("AUC examples") {
  CHECK(roc_auc(make_set({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0})) == 1.0);
  CHECK(roc_auc(make_set({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0})) == 0.5);
  CHECK(roc_auc(make_set({0.1, 0.2, 0.9}, {1, 1, 0})) == 0.0);
  CHECK_THROWS_AS(roc_auc(make_set({0.1, 0.2}, {1, 1})), DegenerateInputError);
  CHECK_THROWS_AS(roc_auc(make_set({0.1, 0.2}, {1})), ShapeError);
}

TEST_CASE("AUC equals the pair-counting oracle exactly") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const ScoreSet s = random_score_set(rng, 20 + static_cast<std::size_t>(trial % 60), trial % 2 == 0);
    CHECK(roc_auc(s) == auc_pair_oracle(s));
  }
}

TEST_CASE("AUC is invariant under strictly monotone transforms") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    ScoreSet s = random_score_set(rng, 60, trial % 3 == 0);
    const double base = roc_auc(s);
    ScoreSet e = s, a = s;
    for (double& v : e.scores) v = std::exp(v);
    for (double& v : a.scores) v = 3.0 * v - 7.0;
    CHECK(roc_auc(e) == base);
    CHECK(roc_auc(a) == base);
  }
}

TEST_CASE("EER examples") {
  CHECK(eer(make_set({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0})) == 0.0);
  CHECK_THROWS_AS(eer(make_set({0.1, 0.2}, {0, 0})), DegenerateInputError);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::bernoulli_distribution coin(0.5);
  ScoreSet s;
  for (int i = 0; i < 1000; ++i) {
    s.scores.push_back(n(rng));
    s.labels.push_back(coin(rng));
  }
  CHECK(std::abs(eer(s) - 0.5) <= 0.05);
}

TEST_CASE("EER matches the threshold-sweep oracle") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const ScoreSet s = random_score_set(rng, 50, trial % 2 == 1);
    CHECK(std::abs(eer(s) - eer_sweep_oracle(s)) <= 1e-9);
  }
}

TEST_CASE("EER is symmetric under relabeling and negation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const ScoreSet s = random_score_set(rng, 40, trial % 2 == 0);
    ScoreSet flipped = s;
    for (double& v : flipped.scores) v = -v;
    for (int& y : flipped.labels) y = 1 - y;
    CHECK(std::abs(eer(flipped) - eer(s)) <= 1e-12);
  }
}

TEST_CASE("EER and AUC stay in the unit interval") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const ScoreSet s = random_score_set(rng, 30, trial % 2 == 0);
    CHECK(roc_auc(s) >= 0.0);
    CHECK(roc_auc(s) <= 1.0);
    CHECK(eer(s) >= 0.0);
    CHECK(eer(s) <= 1.0);
  }
}

TEST_CASE("TMR examples") {
  const std::vector<double> genuine(50, 0.9), impostor(500, 0.1);
  CHECK(tmr_at_fmr(genuine, impostor, 0.01).tmr == 1.0);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  std::vector<double> g(40000), im(40000);
  for (double& v : g) v = n(rng);
  for (double& v : im) v = n(rng);
  CHECK(std::abs(tmr_at_fmr(g, im, 0.01).tmr - 0.01) <= 0.003);

  CHECK_THROWS_AS(tmr_at_fmr(genuine, {}, 0.01), DegenerateInputError);
  CHECK_THROWS_AS(tmr_at_fmr(genuine, impostor, 0.0), ConfigError);
  CHECK_THROWS_AS(tmr_at_fmr(genuine, impostor, 1.0), ConfigError);
}

TEST_CASE("TMR matches the sweep oracle") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  CountWarnings quiet;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> g(30 + static_cast<std::size_t>(trial % 17)), im(150 + static_cast<std::size_t>(trial * 7));
    for (double& v : g) v = n(rng) + 1.5;
    for (double& v : im) v = trial % 4 == 0 ? std::round(n(rng) * 4) / 4 : n(rng);
    for (double fmr : {0.001, 0.01, 0.1}) CHECK(std::abs(tmr_at_fmr(g, im, fmr).tmr - tmr_sweep_oracle(g, im, fmr)) <= 1e-9);
  }
}

TEST_CASE("TMR is non-decreasing in FMR") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(80), im(2000);
    for (double& v : g) v = n(rng) + 1.0;
    for (double& v : im) v = n(rng);
    double prev = -1;
    for (double fmr : {0.001, 0.002, 0.005, 0.01, 0.05, 0.1, 0.3, 0.7}) {
      const double t = tmr_at_fmr(g, im, fmr).tmr;
      CHECK(t >= prev);
      prev = t;
    }
  }
}

TEST_CASE("coarse impostor sets warn and report the resolvable FMR") {
  CountWarnings warnings;
  const std::vector<double> g{0.5, 0.6}, im{0.1, 0.2, 0.3, 0.4};
  const TmrResult r = tmr_at_fmr(g, im, 0.01);
  CHECK(warnings.count == 1);
  CHECK(r.effective_fmr == 0.25);
  CHECK(r.requested_fmr == 0.01);
}

TEST_CASE("interpolated quantile") {
  const std::vector<double> v{1, 2, 3, 5};
  CHECK(interpolated_quantile(v, 0.0) == 1.0);
  CHECK(interpolated_quantile(v, 1.0) == 5.0);
  CHECK(interpolated_quantile(v, 0.5) == doctest::Approx(2.5));
  CHECK(interpolated_quantile(v, 5.0 / 6.0) == doctest::Approx(4.0));
}

TEST_CASE("anonymization gap") {
  CHECK(anonymization_gap(0.5) == 0.0);
  CHECK(anonymization_gap(0.2) == doctest::Approx(0.3));
  CHECK(anonymization_gap(0.9) == doctest::Approx(0.4));
}

namespace {

FaceDataset labelled(std::vector<int> ids) {
  FaceDataset d;
  for (int id : ids) {
    FaceSample s;
    s.image = Image(8, 8, 0.5f);
    s.identity = id;
    s.gender = id % 2;
    d.samples.push_back(s);
  }
  return d;
}

}  // namespace

TEST_CASE("match protocol counts pairs") {
  const FaceDataset d = labelled({0, 0, 1, 1});
  const MatchProtocol p = build_match_protocol(d, {100, 3});
  CHECK(p.genuine.size() == 4);
  CHECK(p.impostor.size() == 8);
  for (auto [a, b] : p.genuine) {
    CHECK(a != b);
    CHECK(d.samples[a].identity == d.samples[b].identity);
  }
  for (auto [a, b] : p.impostor) CHECK(d.samples[a].identity != d.samples[b].identity);
}

TEST_CASE("match protocol is seeded and samples without replacement") {
  const FaceDataset d = labelled({0, 0, 0, 1, 1, 2, 2, 2, 3, 3, 4, 4});
  const MatchProtocol a = build_match_protocol(d, {30, 5});
  const MatchProtocol b = build_match_protocol(d, {30, 5});
  const MatchProtocol c = build_match_protocol(d, {30, 6});
  CHECK(a.genuine == b.genuine);
  CHECK(a.impostor == b.impostor);
  CHECK(a.impostor != c.impostor);
  CHECK(a.impostor.size() == 30);
  std::set<std::pair<std::size_t, std::size_t>> unique(a.impostor.begin(), a.impostor.end());
  CHECK(unique.size() == a.impostor.size());
}

TEST_CASE("single-sample identities are skipped with a warning") {
  CountWarnings warnings;
  const MatchProtocol p = build_match_protocol(labelled({0, 0, 1}), {10, 1});
  CHECK(warnings.count >= 1);
  CHECK(p.genuine.size() == 2);
}

TEST_CASE("perfect matcher on the identity perturbation separates genuine from impostor") {
  const FaceDataset d = labelled({0, 0, 1, 1, 2, 2});
  std::vector<std::vector<double>> reps;
  for (const auto& s : d.samples) {
    std::vector<double> r(3, 0.0);
    r[static_cast<std::size_t>(s.identity)] = 1.0;
    reps.push_back(r);
  }
  const MatchProtocol p = build_match_protocol(d, {24, 2});
  const PairScores scores = score_protocol(p, reps, reps);
  for (double g : scores.genuine)
    for (double i : scores.impostor) CHECK(g > i);
  CHECK_THROWS_AS(score_protocol(p, reps, {}), ShapeError);
}
