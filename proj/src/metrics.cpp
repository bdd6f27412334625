#include "flowsan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "flowsan/log.hpp"
#include "flowsan/models.hpp"

namespace flowsan {

std::size_t ScoreSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t ScoreSet::negatives() const { return labels.size() - positives(); }

void validate(const ScoreSet& s) {
  if (s.scores.size() != s.labels.size()) {
    throw ShapeError("score set has " + std::to_string(s.scores.size()) + " scores but " +
                     std::to_string(s.labels.size()) + " labels");
  }
  for (int l : s.labels) {
    if (l != 0 && l != 1) throw ConfigError("score labels must be 0 or 1");
  }
  for (double v : s.scores) {
    if (!std::isfinite(v)) throw DegenerateInputError("score set contains a non-finite score");
  }
  if (s.positives() == 0 || s.negatives() == 0) {
    throw DegenerateInputError("score set needs both classes present");
  }
}

double roc_auc(const ScoreSet& s) {
  validate(s);
  const std::size_t n = s.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  // Twice the midrank keeps every quantity an integer.
  long double rank_sum2 = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const std::size_t twice_midrank = i + 1 + j;
    for (std::size_t k = i; k < j; ++k) {
      if (s.labels[order[k]] == 1) rank_sum2 += static_cast<long double>(twice_midrank);
    }
    i = j;
  }
  const long double p = static_cast<long double>(s.positives());
  const long double q = static_cast<long double>(s.negatives());
  const long double u2 = rank_sum2 - p * (p + 1);
  return static_cast<double>(u2 / (2 * p * q));
}

std::vector<RocPoint> roc_points(const ScoreSet& s) {
  validate(s);
  const std::size_t n = s.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  const double p = static_cast<double>(s.positives());
  const double q = static_cast<double>(s.negatives());
  std::vector<RocPoint> points;
  std::size_t pos_below = 0, neg_below = 0, i = 0;
  while (i < n) {
    const double threshold = s.scores[order[i]];
    points.push_back({threshold, (q - static_cast<double>(neg_below)) / q, static_cast<double>(pos_below) / p});
    while (i < n && s.scores[order[i]] == threshold) {
      (s.labels[order[i]] == 1 ? pos_below : neg_below) += 1;
      ++i;
    }
  }
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return points;
}

double eer(const ScoreSet& s) {
  const auto points = roc_points(s);
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const double d0 = points[k].fpr - points[k].fnr;
    const double d1 = points[k + 1].fpr - points[k + 1].fnr;
    if (d0 == 0.0) return points[k].fpr;
    if (d0 > 0.0 && d1 <= 0.0) {
      const double alpha = d0 / (d0 - d1);
      return points[k].fpr + alpha * (points[k + 1].fpr - points[k].fpr);
    }
  }
  return points.back().fpr;
}

double interpolated_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DegenerateInputError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0,1]");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

TmrResult tmr_at_fmr(std::span<const double> genuine, std::span<const double> impostor, double fmr) {
  if (genuine.empty() || impostor.empty()) throw DegenerateInputError("tmr_at_fmr needs genuine and impostor scores");
  if (!(fmr > 0.0 && fmr < 1.0)) throw ConfigError("fmr must lie in (0,1)");
  TmrResult r;
  r.requested_fmr = fmr;
  r.effective_fmr = fmr;
  const double m = static_cast<double>(impostor.size());
  if (m * fmr < 1.0 - 1e-12) {
    r.effective_fmr = 1.0 / m;
    std::ostringstream msg;
    msg << impostor.size() << " impostor scores cannot resolve FMR " << fmr << "; reporting at FMR "
        << r.effective_fmr;
    log_warning(msg.str());
  }
  std::vector<double> sorted(impostor.begin(), impostor.end());
  std::sort(sorted.begin(), sorted.end());
  r.threshold = interpolated_quantile(sorted, 1.0 - r.effective_fmr);
  const auto accepted = std::count_if(genuine.begin(), genuine.end(), [&](double g) { return g >= r.threshold; });
  r.tmr = static_cast<double>(accepted) / static_cast<double>(genuine.size());
  return r;
}

double anonymization_gap(double auc) { return std::abs(auc - 0.5); }

MatchProtocol build_match_protocol(const FaceDataset& dataset, const MatchProtocolConfig& cfg) {
  std::map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) by_identity[dataset.samples[i].identity].push_back(i);
  MatchProtocol protocol;
  for (const auto& [id, members] : by_identity) {
    if (members.size() < 2) {
      log_warning("identity " + std::to_string(id) + " has a single sample; skipped for genuine pairs");
      continue;
    }
    for (std::size_t a : members)
      for (std::size_t b : members)
        if (a != b) protocol.genuine.emplace_back(a, b);
  }
  const std::size_t n = dataset.samples.size();
  std::size_t available = 0;
  for (const auto& [id, members] : by_identity) available += members.size() * (n - members.size());
  if (available == 0) throw DegenerateInputError("match protocol needs at least two identities");
  std::mt19937_64 rng(cfg.seed);
  if (cfg.impostor_pairs >= available) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        if (dataset.samples[a].identity != dataset.samples[b].identity) protocol.impostor.emplace_back(a, b);
    return protocol;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (protocol.impostor.size() < cfg.impostor_pairs) {
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    if (dataset.samples[a].identity == dataset.samples[b].identity) continue;
    if (seen.emplace(a, b).second) protocol.impostor.emplace_back(a, b);
  }
  return protocol;
}

PairScores score_protocol(const MatchProtocol& protocol, const std::vector<std::vector<double>>& original,
                          const std::vector<std::vector<double>>& perturbed) {
  if (original.size() != perturbed.size()) throw ShapeError("original and perturbed representation counts differ");
  PairScores out;
  out.genuine.reserve(protocol.genuine.size());
  out.impostor.reserve(protocol.impostor.size());
  for (const auto& [a, b] : protocol.genuine) out.genuine.push_back(cosine_similarity(original.at(a), perturbed.at(b)));
  for (const auto& [a, b] : protocol.impostor) {
    out.impostor.push_back(cosine_similarity(original.at(a), perturbed.at(b)));
  }
  return out;
}

}  // namespace flowsan
