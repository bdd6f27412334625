#pragma once

// Score-level biometric metrics and the genuine/impostor pairing protocol.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "flowsan/data.hpp"

namespace flowsan {

// Binary-labelled scores; label 1 is the positive (male / genuine) class.
struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t positives() const;
  std::size_t negatives() const;
};

// Throws ShapeError on length mismatch and DegenerateInputError when a class is missing.
void validate(const ScoreSet& s);

// Mann-Whitney formulation with ties counted half.
double roc_auc(const ScoreSet& s);

// Positive prediction when score >= threshold; linear interpolation between
// adjacent ROC points at the FPR/FNR crossing.
double eer(const ScoreSet& s);

struct RocPoint {
  double threshold;
  double fpr;
  double fnr;
};

// One point per distinct score plus the +inf threshold, in increasing threshold order.
std::vector<RocPoint> roc_points(const ScoreSet& s);

struct TmrResult {
  double tmr = 0.0;
  double threshold = 0.0;
  double requested_fmr = 0.0;
  double effective_fmr = 0.0;  // coarsened to 1/impostors when too few impostor scores
};

// Threshold is the (1 - fmr) linearly interpolated quantile of impostor scores;
// TMR is the fraction of genuine scores at or above it.
TmrResult tmr_at_fmr(std::span<const double> genuine, std::span<const double> impostor, double fmr);

// Linearly interpolated quantile of an ascending-sorted sample.
double interpolated_quantile(std::span<const double> sorted, double q);

double anonymization_gap(double auc);

struct MatchProtocolConfig {
  std::size_t impostor_pairs = 20000;
  std::uint64_t seed = 1;
};

// (a, b) index pairs into a dataset: score = match(original a, perturbed b).
struct MatchProtocol {
  std::vector<std::pair<std::size_t, std::size_t>> genuine;
  std::vector<std::pair<std::size_t, std::size_t>> impostor;
};

// Genuine pairs are every ordered pair of distinct samples sharing an identity;
// impostor pairs are sampled without replacement across identities.
MatchProtocol build_match_protocol(const FaceDataset& dataset, const MatchProtocolConfig& cfg = {});

struct PairScores {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

// Cosine scores between precomputed representations of originals and perturbed images.
PairScores score_protocol(const MatchProtocol& protocol, const std::vector<std::vector<double>>& original,
                          const std::vector<std::vector<double>>& perturbed);

}  // namespace flowsan
