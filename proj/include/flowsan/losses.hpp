#pragma once

// Plain-value forms of the semi-adversarial objective. The differentiable
// versions used during training are composed from ad:: primitives in training.cpp.

#include <span>

#include "flowsan/image.hpp"

namespace flowsan {

struct LossWeights {
  double pixelwise = 1.0;  // λ1
  double matching = 1.0;   // λ2
  double gender = 1.0;     // λ3

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Throws ConfigError unless all weights are finite, non-negative and not all zero.
void validate(const LossWeights& w);

// −(p·log q + (1−p)·log(1−q)) with q clamped to [ε, 1−ε].
double binary_cross_entropy(double p, double q);

// Mean per-pixel cross-entropy between the reference image and the output.
double loss_pixelwise(const Image& reference, const Image& output);

// Squared L2 distance between two representation vectors.
double loss_matching(std::span<const double> r_orig, std::span<const double> r_op);

// H(y, g_sm) + H(1−y, g_op).
double loss_gender(int y, double g_same, double g_opposite);

double loss_total(const LossWeights& w, double j_pixelwise, double j_matching, double j_gender);

}  // namespace flowsan
