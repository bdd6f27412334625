#include "flowsan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "flowsan/autodiff.hpp"

namespace flowsan {

void validate(const LossWeights& w) {
  for (double v : {w.pixelwise, w.matching, w.gender}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (w.pixelwise == 0.0 && w.matching == 0.0 && w.gender == 0.0) {
    throw ConfigError("loss weights must not all be zero");
  }
}

double binary_cross_entropy(double p, double q) {
  const double qc = std::clamp(q, ad::kProbEpsilon, 1.0 - ad::kProbEpsilon);
  return -(p * std::log(qc) + (1.0 - p) * std::log(1.0 - qc));
}

double loss_pixelwise(const Image& reference, const Image& output) {
  require_same_size(reference, output, "loss_pixelwise");
  double acc = 0;
  for (std::size_t i = 0; i < reference.pixels.size(); ++i) {
    acc += binary_cross_entropy(reference.pixels[i], output.pixels[i]);
  }
  return acc / static_cast<double>(reference.pixels.size());
}

double loss_matching(std::span<const double> r_orig, std::span<const double> r_op) {
  if (r_orig.size() != r_op.size()) throw ShapeError("loss_matching: representation dimensions differ");
  double acc = 0;
  for (std::size_t i = 0; i < r_orig.size(); ++i) {
    const double d = r_orig[i] - r_op[i];
    acc += d * d;
  }
  return acc;
}

double loss_gender(int y, double g_same, double g_opposite) {
  if (y != 0 && y != 1) throw ConfigError("gender label must be 0 or 1");
  return binary_cross_entropy(y, g_same) + binary_cross_entropy(1 - y, g_opposite);
}

double loss_total(const LossWeights& w, double j_pixelwise, double j_matching, double j_gender) {
  return w.pixelwise * j_pixelwise + w.matching * j_matching + w.gender * j_gender;
}

}  // namespace flowsan
