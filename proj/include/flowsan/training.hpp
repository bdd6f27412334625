#pragma once

// Single-SAN training, independent ensembles and sequential FlowSAN training.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowsan/data.hpp"
#include "flowsan/inference.hpp"
#include "flowsan/losses.hpp"
#include "flowsan/models.hpp"
#include "flowsan/optimizer.hpp"

namespace flowsan {

enum class PixelwiseScheme { none, against_input, against_original };

std::string to_string(PixelwiseScheme scheme);
PixelwiseScheme pixelwise_scheme_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 15;
  int batch_size = 32;
  std::uint64_t seed = 1;
  LossWeights weights;
  AdamConfig adam;
  PixelwiseScheme scheme = PixelwiseScheme::against_original;
  SanConfig arch;
};

void validate(const TrainConfig& cfg);

struct LossRecord {
  long step = 0;
  int epoch = 0;
  double pixelwise = 0;
  double matching = 0;
  double gender = 0;
  double total = 0;
};

void write_training_log(const std::vector<LossRecord>& log, const std::filesystem::path& path);

// One mini-batch of SAN training inputs, all [N,1,H,W] except labels [N,1] and
// origin_reps [N,d] (R_M of the origin images).
template <class T>
struct SanBatch {
  Tensor<T> images;
  Tensor<T> reference;  // pixelwise-loss target
  Tensor<T> same;       // P_sm per sample
  Tensor<T> opposite;   // P_op per sample
  Tensor<T> labels;
  Tensor<T> origin_reps;
};

struct ObjectiveTerms {
  Var pixelwise;  // id -1 when the pixelwise term is disabled
  Var matching;
  Var gender;
  Var total;
};

// J_tot = λ1·J_D + λ2·J_M + λ3·J_G on one batch, with G and M frozen.
template <class T>
ObjectiveTerms san_objective(Tape<T>& tape, SanModel<T>& san, const GenderClassifier<T>& classifier,
                             const FaceMatcher<T>& matcher, const SanBatch<T>& batch, const LossWeights& weights,
                             bool use_pixelwise) {
  Tensor<T> flipped = batch.labels;
  for (T& v : flipped.storage()) v = T(1) - v;
  const auto out = san.forward_pair(tape, tape.constant(batch.images), tape.constant(batch.same),
                                    tape.constant(batch.opposite));
  ObjectiveTerms terms;
  terms.matching = ad::squared_distance(tape, tape.constant(batch.origin_reps), matcher.represent(tape, out.opposite));
  const Var g_same = ad::binary_cross_entropy(tape, tape.constant(batch.labels), classifier.forward(tape, out.same));
  const Var g_opp =
      ad::binary_cross_entropy(tape, tape.constant(std::move(flipped)), classifier.forward(tape, out.opposite));
  terms.gender = ad::add(tape, g_same, g_opp);
  std::vector<Var> parts{terms.matching, terms.gender};
  std::vector<T> w{static_cast<T>(weights.matching), static_cast<T>(weights.gender)};
  if (use_pixelwise) {
    terms.pixelwise = ad::binary_cross_entropy(tape, tape.constant(batch.reference), out.same);
    parts.push_back(terms.pixelwise);
    w.push_back(static_cast<T>(weights.pixelwise));
  }
  terms.total = ad::weighted_sum(tape, parts, w);
  return terms;
}

struct SanTrainOptions {
  // Per-sample reference images for the matching loss and scheme-3 pixel loss;
  // the dataset images are used when absent.
  const std::vector<Image>* origin_images = nullptr;
  // Start from these weights instead of a fresh initialisation.
  const SanModel<float>* init = nullptr;
  std::vector<LossRecord>* log = nullptr;
};

SanModel<float> train_san(const FaceDataset& dataset, const GenderClassifier<float>& classifier,
                          const FaceMatcher<float>& matcher, const GenderPrototypes& prototypes,
                          const TrainConfig& cfg, const SanTrainOptions& options = {});

// Seed of ensemble member i (0-based) derived from the run seed.
std::uint64_t member_seed(std::uint64_t seed, int member);

struct EnsembleOptions {
  bool concurrent = false;
  std::vector<std::vector<LossRecord>>* logs = nullptr;
};

SanChain train_ensemble(const FaceDataset& dataset, const std::vector<GenderClassifier<float>>& classifiers,
                        const FaceMatcher<float>& matcher, const GenderPrototypes& prototypes,
                        const TrainConfig& cfg, const EnsembleOptions& options = {});

struct FlowOptions {
  // Members to fine-tune from, in order; fresh members are trained when empty.
  const SanChain* init = nullptr;
  // Called after stage t (1-based) with the dataset transformed by SAN_t.
  std::function<void(int, const FaceDataset&)> on_stage;
  std::vector<std::vector<LossRecord>>* logs = nullptr;
  // A member whose own classifier keeps AUC above this on its outputs triggers a warning.
  double confusion_auc_limit = 0.6;
};

SanChain train_flowsan(const FaceDataset& dataset, const std::vector<GenderClassifier<float>>& classifiers,
                       const FaceMatcher<float>& matcher, const GenderPrototypes& prototypes,
                       const TrainConfig& cfg, const FlowOptions& options = {});

// Same dataset with each image replaced by the member's opposite-prototype output.
FaceDataset transform_dataset(const FaceDataset& dataset, const SanModel<float>& san,
                              const GenderPrototypes& prototypes);

}  // namespace flowsan
