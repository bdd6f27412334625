#include "flowsan/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "flowsan/log.hpp"
#include "flowsan/metrics.hpp"
#include "flowsan/seed.hpp"

namespace flowsan {

std::string to_string(PixelwiseScheme scheme) {
  switch (scheme) {
    case PixelwiseScheme::none:
      return "none";
    case PixelwiseScheme::against_input:
      return "against-input";
    case PixelwiseScheme::against_original:
      return "against-original";
  }
  return "against-original";
}

PixelwiseScheme pixelwise_scheme_from_string(const std::string& name) {
  if (name == "none") return PixelwiseScheme::none;
  if (name == "against-input") return PixelwiseScheme::against_input;
  if (name == "against-original") return PixelwiseScheme::against_original;
  throw ConfigError("unknown pixelwise scheme '" + name + "' (expected none, against-input or against-original)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  validate(cfg.weights);
}

void write_training_log(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,epoch,J_D,J_M,J_G,J_tot\n" << std::setprecision(9);
  for (const auto& r : log) {
    out << r.step << ',' << r.epoch << ',' << r.pixelwise << ',' << r.matching << ',' << r.gender << ','
        << r.total << '\n';
  }
}

namespace {

Tensor<float> gather(const std::vector<const Image*>& images) {
  return stack_images<float>(std::span<const Image* const>(images));
}

Tensor<float> representations(const FaceMatcher<float>& matcher, const std::vector<Image>& images) {
  const auto reps = matcher.represent(images);
  const int d = matcher.dimension();
  Tensor<float> out({static_cast<int>(images.size()), d});
  for (std::size_t n = 0; n < reps.size(); ++n)
    for (int k = 0; k < d; ++k) out[n * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] = static_cast<float>(reps[n][static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace

SanModel<float> train_san(const FaceDataset& dataset, const GenderClassifier<float>& classifier,
                          const FaceMatcher<float>& matcher, const GenderPrototypes& prototypes,
                          const TrainConfig& cfg, const SanTrainOptions& options) {
  validate(cfg);
  if (dataset.samples.empty()) throw DegenerateInputError("SAN training dataset is empty");
  const std::vector<Image> images = dataset.images();
  const std::vector<Image>& origins = options.origin_images ? *options.origin_images : images;
  if (origins.size() != images.size()) {
    throw ShapeError("origin images must align with the dataset (" + std::to_string(origins.size()) + " vs " +
                     std::to_string(images.size()) + ")");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_size(prototypes.female, images[i], "train_san");
    require_same_size(images[i], origins[i], "train_san");
  }

  SanModel<float> san = options.init ? *options.init : SanModel<float>(cfg.arch, derive_seed(cfg.seed, "san-init"));
  Adam<float> opt(san.parameters(), cfg.adam);
  std::mt19937_64 rng(derive_seed(cfg.seed, "san-batches"));
  const Tensor<float> origin_reps = representations(matcher, origins);
  const int d = matcher.dimension();
  const bool use_pixelwise = cfg.scheme != PixelwiseScheme::none && cfg.weights.pixelwise > 0;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  long step = 0;
  std::vector<std::size_t> order(images.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const int b = static_cast<int>(end - start);
      std::vector<const Image*> x, reference, same, opposite;
      SanBatch<float> input;
      input.labels = Tensor<float>({b, 1});
      input.origin_reps = Tensor<float>({b, d});
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const int y = dataset.samples[i].gender;
        const PrototypePair p = select_prototypes(prototypes, y);
        x.push_back(&images[i]);
        reference.push_back(cfg.scheme == PixelwiseScheme::against_input ? &images[i] : &origins[i]);
        same.push_back(&p.same);
        opposite.push_back(&p.opposite);
        input.labels[k - start] = static_cast<float>(y);
        std::copy_n(origin_reps.data() + i * static_cast<std::size_t>(d), d,
                    input.origin_reps.data() + (k - start) * static_cast<std::size_t>(d));
      }
      input.images = gather(x);
      if (use_pixelwise) input.reference = gather(reference);
      input.same = gather(same);
      input.opposite = gather(opposite);

      Tape<float> tape;
      const ObjectiveTerms terms = san_objective(tape, san, classifier, matcher, input, cfg.weights, use_pixelwise);
      LossRecord rec;
      if (use_pixelwise) rec.pixelwise = tape.value(terms.pixelwise)[0];
      rec.step = step;
      rec.epoch = epoch;
      rec.matching = tape.value(terms.matching)[0];
      rec.gender = tape.value(terms.gender)[0];
      rec.total = tape.value(terms.total)[0];
      if (!std::isfinite(rec.total)) {
        std::ostringstream msg;
        msg << "SAN training aborted at step " << step << " (epoch " << epoch << "): J_D=" << rec.pixelwise
            << " J_M=" << rec.matching << " J_G=" << rec.gender << " J_tot=" << rec.total;
        throw TrainingError(msg.str());
      }
      tape.backward(terms.total);
      opt.step();
      if (options.log) options.log->push_back(rec);
      ++step;
    }
  }
  return san;
}

std::uint64_t member_seed(std::uint64_t seed, int member) { return derive_seed(seed, "ensemble-member", static_cast<std::uint64_t>(member)); }

SanChain train_ensemble(const FaceDataset& dataset, const std::vector<GenderClassifier<float>>& classifiers,
                        const FaceMatcher<float>& matcher, const GenderPrototypes& prototypes,
                        const TrainConfig& cfg, const EnsembleOptions& options) {
  if (classifiers.empty()) throw ConfigError("ensemble training needs at least one auxiliary classifier");
  validate(cfg);
  const std::size_t n = classifiers.size();
  std::vector<SanModel<float>> members(n);
  std::vector<std::vector<LossRecord>> logs(n);
  std::vector<std::exception_ptr> errors(n);
  auto train_member = [&](std::size_t i) {
    try {
      TrainConfig member_cfg = cfg;
      member_cfg.seed = member_seed(cfg.seed, static_cast<int>(i));
      members[i] = train_san(dataset, classifiers[i], matcher, prototypes, member_cfg, {.log = &logs[i]});
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (options.concurrent) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < n; ++i) workers.emplace_back(train_member, i);
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < n; ++i) train_member(i);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  SanChain chain;
  chain.mode = ChainMode::ensemble;
  chain.members = std::move(members);
  for (std::size_t i = 0; i < n; ++i) {
    chain.provenance.push_back({static_cast<int>(i), static_cast<int>(i) + 1, member_seed(cfg.seed, static_cast<int>(i))});
  }
  if (options.logs) *options.logs = std::move(logs);
  return chain;
}

FaceDataset transform_dataset(const FaceDataset& dataset, const SanModel<float>& san,
                              const GenderPrototypes& prototypes) {
  FaceDataset out = dataset;
  const std::vector<Image> outputs = san_perturb(san, dataset.images(), dataset.genders(), prototypes);
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i].image = outputs[i];
  return out;
}

SanChain train_flowsan(const FaceDataset& dataset, const std::vector<GenderClassifier<float>>& classifiers,
                       const FaceMatcher<float>& matcher, const GenderPrototypes& prototypes,
                       const TrainConfig& cfg, const FlowOptions& options) {
  if (classifiers.empty()) throw ConfigError("flow training needs at least one auxiliary classifier");
  validate(cfg);
  const int n = static_cast<int>(classifiers.size());
  if (options.init && options.init->size() < n) {
    throw ConfigError("flow fine-tuning needs " + std::to_string(n) + " initial members, got " +
                      std::to_string(options.init->size()));
  }
  const std::vector<Image> originals = dataset.images();
  const std::vector<int> labels = dataset.genders();
  FaceDataset current = dataset;
  SanChain chain;
  chain.mode = ChainMode::flow;
  if (options.logs) options.logs->assign(static_cast<std::size_t>(n), {});
  for (int t = 1; t <= n; ++t) {
    const auto idx = static_cast<std::size_t>(t - 1);
    TrainConfig stage_cfg = cfg;
    stage_cfg.seed = derive_seed(cfg.seed, "flow-stage", static_cast<std::uint64_t>(t));
    SanTrainOptions opts;
    opts.origin_images = &originals;
    opts.init = options.init ? &options.init->members[idx] : nullptr;
    opts.log = options.logs ? &(*options.logs)[idx] : nullptr;
    SanModel<float> san = train_san(current, classifiers[idx], matcher, prototypes, stage_cfg, opts);

    current = transform_dataset(current, san, prototypes);
    const double auc = roc_auc({classifiers[idx].predict(current.images()), labels});
    if (auc > options.confusion_auc_limit) {
      std::ostringstream msg;
      msg << "flow stage " << t << ": auxiliary classifier " << idx << " still reaches AUC " << auc
          << " on its own outputs (limit " << options.confusion_auc_limit << ")";
      log_warning(msg.str());
    }
    if (options.on_stage) options.on_stage(t, current);
    chain.members.push_back(std::move(san));
    chain.provenance.push_back({t - 1, t, stage_cfg.seed});
  }
  return chain;
}

}  // namespace flowsan
