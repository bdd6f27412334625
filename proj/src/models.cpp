#include "flowsan/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowsan/metrics.hpp"
#include "flowsan/optimizer.hpp"
#include "flowsan/seed.hpp"

namespace flowsan {

nlohmann::json to_json(const SanConfig& c) {
  return {{"channels", c.channels}, {"depth", c.depth}, {"base_width", c.base_width}, {"leak", c.leak}};
}

nlohmann::json to_json(const ConvNetConfig& c) {
  return {{"widths", c.widths},       {"strides", c.strides},     {"mean_pool", c.mean_pool},
          {"hidden", c.hidden},       {"embedding", c.embedding}, {"leak", c.leak}};
}

SanConfig san_config_from_json(const nlohmann::json& j) {
  SanConfig c;
  c.channels = j.value("channels", c.channels);
  c.depth = j.value("depth", c.depth);
  c.base_width = j.value("base_width", c.base_width);
  c.leak = j.value("leak", c.leak);
  return c;
}

ConvNetConfig convnet_config_from_json(const nlohmann::json& j) {
  ConvNetConfig c;
  c.widths = j.value("widths", c.widths);
  c.strides = j.value("strides", c.strides);
  c.mean_pool = j.value("mean_pool", c.mean_pool);
  c.hidden = j.value("hidden", c.hidden);
  c.embedding = j.value("embedding", c.embedding);
  c.leak = j.value("leak", c.leak);
  return c;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine similarity of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("zero-norm face representation");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

template <class Fn>
void for_each_batch(std::size_t n, int batch_size, std::mt19937_64& rng, Fn&& fn) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    fn(std::span<const std::size_t>(order.data() + start, end - start));
  }
}

Tensor<float> gather_images(const FaceDataset& data, std::span<const std::size_t> idx) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&data.samples[i].image);
  return stack_images<float>(std::span<const Image* const>(ptrs));
}

void require_sizes(const FaceDataset& data) {
  if (data.samples.empty()) throw DegenerateInputError("training dataset is empty");
  const Image& first = data.samples.front().image;
  for (const auto& s : data.samples) require_same_size(first, s.image, "training dataset");
}

}  // namespace

GenderClassifier<float> train_gender_classifier(const FaceDataset& dataset, const ConvNetConfig& arch,
                                                const ClassifierTrainConfig& cfg) {
  require_sizes(dataset);
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("classifier epochs and batch size must be positive");
  const auto genders = dataset.genders();
  if (std::count(genders.begin(), genders.end(), 1) == 0 || std::count(genders.begin(), genders.end(), 0) == 0) {
    throw DegenerateInputError("gender classifier training needs both genders");
  }
  const Image& first = dataset.samples.front().image;
  GenderClassifier<float> model(arch, first.height, first.width, cfg.seed);
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  Adam<float> opt(model.parameters(), adam);
  std::mt19937_64 rng(derive_seed(cfg.seed, "gender-batches"));
  std::mt19937_64 noise_rng(derive_seed(cfg.seed, "gender-noise"));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma));
  double last_loss = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for_each_batch(dataset.size(), cfg.batch_size, rng, [&](std::span<const std::size_t> idx) {
      Tensor<float> target({static_cast<int>(idx.size()), 1});
      for (std::size_t k = 0; k < idx.size(); ++k) target[k] = static_cast<float>(dataset.samples[idx[k]].gender);
      Tensor<float> x = gather_images(dataset, idx);
      if (cfg.noise_sigma > 0) {
        for (float& v : x.storage()) v += noise(noise_rng);
      }
      Tape<float> tape;
      const Var p = model.forward(tape, tape.constant(std::move(x)));
      const Var loss = ad::binary_cross_entropy(tape, tape.constant(std::move(target)), p);
      last_loss = tape.value(loss)[0];
      if (!std::isfinite(last_loss)) throw TrainingError("gender classifier loss became non-finite");
      tape.backward(loss);
      opt.step();
    });
  }
  const double auc = roc_auc({model.predict(dataset.images()), genders});
  if (auc < cfg.min_train_auc) {
    std::ostringstream msg;
    msg << "gender classifier did not converge: train AUC " << auc << " < " << cfg.min_train_auc
        << " after " << cfg.epochs << " epochs (last batch loss " << last_loss << ", seed " << cfg.seed << ")";
    throw TrainingError(msg.str());
  }
  return model;
}

FaceMatcher<float> train_face_matcher(const FaceDataset& dataset, const ConvNetConfig& arch,
                                      const MatcherTrainConfig& cfg) {
  require_sizes(dataset);
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("matcher epochs and batch size must be positive");
  std::map<int, int> class_of;
  std::map<int, int> counts;
  for (const auto& s : dataset.samples) ++counts[s.identity];
  for (const auto& [id, n] : counts) {
    if (n < 2) throw DegenerateInputError("identity " + std::to_string(id) + " has fewer than two samples");
    class_of.emplace(id, static_cast<int>(class_of.size()));
  }
  if (class_of.size() < 2) throw DegenerateInputError("matcher training needs at least two identities");
  const Image& first = dataset.samples.front().image;
  FaceMatcher<float> model(arch, first.height, first.width, static_cast<int>(class_of.size()), cfg.seed);
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  Adam<float> opt(model.parameters(), adam);
  std::mt19937_64 rng(derive_seed(cfg.seed, "matcher-batches"));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for_each_batch(dataset.size(), cfg.batch_size, rng, [&](std::span<const std::size_t> idx) {
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(class_of.at(dataset.samples[i].identity));
      Tape<float> tape;
      const Var r = model.represent(tape, tape.constant(gather_images(dataset, idx)));
      const Var loss = ad::softmax_cross_entropy(tape, model.logits(tape, r), std::move(labels));
      if (!std::isfinite(tape.value(loss)[0])) throw TrainingError("face matcher loss became non-finite");
      tape.backward(loss);
      opt.step();
    });
  }
  return model;
}

}  // namespace flowsan
