#pragma once

// The three network roles: the prototype-conditioned SAN autoencoder, gender
// classifiers (auxiliary and unseen) and face matchers (auxiliary and unseen).

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flowsan/data.hpp"
#include "flowsan/layers.hpp"

namespace flowsan {

struct SanConfig {
  int channels = 16;    // decoder feature channels before prototype fusion
  int depth = 3;        // encoder stages, each halving resolution
  int base_width = 8;   // width of the first encoder stage, doubled per stage
  float leak = 0.2f;

  friend bool operator==(const SanConfig&, const SanConfig&) = default;
};

// Strided 3x3 conv trunk followed by a dense head.
struct ConvNetConfig {
  std::vector<int> widths{8, 16, 32};
  std::vector<int> strides{2, 2, 2};
  bool mean_pool = false;  // global mean pool instead of flatten
  int hidden = 0;          // optional hidden dense layer width (0 = none)
  int embedding = 64;      // matcher representation size
  float leak = 0.2f;

  friend bool operator==(const ConvNetConfig&, const ConvNetConfig&) = default;
};

nlohmann::json to_json(const SanConfig& c);
nlohmann::json to_json(const ConvNetConfig& c);
SanConfig san_config_from_json(const nlohmann::json& j);
ConvNetConfig convnet_config_from_json(const nlohmann::json& j);

template <class T>
class SanModel {
 public:
  struct Outputs {
    Var same;
    Var opposite;
  };

  SanModel() = default;
  SanModel(const SanConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg.depth < 1 || cfg.channels < 1 || cfg.base_width < 1) throw ConfigError("invalid SAN config");
    std::mt19937_64 rng(seed);
    for (int i = 0; i < cfg.depth; ++i) {
      const int in = i == 0 ? 2 : width(i - 1);
      encoder_.emplace_back("enc" + std::to_string(i), in, width(i), 3, 2, InitScheme::he, rng);
    }
    for (int i = cfg.depth - 1; i >= 0; --i) {
      const int out = i == 0 ? cfg.channels : width(i - 1);
      decoder_.emplace_back("dec" + std::to_string(cfg.depth - 1 - i), width(i), out, 3, 1,
                            InitScheme::he, rng);
    }
    fusion_ = Conv2dLayer<T>("fusion", cfg.channels + 1, 1, 1, 1, InitScheme::xavier, rng);
  }

  const SanConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  // Decoder feature maps for image ⊕ same-gender prototype.
  Var features(Tape<T>& tape, Var image, Var proto_same) { return features_impl(*this, tape, image, proto_same); }
  Var features(Tape<T>& tape, Var image, Var proto_same) const {
    return features_impl(*this, tape, image, proto_same);
  }

  // Append the selected prototype as an extra channel, 1x1 conv, sigmoid.
  Var fuse(Tape<T>& tape, Var feats, Var proto) { return fuse_impl(*this, tape, feats, proto); }
  Var fuse(Tape<T>& tape, Var feats, Var proto) const { return fuse_impl(*this, tape, feats, proto); }

  Var forward(Tape<T>& tape, Var image, Var proto_same, Var proto_fuse) {
    return fuse(tape, features(tape, image, proto_same), proto_fuse);
  }
  Var forward(Tape<T>& tape, Var image, Var proto_same, Var proto_fuse) const {
    return fuse(tape, features(tape, image, proto_same), proto_fuse);
  }

  // Same-prototype and opposite-prototype outputs sharing one encoder/decoder pass.
  Outputs forward_pair(Tape<T>& tape, Var image, Var proto_same, Var proto_opposite) {
    const Var f = features(tape, image, proto_same);
    return {fuse(tape, f, proto_same), fuse(tape, f, proto_opposite)};
  }
  Outputs forward_pair(Tape<T>& tape, Var image, Var proto_same, Var proto_opposite) const {
    const Var f = features(tape, image, proto_same);
    return {fuse(tape, f, proto_same), fuse(tape, f, proto_opposite)};
  }

  // Gradient-free evaluation on [N,1,H,W] batches.
  Tensor<T> apply(const Tensor<T>& images, const Tensor<T>& proto_same, const Tensor<T>& proto_fuse) const {
    Tape<T> tape;
    const Var out = forward(tape, tape.constant(images), tape.constant(proto_same), tape.constant(proto_fuse));
    return tape.value(out);
  }

  std::vector<Parameter<T>*> parameters() { return collect<Parameter<T>*>(*this); }
  std::vector<const Parameter<T>*> parameters() const { return collect<const Parameter<T>*>(*this); }

 private:
  int width(int stage) const { return cfg_.base_width << stage; }

  template <class Self>
  static Var features_impl(Self& self, Tape<T>& tape, Var image, Var proto_same) {
    Var h = ad::concat_channels(tape, image, proto_same);
    for (auto& layer : self.encoder_) h = ad::leaky_relu(tape, layer(tape, h), static_cast<T>(self.cfg_.leak));
    for (auto& layer : self.decoder_) {
      h = ad::upsample2x(tape, h);
      h = ad::leaky_relu(tape, layer(tape, h), static_cast<T>(self.cfg_.leak));
    }
    const auto& in = tape.value(image);
    const auto& out = tape.value(h);
    if (out.dim(2) != in.dim(2) || out.dim(3) != in.dim(3)) {
      throw ShapeError("SAN input size must be divisible by 2^depth, got " + shape_str(in.shape()));
    }
    return h;
  }

  template <class Self>
  static Var fuse_impl(Self& self, Tape<T>& tape, Var feats, Var proto) {
    return ad::sigmoid(tape, self.fusion_(tape, ad::concat_channels(tape, feats, proto)));
  }

  template <class Ptr, class Self>
  static std::vector<Ptr> collect(Self& self) {
    std::vector<Ptr> out;
    for (auto& l : self.encoder_) out.insert(out.end(), {&l.weight, &l.bias});
    for (auto& l : self.decoder_) out.insert(out.end(), {&l.weight, &l.bias});
    out.insert(out.end(), {&self.fusion_.weight, &self.fusion_.bias});
    return out;
  }

  SanConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<Conv2dLayer<T>> encoder_;
  std::vector<Conv2dLayer<T>> decoder_;
  Conv2dLayer<T> fusion_;
};

// Strided conv trunk shared by classifiers and matchers.
template <class T>
class ConvTrunk {
 public:
  ConvTrunk() = default;
  ConvTrunk(const ConvNetConfig& cfg, int height, int width, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.widths.empty() || cfg.widths.size() != cfg.strides.size()) {
      throw ConfigError("conv trunk needs one stride per stage");
    }
    int in = 1, h = height, w = width;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      layers_.emplace_back("conv" + std::to_string(i), in, cfg.widths[i], 3, cfg.strides[i], InitScheme::he, rng);
      in = cfg.widths[i];
      h = (h - 1) / cfg.strides[i] + 1;
      w = (w - 1) / cfg.strides[i] + 1;
    }
    out_features_ = cfg.mean_pool ? in : in * h * w;
  }

  int out_features() const { return out_features_; }

  Var operator()(Tape<T>& tape, Var x) { return apply(*this, tape, x); }
  Var operator()(Tape<T>& tape, Var x) const { return apply(*this, tape, x); }

  template <class Vec>
  void append_parameters(Vec& out) {
    for (auto& l : layers_) out.insert(out.end(), {&l.weight, &l.bias});
  }
  template <class Vec>
  void append_parameters(Vec& out) const {
    for (const auto& l : layers_) out.insert(out.end(), {&l.weight, &l.bias});
  }

 private:
  template <class Self>
  static Var apply(Self& self, Tape<T>& tape, Var x) {
    for (auto& layer : self.layers_) x = ad::leaky_relu(tape, layer(tape, x), static_cast<T>(self.cfg_.leak));
    return self.cfg_.mean_pool ? ad::mean_pool(tape, x) : ad::flatten(tape, x);
  }

  ConvNetConfig cfg_;
  std::vector<Conv2dLayer<T>> layers_;
  int out_features_ = 0;
};

// G: image -> P(Male).
template <class T>
class GenderClassifier {
 public:
  GenderClassifier() = default;
  GenderClassifier(const ConvNetConfig& cfg, int height, int width, std::uint64_t seed)
      : cfg_(cfg), height_(height), width_(width), seed_(seed) {
    std::mt19937_64 rng(seed);
    trunk_ = ConvTrunk<T>(cfg, height, width, rng);
    int features = trunk_.out_features();
    if (cfg.hidden > 0) {
      hidden_ = DenseLayer<T>("hidden", features, cfg.hidden, InitScheme::he, rng);
      features = cfg.hidden;
    }
    head_ = DenseLayer<T>("head", features, 1, InitScheme::xavier, rng);
  }

  const ConvNetConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  int height() const { return height_; }
  int width() const { return width_; }

  // [N,1,H,W] -> probabilities [N,1].
  Var forward(Tape<T>& tape, Var images) { return forward_impl(*this, tape, images); }
  Var forward(Tape<T>& tape, Var images) const { return forward_impl(*this, tape, images); }

  std::vector<double> predict(const std::vector<Image>& images, int batch = 128) const {
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch));
      std::vector<const Image*> ptrs;
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&images[i]);
      Tape<T> tape;
      const Var p = forward(tape, tape.constant(stack_images<T>(std::span<const Image* const>(ptrs))));
      for (T v : tape.value(p).values()) out.push_back(static_cast<double>(v));
    }
    return out;
  }

  double predict(const Image& image) const { return predict(std::vector<Image>{image}).front(); }

  std::vector<Parameter<T>*> parameters() { return collect<Parameter<T>*>(*this); }
  std::vector<const Parameter<T>*> parameters() const { return collect<const Parameter<T>*>(*this); }

 private:
  template <class Self>
  static Var forward_impl(Self& self, Tape<T>& tape, Var images) {
    Var h = self.trunk_(tape, images);
    if (self.cfg_.hidden > 0) h = ad::leaky_relu(tape, self.hidden_(tape, h), static_cast<T>(self.cfg_.leak));
    return ad::sigmoid(tape, self.head_(tape, h));
  }

  template <class Ptr, class Self>
  static std::vector<Ptr> collect(Self& self) {
    std::vector<Ptr> out;
    self.trunk_.append_parameters(out);
    if (self.cfg_.hidden > 0) out.insert(out.end(), {&self.hidden_.weight, &self.hidden_.bias});
    out.insert(out.end(), {&self.head_.weight, &self.head_.bias});
    return out;
  }

  ConvNetConfig cfg_;
  int height_ = 0;
  int width_ = 0;
  std::uint64_t seed_ = 0;
  ConvTrunk<T> trunk_;
  DenseLayer<T> hidden_;
  DenseLayer<T> head_;
};

// M: identity classifier whose embedding layer is the face representation.
template <class T>
class FaceMatcher {
 public:
  FaceMatcher() = default;
  FaceMatcher(const ConvNetConfig& cfg, int height, int width, int n_classes, std::uint64_t seed)
      : cfg_(cfg), height_(height), width_(width), n_classes_(n_classes), seed_(seed) {
    if (cfg.embedding < 1 || n_classes < 2) throw ConfigError("matcher needs embedding >= 1 and >= 2 classes");
    std::mt19937_64 rng(seed);
    trunk_ = ConvTrunk<T>(cfg, height, width, rng);
    embed_ = DenseLayer<T>("embed", trunk_.out_features(), cfg.embedding, InitScheme::xavier, rng);
    classify_ = DenseLayer<T>("classify", cfg.embedding, n_classes, InitScheme::xavier, rng);
  }

  const ConvNetConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  int n_classes() const { return n_classes_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int dimension() const { return cfg_.embedding; }

  // [N,1,H,W] -> representation [N,d].
  Var represent(Tape<T>& tape, Var images) { return embed_(tape, trunk_(tape, images)); }
  Var represent(Tape<T>& tape, Var images) const { return embed_(tape, trunk_(tape, images)); }

  // Identity logits from a representation, used only while training M.
  Var logits(Tape<T>& tape, Var representation) {
    return classify_(tape, ad::leaky_relu(tape, representation, static_cast<T>(cfg_.leak)));
  }

  std::vector<std::vector<double>> represent(const std::vector<Image>& images, int batch = 128) const {
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch));
      std::vector<const Image*> ptrs;
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&images[i]);
      Tape<T> tape;
      const Var r = represent(tape, tape.constant(stack_images<T>(std::span<const Image* const>(ptrs))));
      const Tensor<T>& rv = tape.value(r);
      const int d = rv.dim(1);
      for (std::size_t n = 0; n < end - start; ++n) {
        out.emplace_back(rv.data() + n * d, rv.data() + (n + 1) * d);
      }
    }
    return out;
  }

  std::vector<double> represent(const Image& image) const {
    return represent(std::vector<Image>{image}).front();
  }

  std::vector<Parameter<T>*> parameters() { return collect<Parameter<T>*>(*this); }
  std::vector<const Parameter<T>*> parameters() const { return collect<const Parameter<T>*>(*this); }

 private:
  template <class Ptr, class Self>
  static std::vector<Ptr> collect(Self& self) {
    std::vector<Ptr> out;
    self.trunk_.append_parameters(out);
    out.insert(out.end(), {&self.embed_.weight, &self.embed_.bias, &self.classify_.weight, &self.classify_.bias});
    return out;
  }

  ConvNetConfig cfg_;
  int height_ = 0;
  int width_ = 0;
  int n_classes_ = 0;
  std::uint64_t seed_ = 0;
  ConvTrunk<T> trunk_;
  DenseLayer<T> embed_;
  DenseLayer<T> classify_;
};

// Cosine similarity of two representation vectors; zero norm is an error.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

template <class T>
double match_score(const FaceMatcher<T>& matcher, const Image& a, const Image& b) {
  const auto ra = matcher.represent(a);
  const auto rb = matcher.represent(b);
  return cosine_similarity(ra, rb);
}

struct ClassifierTrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double noise_sigma = 0.0;  // Gaussian input noise added to each training batch
  double min_train_auc = 0.9;
  std::uint64_t seed = 1;
};

struct MatcherTrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 1;
};

GenderClassifier<float> train_gender_classifier(const FaceDataset& dataset, const ConvNetConfig& arch,
                                                const ClassifierTrainConfig& cfg);

FaceMatcher<float> train_face_matcher(const FaceDataset& dataset, const ConvNetConfig& arch,
                                      const MatcherTrainConfig& cfg);

// Sum of parameter bytes hashed; used to assert models stay frozen.
template <class T>
std::uint64_t parameter_checksum(const std::vector<const Parameter<T>*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter<T>* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < p->value.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace flowsan
