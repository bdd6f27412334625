#include "flowsan/inference.hpp"

#include <algorithm>
#include <random>

namespace flowsan {

std::string to_string(ChainMode mode) { return mode == ChainMode::flow ? "flow" : "ensemble"; }

ChainMode chain_mode_from_string(const std::string& name) {
  if (name == "flow") return ChainMode::flow;
  if (name == "ensemble") return ChainMode::ensemble;
  throw ConfigError("unknown chain mode '" + name + "'");
}

void require_depth(const SanChain& chain, int t) {
  if (t < 1 || t > chain.size()) {
    throw UsageError("depth " + std::to_string(t) + " outside 1.." + std::to_string(chain.size()));
  }
}

Image san_forward(const SanModel<float>& san, const Image& image, const Image& p_same, const Image& p_fuse) {
  require_same_size(image, p_same, "san_forward");
  require_same_size(image, p_fuse, "san_forward");
  const std::vector<Image> one{image};
  const Tensor<float> out = san.apply(stack_images<float>(one), stack_images<float>(std::vector<Image>{p_same}),
                                      stack_images<float>(std::vector<Image>{p_fuse}));
  return unstack_images(out).front();
}

std::vector<Image> san_perturb(const SanModel<float>& san, const std::vector<Image>& images,
                               const std::vector<int>& labels, const GenderPrototypes& prototypes, int batch_size) {
  if (images.size() != labels.size()) throw ShapeError("san_perturb: image and label counts differ");
  std::vector<Image> out;
  out.reserve(images.size());
  const auto batch = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t end = std::min(images.size(), start + batch);
    std::vector<const Image*> x, same, fuse;
    for (std::size_t i = start; i < end; ++i) {
      const PrototypePair p = select_prototypes(prototypes, labels[i]);
      x.push_back(&images[i]);
      same.push_back(&p.same);
      fuse.push_back(&p.opposite);
    }
    const Tensor<float> y =
        san.apply(stack_images<float>(std::span<const Image* const>(x)), stack_images<float>(std::span<const Image* const>(same)),
                  stack_images<float>(std::span<const Image* const>(fuse)));
    for (Image& img : unstack_images(y)) out.push_back(std::move(img));
  }
  return out;
}

namespace {

Image perturb_one(const SanModel<float>& san, const Image& image, const GenderPrototypes& prototypes, int y) {
  const PrototypePair p = select_prototypes(prototypes, y);
  return san_forward(san, image, p.same, p.opposite);
}

}  // namespace

Image psi(const SanChain& chain, const Image& original, int t, const GenderPrototypes& prototypes, int y) {
  require_depth(chain, t);
  const Image input = t == 1 ? original : psi(chain, original, t - 1, prototypes, y);
  return perturb_one(chain.members[static_cast<std::size_t>(t - 1)], input, prototypes, y);
}

Image psi_iterative(const SanChain& chain, const Image& original, int t, const GenderPrototypes& prototypes, int y) {
  require_depth(chain, t);
  Image current = original;
  for (int k = 0; k < t; ++k) current = perturb_one(chain.members[static_cast<std::size_t>(k)], current, prototypes, y);
  return current;
}

Image average_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw DegenerateInputError("average of no images");
  const Image& first = *images.front();
  std::vector<double> acc(first.pixels.size(), 0.0);
  for (const Image* img : images) {
    require_same_size(first, *img, "average_images");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += img->pixels[i];
  }
  Image out(first.height, first.width);
  const double n = static_cast<double>(images.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.pixels[i] = static_cast<float>(acc[i] / n);
  return out;
}

Image ens_avg(const SanChain& chain, const Image& image, const GenderPrototypes& prototypes, int y, int t) {
  require_depth(chain, t);
  std::vector<Image> outputs;
  for (int k = 0; k < t; ++k) outputs.push_back(perturb_one(chain.members[static_cast<std::size_t>(k)], image, prototypes, y));
  std::vector<const Image*> ptrs;
  for (const Image& o : outputs) ptrs.push_back(&o);
  return average_images(ptrs);
}

int gibbs_select(int t, std::uint64_t seed) {
  if (t < 1) throw UsageError("gibbs selection needs at least one member");
  std::mt19937_64 rng(seed);
  return std::uniform_int_distribution<int>(1, t)(rng);
}

Selection ens_gibbs(const SanChain& chain, const Image& image, const GenderPrototypes& prototypes, int y, int t,
                    std::uint64_t seed) {
  require_depth(chain, t);
  const int member = gibbs_select(t, seed);
  return {perturb_one(chain.members[static_cast<std::size_t>(member - 1)], image, prototypes, y), member};
}

int best_member(std::span<const double> male_probabilities, int y) {
  if (male_probabilities.empty()) throw DegenerateInputError("best_member over no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < male_probabilities.size(); ++i) {
    const bool better = y == 1 ? male_probabilities[i] < male_probabilities[best]
                               : male_probabilities[i] > male_probabilities[best];
    if (better) best = i;
  }
  return static_cast<int>(best) + 1;
}

Selection ens_best(const SanChain& chain, const Image& image, int y, const GenderClassifier<float>& classifier,
                   const GenderPrototypes& prototypes, int t) {
  require_depth(chain, t);
  std::vector<Image> outputs;
  for (int k = 0; k < t; ++k) outputs.push_back(perturb_one(chain.members[static_cast<std::size_t>(k)], image, prototypes, y));
  const std::vector<double> probs = classifier.predict(outputs);
  const int member = best_member(probs, y);
  return {std::move(outputs[static_cast<std::size_t>(member - 1)]), member};
}

PerturbationTrace trace(const SanChain& chain, const Image& original, const GenderPrototypes& prototypes, int y,
                        int depth, std::uint64_t gibbs_seed) {
  require_depth(chain, depth);
  PerturbationTrace tr;
  tr.original = original;
  tr.mode = chain.mode;
  Image current = original;
  for (int k = 0; k < depth; ++k) {
    const auto& member = chain.members[static_cast<std::size_t>(k)];
    if (chain.mode == ChainMode::flow) {
      current = perturb_one(member, current, prototypes, y);
      tr.outputs.push_back(current);
    } else {
      tr.outputs.push_back(perturb_one(member, original, prototypes, y));
    }
    tr.members.push_back(k + 1);
  }
  if (chain.mode == ChainMode::ensemble) {
    tr.gibbs_seed = gibbs_seed;
    tr.gibbs_member = gibbs_select(depth, gibbs_seed);
  }
  return tr;
}

void write_trace_grid(const PerturbationTrace& trace, const std::filesystem::path& path) {
  std::vector<Image> panels{trace.original};
  panels.insert(panels.end(), trace.outputs.begin(), trace.outputs.end());
  write_pgm(path, tile_horizontal(panels));
}

}  // namespace flowsan
