#pragma once

// Chain evaluation: stacked application (flow), ensemble averaging and random
// selection, and the oracle best-perturbed selector.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowsan/data.hpp"
#include "flowsan/models.hpp"

namespace flowsan {

enum class ChainMode { ensemble, flow };

std::string to_string(ChainMode mode);
ChainMode chain_mode_from_string(const std::string& name);

struct MemberProvenance {
  int classifier_index = 0;  // auxiliary classifier G_i used to train this member
  int order = 0;             // 1-based training order t
  std::uint64_t seed = 0;
};

struct SanChain {
  std::vector<SanModel<float>> members;
  ChainMode mode = ChainMode::ensemble;
  std::vector<MemberProvenance> provenance;

  int size() const { return static_cast<int>(members.size()); }
};

// Throws UsageError unless 1 <= t <= chain.size().
void require_depth(const SanChain& chain, int t);

// Encoder conditioned on p_same; p_fuse is the prototype appended before the 1x1 fusion.
Image san_forward(const SanModel<float>& san, const Image& image, const Image& p_same, const Image& p_fuse);

// Opposite-prototype outputs I' for a batch of labelled images.
std::vector<Image> san_perturb(const SanModel<float>& san, const std::vector<Image>& images,
                               const std::vector<int>& labels, const GenderPrototypes& prototypes,
                               int batch_size = 64);

// Stacked application: t=1 -> SAN_1(I), t>1 -> SAN_t(psi(I, t-1)).
Image psi(const SanChain& chain, const Image& original, int t, const GenderPrototypes& prototypes, int y);
Image psi_iterative(const SanChain& chain, const Image& original, int t, const GenderPrototypes& prototypes, int y);

// Member selections report the 1-based member number.
struct Selection {
  Image image;
  int member = 0;
};

Image ens_avg(const SanChain& chain, const Image& image, const GenderPrototypes& prototypes, int y, int t);

// Pixelwise mean of member outputs, accumulated in double.
Image average_images(const std::vector<const Image*>& images);

int gibbs_select(int t, std::uint64_t seed);
Selection ens_gibbs(const SanChain& chain, const Image& image, const GenderPrototypes& prototypes, int y, int t,
                    std::uint64_t seed);

// y=1 picks the lowest P(Male), y=0 the highest; ties go to the lowest member.
int best_member(std::span<const double> male_probabilities, int y);
Selection ens_best(const SanChain& chain, const Image& image, int y, const GenderClassifier<float>& classifier,
                   const GenderPrototypes& prototypes, int t);

struct PerturbationTrace {
  Image original;
  std::vector<Image> outputs;
  ChainMode mode = ChainMode::flow;
  std::vector<int> members;  // 1-based member per output
  int gibbs_member = 0;
  std::uint64_t gibbs_seed = 0;
};

// Flow chains record psi(I, 1..depth); ensemble chains record each member's own
// output plus the Gibbs pick over the first `depth` members.
PerturbationTrace trace(const SanChain& chain, const Image& original, const GenderPrototypes& prototypes, int y,
                        int depth, std::uint64_t gibbs_seed = 0);

// Original followed by every output, side by side.
void write_trace_grid(const PerturbationTrace& trace, const std::filesystem::path& path);

}  // namespace flowsan
