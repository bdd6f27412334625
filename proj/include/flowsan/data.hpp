#pragma once

// Synthetic face-like dataset, gender prototypes and the cohort resampling
// used to diversify auxiliary gender classifiers.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "flowsan/image.hpp"

namespace flowsan {

enum class Split { full, aux_train, san_train, unseen_train, eval };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct FaceSample {
  Image image;
  int gender = 0;    // 1 = male, 0 = female
  int identity = 0;  // subject id, shared gender across a subject's samples
  int cohort = 0;    // 1 = minority cohort
};

struct GenerationSpec {
  int n_identities = 240;
  int samples_per_identity = 8;
  int height = 32;
  int width = 32;
  double cohort_fraction = 0.2;
  std::uint64_t seed = 7;

  friend bool operator==(const GenerationSpec&, const GenerationSpec&) = default;
};

struct FaceDataset {
  std::vector<FaceSample> samples;
  Split split = Split::full;
  GenerationSpec spec;

  std::size_t size() const { return samples.size(); }
  std::uint64_t seed() const { return spec.seed; }
  std::vector<Image> images() const;
  std::vector<int> genders() const;
};

// Identity-disjoint fractions; the remainder after aux/san/unseen goes to eval.
struct PartitionFractions {
  double aux_train = 0.3;
  double san_train = 0.3;
  double unseen_train = 0.2;
};

struct DatasetPartition {
  FaceDataset aux_train;
  FaceDataset san_train;
  FaceDataset unseen_train;
  FaceDataset eval;
};

struct GenderPrototypes {
  Image female;
  Image male;
};

struct PrototypePair {
  const Image& same;
  const Image& opposite;
};

void validate(const GenerationSpec& spec);

FaceDataset generate_dataset(const GenerationSpec& spec);

DatasetPartition partition_dataset(const FaceDataset& full, const PartitionFractions& fractions = {});

GenderPrototypes compute_prototypes(const FaceDataset& dataset);

// y = 1 -> (male, female); y = 0 -> (female, male).
PrototypePair select_prototypes(const GenderPrototypes& prototypes, int y);

// Minority-cohort samples split into n_members disjoint subsets; subset
// member_index is appended `replication` times.
FaceDataset resample_for_diversity(const FaceDataset& dataset, int member_index, int n_members,
                                   int replication);

// Subset indices used by resample_for_diversity, exposed for inspection.
std::vector<std::vector<std::size_t>> minority_subsets(const FaceDataset& dataset, int n_members);

// Throws when a dataset breaks the per-sample or per-identity invariants.
void check_invariants(const FaceDataset& dataset);

// Directory with manifest.json + images.bin (float32 little-endian).
void save_dataset(const FaceDataset& dataset, const std::filesystem::path& dir);
FaceDataset load_dataset(const std::filesystem::path& dir);

// Hash over labels and pixel bytes.
std::uint64_t dataset_hash(const FaceDataset& dataset);

}  // namespace flowsan
