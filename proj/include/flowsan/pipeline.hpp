#pragma once

// End-to-end experiment runner: configuration, run-directory layout and the
// gen-data / train / evaluate / demo commands.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsan/data.hpp"
#include "flowsan/evaluation.hpp"
#include "flowsan/models.hpp"
#include "flowsan/training.hpp"

namespace flowsan {

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";

  GenerationSpec data;  // data.seed is derived from `seed`
  PartitionFractions fractions;
  int eval_datasets = 2;

  int ensemble_size = 5;
  int replication = 40;
  ConvNetConfig aux_classifier;
  ClassifierTrainConfig aux_classifier_train;
  ConvNetConfig aux_matcher;
  MatcherTrainConfig aux_matcher_train;

  std::vector<ConvNetConfig> unseen_classifiers;
  ClassifierTrainConfig unseen_classifier_train;
  std::vector<ConvNetConfig> unseen_matchers;
  MatcherTrainConfig unseen_matcher_train;

  TrainConfig san;  // ensemble member training; san.seed is derived from `seed`
  int flow_epochs = 10;
  double flow_learning_rate = 1e-3;
  bool concurrent_members = false;

  EvalConfig eval;
  std::vector<int> summary_sizes{3, 5};

  RunConfig();
};

void validate(const RunConfig& cfg);

// Every key is optional; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Per-component seeds fanned out from the global seed.
struct RunSeeds {
  std::uint64_t dataset;
  std::uint64_t ensemble;
  std::uint64_t flow;
  std::uint64_t protocol;
  std::uint64_t gibbs;
  std::vector<std::uint64_t> eval_datasets;  // extra evaluation datasets 2..k
  std::vector<std::uint64_t> aux_classifiers;
  std::uint64_t aux_matcher;
  std::vector<std::uint64_t> unseen_classifiers;
  std::vector<std::uint64_t> unseen_matchers;
};

RunSeeds run_seeds(const RunConfig& cfg);

// Directory layout of one run.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path aux() const { return root / "models" / "aux"; }
  std::filesystem::path unseen() const { return root / "models" / "unseen"; }
  std::filesystem::path ensemble() const { return root / "ensemble"; }
  std::filesystem::path flowsan() const { return root / "flowsan"; }
  std::filesystem::path demo() const { return root / "demo"; }
};

struct LoadedData {
  DatasetPartition partition;
  std::vector<FaceDataset> eval;  // primary eval split first
  GenderPrototypes prototypes;
};

struct LoadedModels {
  std::vector<GenderClassifier<float>> aux_classifiers;
  FaceMatcher<float> aux_matcher;
  std::vector<GenderClassifier<float>> unseen_classifiers;
  std::vector<FaceMatcher<float>> unseen_matchers;
};

void cmd_gen_data(const RunConfig& cfg);
void cmd_train_aux(const RunConfig& cfg);
void cmd_train_ensemble(const RunConfig& cfg);
void cmd_train_flowsan(const RunConfig& cfg);
EvalReport cmd_evaluate(const RunConfig& cfg);

struct DemoOptions {
  std::optional<std::filesystem::path> image;  // first evaluation sample when absent
  std::optional<int> label;                    // predicted by auxiliary G_1 when absent
  ChainMode mode = ChainMode::flow;
  int depth = 0;  // 0 = full chain
};

// Returns the path of the written grid; annotations go to a .txt sidecar.
std::filesystem::path cmd_demo(const RunConfig& cfg, const DemoOptions& options);

LoadedData load_data(const RunConfig& cfg);
LoadedModels load_models(const RunConfig& cfg);

// Directory holding report.csv for the configured evaluation settings.
std::filesystem::path evaluation_dir(const RunConfig& cfg);

// "1..5" or "3" -> depth list.
std::vector<int> parse_depth_range(const std::string& text);
// "0.01,0.001" -> FMR list.
std::vector<double> parse_fmr_list(const std::string& text);

}  // namespace flowsan
