#pragma once

// Depth-sweep evaluation of SAN chains against unseen gender classifiers and
// unseen face matchers, with CSV/JSON reports and line-chart plots.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsan/inference.hpp"
#include "flowsan/metrics.hpp"
#include "flowsan/models.hpp"

namespace flowsan {

template <class M>
struct Named {
  std::string name;
  const M* model = nullptr;
};

struct EvalInputs {
  std::vector<Named<SanChain>> chains;
  std::vector<Named<GenderClassifier<float>>> classifiers;
  std::vector<Named<FaceMatcher<float>>> matchers;
  std::vector<Named<FaceDataset>> datasets;
  const GenderPrototypes* prototypes = nullptr;
};

struct EvalConfig {
  std::vector<int> depths{1, 2, 3, 4, 5};
  std::vector<double> fmrs{0.01, 0.001};
  MatchProtocolConfig protocol;
  std::uint64_t gibbs_seed = 1;
};

void validate(const EvalConfig& cfg);

// Mode names used in report rows.
inline constexpr const char* kModeOriginal = "orig";
inline constexpr const char* kModeFlow = "flow";
inline constexpr const char* kModeAverage = "ens-avg";
inline constexpr const char* kModeGibbs = "ens-gibbs";
inline constexpr const char* kModeBest = "ens-best";

// "tmr@0.01" style metric name.
std::string tmr_metric(double fmr);

struct ReportRow {
  std::string chain_id;
  std::string mode;
  int depth = 0;
  std::string dataset;
  std::string model;
  std::string metric;
  double value = 0;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  // Unweighted mean over every matching (model, dataset) cell; NaN when none match.
  double mean(const std::string& mode, int depth, const std::string& metric) const;
  std::vector<int> depths(const std::string& mode) const;
};

// Depth 0 rows hold the original-image baseline. Ensemble chains yield
// ens-avg, ens-gibbs and per-classifier oracle ens-best rows for every depth up
// to the chain size; flow chains yield stacked rows.
EvalReport evaluate_suite(const EvalInputs& inputs, const EvalConfig& cfg);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
nlohmann::json report_aggregates(const EvalReport& report);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);

// Metric against depth, one line per mode, as an SVG chart.
void plot_metric(const EvalReport& report, const std::string& metric, const std::filesystem::path& path);

// Orig / Ens-Avg / Ens-Gibbs / Ens-Best / FlowSAN rows with mean EER and TMR at
// each ensemble size n.
std::string summary_table(const EvalReport& report, const std::vector<int>& sizes, double fmr);

}  // namespace flowsan
