#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowsan/checkpoint.hpp"
#include "flowsan/log.hpp"
#include "flowsan/pipeline.hpp"

using namespace flowsan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig smoke(const std::string& name) {
  RunConfig cfg = load_run_config(fs::path(FLOWSAN_SOURCE_DIR) / "configs" / "smoke.json");
  cfg.out = fs::temp_directory_path() / ("flowsan_test_run_" + name);
  return cfg;
}

struct CaptureLog {
  std::vector<std::string> info, warnings;
  LogSink previous;
  CaptureLog() {
    previous = set_log_sink([this](LogLevel level, const std::string& m) {
      (level == LogLevel::warning ? warnings : info).push_back(m);
    });
  }
  ~CaptureLog() { set_log_sink(previous); }
  bool saw(const std::string& needle) const {
    for (const auto& m : info)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
};

// One complete smoke run shared by the tests below.
struct SmokeRun {
  RunConfig cfg = smoke("main");
  EvalReport report;
  SmokeRun() {
    CaptureLog quiet;
    fs::remove_all(cfg.out);
    cmd_gen_data(cfg);
    cmd_train_aux(cfg);
    cmd_train_ensemble(cfg);
    cmd_train_flowsan(cfg);
    report = cmd_evaluate(cfg);
  }
  static const SmokeRun& get() {
    static const SmokeRun r;
    return r;
  }
};

}  // namespace

TEST_CASE("default configuration") {
  const RunConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  CHECK(cfg.ensemble_size == 5);
  CHECK(cfg.replication == 40);
  CHECK(cfg.san.batch_size == 32);
  CHECK(cfg.san.epochs == 15);
  CHECK(cfg.flow_epochs == 10);
  CHECK(cfg.san.scheme == PixelwiseScheme::against_original);
  CHECK(cfg.eval.depths == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(cfg.summary_sizes == std::vector<int>{3, 5});
}

TEST_CASE("config JSON round trip and unknown keys") {
  const RunConfig a = smoke("json");
  const RunConfig b = run_config_from_json(to_json(a));
  CHECK(to_json(a) == to_json(b));
  CHECK(a.ensemble_size == 3);
  CHECK(a.data.height == 16);

  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"san", {{"epoch", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"san", {{"epochs", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"aux", {{"n", 0}}}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/flowsan.json"), IoError);
}

TEST_CASE("depth and FMR parsing") {
  CHECK(parse_depth_range("1..5") == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(parse_depth_range("3") == std::vector<int>{3});
  CHECK(parse_depth_range("2..3") == std::vector<int>{2, 3});
  CHECK_THROWS_AS(parse_depth_range("5..1"), ConfigError);
  CHECK_THROWS_AS(parse_depth_range("0..2"), ConfigError);
  CHECK_THROWS_AS(parse_depth_range("a..b"), ConfigError);
  CHECK(parse_fmr_list("0.01,0.001") == std::vector<double>{0.01, 0.001});
  CHECK_THROWS_AS(parse_fmr_list("0.01,x"), ConfigError);
  CHECK_THROWS_AS(parse_fmr_list(""), ConfigError);
}

TEST_CASE("seeds fan out deterministically") {
  RunConfig a, b;
  b.seed = 2;
  const RunSeeds sa = run_seeds(a), sa2 = run_seeds(a), sb = run_seeds(b);
  CHECK(sa.dataset == sa2.dataset);
  CHECK(sa.aux_classifiers == sa2.aux_classifiers);
  CHECK(sa.dataset != sb.dataset);
  CHECK(sa.ensemble != sa.flow);
  CHECK(sa.aux_classifiers.size() == 5);
}

TEST_CASE("flowsan training without an ensemble names the missing members directory") {
  RunConfig cfg = smoke("missing");
  fs::remove_all(cfg.out);
  CaptureLog quiet;
  cmd_gen_data(cfg);
  try {
    cmd_train_flowsan(cfg);
    FAIL("expected a usage error");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("members/") != std::string::npos);
  }
  CHECK_THROWS_AS(cmd_evaluate(cfg), UsageError);
  fs::remove_all(cfg.out);
}

TEST_CASE("data generation is idempotent and run directories are append-only") {
  RunConfig cfg = smoke("data");
  fs::remove_all(cfg.out);
  CaptureLog log;
  cmd_gen_data(cfg);
  CHECK(fs::exists(cfg.out / "run.json"));
  for (const char* split : {"aux_train", "san_train", "unseen_train", "eval_1", "eval_2"})
    CHECK(fs::exists(cfg.out / "data" / split / "manifest.json"));
  const std::string before = slurp(cfg.out / "data" / "eval_1" / "images.bin");
  cmd_gen_data(cfg);
  CHECK(log.saw("up to date"));
  CHECK(slurp(cfg.out / "data" / "eval_1" / "images.bin") == before);

  RunConfig reseeded = cfg;
  reseeded.seed = 99;
  CHECK_THROWS_AS(cmd_gen_data(reseeded), UsageError);
  reseeded.out = fs::temp_directory_path() / "flowsan_test_run_data_reseeded";
  fs::remove_all(reseeded.out);
  cmd_gen_data(reseeded);
  CHECK(dataset_hash(load_dataset(reseeded.out / "data" / "eval_1")) !=
        dataset_hash(load_dataset(cfg.out / "data" / "eval_1")));
  fs::remove_all(cfg.out);
  fs::remove_all(reseeded.out);
}

TEST_CASE("a complete run has the documented layout") {
  const SmokeRun& run = SmokeRun::get();
  const fs::path root = run.cfg.out;
  CHECK(fs::exists(root / "run.json"));
  for (int i = 1; i <= 3; ++i) {
    const std::string m = "san_" + std::to_string(i);
    CHECK(checkpoint_role(root / "ensemble" / "members" / m) == "san");
    CHECK(fs::exists(root / "ensemble" / "members" / m / "training_log.csv"));
    CHECK(checkpoint_role(root / "flowsan" / "members" / m) == "san");
    CHECK(fs::exists(root / "flowsan" / "transformed" / ("stage_" + std::to_string(i)) / "images.bin"));
  }
  CHECK(!fs::exists(root / "ensemble" / "members" / "san_4"));
  CHECK(load_chain(root / "flowsan" / "members").mode == ChainMode::flow);
  for (const char* f : {"report.csv", "report.json", "auc.svg", "eer.svg", "summary.txt"})
    CHECK(fs::exists(root / "evaluation" / f));
}

TEST_CASE("report row counts") {
  const SmokeRun& run = SmokeRun::get();
  const std::size_t depths = 3, datasets = 2, classifiers = 2, matchers = 1, fmrs = 2;
  auto count = [&](const std::string& mode, const std::string& metric) {
    std::size_t n = 0;
    for (const auto& r : run.report.rows) n += r.mode == mode && r.metric == metric;
    return n;
  };
  CHECK(count(kModeOriginal, "auc") == datasets * classifiers);
  for (const char* mode : {kModeFlow, kModeAverage, kModeGibbs, kModeBest}) {
    CAPTURE(mode);
    CHECK(count(mode, "auc") == depths * datasets * classifiers);
    CHECK(count(mode, "eer") == depths * datasets * classifiers);
    CHECK(count(mode, "gap") == depths * datasets * classifiers);
  }
  CHECK(count(kModeFlow, "tmr@0.01") == depths * datasets * matchers);
  CHECK(count(kModeFlow, "tmr@0.001") == depths * datasets * matchers);
  CHECK(count(kModeOriginal, "tmr@0.01") == datasets * matchers);
  for (const auto& r : run.report.rows) {
    if (r.metric == "auc" || r.metric == "eer" || r.metric.rfind("tmr", 0) == 0) {
      CHECK(r.value >= 0.0);
      CHECK(r.value <= 1.0);
    }
  }
  CHECK(run.report.depths(kModeFlow) == std::vector<int>{1, 2, 3});
  (void)fmrs;
  const std::string summary = slurp(run.cfg.out / "evaluation" / "summary.txt");
  for (const char* row : {"Orig", "Ens-Avg", "Ens-Gibbs", "Ens-Best", "FlowSAN"}) CHECK(summary.find(row) != std::string::npos);
}

TEST_CASE("depth-0 rows reproduce classifier AUC on the original images") {
  const SmokeRun& run = SmokeRun::get();
  const LoadedData data = load_data(run.cfg);
  const LoadedModels models = load_models(run.cfg);
  const FaceDataset& eval = data.eval.front();
  for (std::size_t i = 0; i < models.unseen_classifiers.size(); ++i) {
    const double auc = roc_auc({models.unseen_classifiers[i].predict(eval.images()), eval.genders()});
    bool found = false;
    for (const auto& r : run.report.rows) {
      if (r.mode == kModeOriginal && r.metric == "auc" && r.dataset == "eval_1" &&
          r.model == "G_unseen_" + std::to_string(i + 1)) {
        CHECK(r.value == auc);
        CHECK(r.depth == 0);
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("rerunning commands is a no-op and evaluation is deterministic") {
  const SmokeRun& run = SmokeRun::get();
  const std::string csv = slurp(run.cfg.out / "evaluation" / "report.csv");
  const std::string json = slurp(run.cfg.out / "evaluation" / "report.json");
  const std::uint64_t member = checkpoint_hash(run.cfg.out / "flowsan" / "members" / "san_2");
  CaptureLog log;
  cmd_train_aux(run.cfg);
  cmd_train_ensemble(run.cfg);
  cmd_train_flowsan(run.cfg);
  CHECK(log.saw("up to date"));
  cmd_evaluate(run.cfg);
  CHECK(slurp(run.cfg.out / "evaluation" / "report.csv") == csv);
  CHECK(slurp(run.cfg.out / "evaluation" / "report.json") == json);
  CHECK(checkpoint_hash(run.cfg.out / "flowsan" / "members" / "san_2") == member);
}

TEST_CASE("changed evaluation settings write a separate directory") {
  const SmokeRun& run = SmokeRun::get();
  RunConfig cfg = run.cfg;
  cfg.eval.depths = {1, 2};
  CaptureLog quiet;
  const EvalReport r = cmd_evaluate(cfg);
  const fs::path dir = evaluation_dir(cfg);
  CHECK(dir != run.cfg.out / "evaluation");
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(r.depths(kModeFlow) == std::vector<int>{1, 2});
  CHECK(evaluation_dir(run.cfg) == run.cfg.out / "evaluation");
}

TEST_CASE("same configuration and seed give identical checkpoints") {
  const SmokeRun& run = SmokeRun::get();
  RunConfig twin = run.cfg;
  twin.out = fs::temp_directory_path() / "flowsan_test_run_twin";
  fs::remove_all(twin.out);
  CaptureLog quiet;
  cmd_gen_data(twin);
  cmd_train_aux(twin);
  cmd_train_ensemble(twin);
  for (int i = 1; i <= 3; ++i) {
    const std::string m = "san_" + std::to_string(i);
    CHECK(checkpoint_hash(twin.out / "ensemble" / "members" / m) ==
          checkpoint_hash(run.cfg.out / "ensemble" / "members" / m));
  }
  fs::remove_all(twin.out);
}

TEST_CASE("demo writes a grid with one panel per depth plus annotations") {
  const SmokeRun& run = SmokeRun::get();
  CaptureLog quiet;
  DemoOptions opts;
  opts.depth = 2;
  const fs::path grid = cmd_demo(run.cfg, opts);
  const Image img = read_pgm(grid);
  CHECK(img.width == 3 * 16 + 2);
  fs::path notes = grid;
  notes.replace_extension(".txt");
  const std::string text = slurp(notes);
  CHECK(text.find("P(Male)") != std::string::npos);
  CHECK(text.find("match|M_unseen_1") != std::string::npos);
  CHECK(text.find("depth 2") != std::string::npos);
  const std::string first = slurp(grid);
  cmd_demo(run.cfg, opts);
  CHECK(slurp(grid) == first);
  CHECK(slurp(notes) == text);

  opts.image = run.cfg.out / "missing.pgm";
  CHECK_THROWS_AS(cmd_demo(run.cfg, opts), IoError);
  opts.image.reset();
  opts.depth = 4;
  CHECK_THROWS_AS(cmd_demo(run.cfg, opts), UsageError);
}
