#include "flowsan/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "flowsan/checkpoint.hpp"
#include "flowsan/log.hpp"
#include "flowsan/seed.hpp"

namespace flowsan {

namespace fs = std::filesystem;
using json = nlohmann::json;

RunConfig::RunConfig() {
  aux_classifier_train.noise_sigma = 0.1;
  ConvNetConfig u1;
  u1.widths = {12, 24};
  u1.strides = {2, 2};
  u1.hidden = 32;
  ConvNetConfig u2;
  u2.mean_pool = true;
  u2.hidden = 16;
  ConvNetConfig u3;
  u3.widths = {16, 16, 32, 32};
  u3.strides = {1, 2, 2, 2};
  unseen_classifiers = {u1, u2, u3};
  ConvNetConfig m2;
  m2.widths = {12, 24, 48};
  m2.embedding = 48;
  unseen_matchers = {ConvNetConfig{}, m2};
  san.arch.depth = 2;
  san.arch.base_width = 16;
  san.weights = {100.0, 0.01, 1.0};
  san.adam.learning_rate = 3e-3;
  san.epochs = 15;
  eval.protocol.impostor_pairs = 20000;
}

void validate(const RunConfig& cfg) {
  validate(cfg.data);
  if (cfg.eval_datasets < 1) throw ConfigError("data.eval_datasets must be >= 1");
  if (cfg.ensemble_size < 1) throw ConfigError("aux.n must be >= 1");
  if (cfg.replication < 1) throw ConfigError("aux.replication must be >= 1");
  if (cfg.unseen_classifiers.empty()) throw ConfigError("unseen.classifiers must list at least one architecture");
  if (cfg.flow_epochs < 1) throw ConfigError("san.flow_epochs must be positive");
  if (!(cfg.flow_learning_rate >= 0)) throw ConfigError("san.flow_learning_rate must be non-negative");
  validate(cfg.san);
  validate(cfg.eval);
  for (int n : cfg.summary_sizes)
    if (n < 1) throw ConfigError("eval.summary_sizes must be positive");
}

namespace {

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown config key " + where + "." + k);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json classifier_train_json(const ClassifierTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"noise_sigma", c.noise_sigma},
          {"min_train_auc", c.min_train_auc}};
}

void read_classifier_train(const json& j, const std::string& where, ClassifierTrainConfig& c) {
  reject_unknown(j, where, {"epochs", "batch_size", "learning_rate", "noise_sigma", "min_train_auc"});
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "noise_sigma", c.noise_sigma);
  read(j, "min_train_auc", c.min_train_auc);
}

json matcher_train_json(const MatcherTrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}};
}

void read_matcher_train(const json& j, const std::string& where, MatcherTrainConfig& c) {
  reject_unknown(j, where, {"epochs", "batch_size", "learning_rate"});
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
}

ConvNetConfig read_arch(const json& j, const std::string& where) {
  reject_unknown(j, where, {"widths", "strides", "mean_pool", "hidden", "embedding", "leak"});
  return convnet_config_from_json(j);
}

std::vector<ConvNetConfig> read_arch_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list of architectures");
  std::vector<ConvNetConfig> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read_arch(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

json arch_list_json(const std::vector<ConvNetConfig>& archs) {
  json out = json::array();
  for (const auto& a : archs) out.push_back(to_json(a));
  return out;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fingerprint(const json& j) { return fnv1a(j.dump()); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

json to_json(const RunConfig& c) {
  json fractions = {{"aux_train", c.fractions.aux_train},
                    {"san_train", c.fractions.san_train},
                    {"unseen_train", c.fractions.unseen_train}};
  return {
      {"seed", c.seed},
      {"out", c.out.string()},
      {"data",
       {{"n_identities", c.data.n_identities},
        {"samples_per_identity", c.data.samples_per_identity},
        {"height", c.data.height},
        {"width", c.data.width},
        {"cohort_fraction", c.data.cohort_fraction},
        {"fractions", fractions},
        {"eval_datasets", c.eval_datasets}}},
      {"aux",
       {{"n", c.ensemble_size},
        {"replication", c.replication},
        {"classifier", {{"arch", to_json(c.aux_classifier)}, {"train", classifier_train_json(c.aux_classifier_train)}}},
        {"matcher", {{"arch", to_json(c.aux_matcher)}, {"train", matcher_train_json(c.aux_matcher_train)}}}}},
      {"unseen",
       {{"classifiers", arch_list_json(c.unseen_classifiers)},
        {"classifier_train", classifier_train_json(c.unseen_classifier_train)},
        {"matchers", arch_list_json(c.unseen_matchers)},
        {"matcher_train", matcher_train_json(c.unseen_matcher_train)}}},
      {"san",
       {{"arch", to_json(c.san.arch)},
        {"weights",
         {{"pixelwise", c.san.weights.pixelwise},
          {"matching", c.san.weights.matching},
          {"gender", c.san.weights.gender}}},
        {"scheme", to_string(c.san.scheme)},
        {"epochs", c.san.epochs},
        {"batch_size", c.san.batch_size},
        {"learning_rate", c.san.adam.learning_rate},
        {"flow_epochs", c.flow_epochs},
        {"flow_learning_rate", c.flow_learning_rate},
        {"concurrent_members", c.concurrent_members}}},
      {"eval",
       {{"depths", c.eval.depths},
        {"fmrs", c.eval.fmrs},
        {"impostor_pairs", c.eval.protocol.impostor_pairs},
        {"summary_sizes", c.summary_sizes}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    reject_unknown(j, "config", {"seed", "out", "data", "aux", "unseen", "san", "eval", "seeds"});
    read(j, "seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, "data",
                     {"n_identities", "samples_per_identity", "height", "width", "cohort_fraction", "fractions",
                      "eval_datasets"});
      read(d, "n_identities", c.data.n_identities);
      read(d, "samples_per_identity", c.data.samples_per_identity);
      read(d, "height", c.data.height);
      read(d, "width", c.data.width);
      read(d, "cohort_fraction", c.data.cohort_fraction);
      read(d, "eval_datasets", c.eval_datasets);
      if (d.contains("fractions")) {
        const json& f = d.at("fractions");
        reject_unknown(f, "data.fractions", {"aux_train", "san_train", "unseen_train"});
        read(f, "aux_train", c.fractions.aux_train);
        read(f, "san_train", c.fractions.san_train);
        read(f, "unseen_train", c.fractions.unseen_train);
      }
    }
    if (j.contains("aux")) {
      const json& a = j.at("aux");
      reject_unknown(a, "aux", {"n", "replication", "classifier", "matcher"});
      read(a, "n", c.ensemble_size);
      read(a, "replication", c.replication);
      if (a.contains("classifier")) {
        const json& g = a.at("classifier");
        reject_unknown(g, "aux.classifier", {"arch", "train"});
        if (g.contains("arch")) c.aux_classifier = read_arch(g.at("arch"), "aux.classifier.arch");
        if (g.contains("train")) read_classifier_train(g.at("train"), "aux.classifier.train", c.aux_classifier_train);
      }
      if (a.contains("matcher")) {
        const json& m = a.at("matcher");
        reject_unknown(m, "aux.matcher", {"arch", "train"});
        if (m.contains("arch")) c.aux_matcher = read_arch(m.at("arch"), "aux.matcher.arch");
        if (m.contains("train")) read_matcher_train(m.at("train"), "aux.matcher.train", c.aux_matcher_train);
      }
    }
    if (j.contains("unseen")) {
      const json& u = j.at("unseen");
      reject_unknown(u, "unseen", {"classifiers", "classifier_train", "matchers", "matcher_train"});
      if (u.contains("classifiers")) c.unseen_classifiers = read_arch_list(u.at("classifiers"), "unseen.classifiers");
      if (u.contains("matchers")) c.unseen_matchers = read_arch_list(u.at("matchers"), "unseen.matchers");
      if (u.contains("classifier_train")) {
        read_classifier_train(u.at("classifier_train"), "unseen.classifier_train", c.unseen_classifier_train);
      }
      if (u.contains("matcher_train")) {
        read_matcher_train(u.at("matcher_train"), "unseen.matcher_train", c.unseen_matcher_train);
      }
    }
    if (j.contains("san")) {
      const json& s = j.at("san");
      reject_unknown(s, "san",
                     {"arch", "weights", "scheme", "epochs", "batch_size", "learning_rate", "flow_epochs",
                      "flow_learning_rate", "concurrent_members"});
      if (s.contains("arch")) {
        reject_unknown(s.at("arch"), "san.arch", {"channels", "depth", "base_width", "leak"});
        c.san.arch = san_config_from_json(s.at("arch"));
      }
      if (s.contains("weights")) {
        const json& w = s.at("weights");
        reject_unknown(w, "san.weights", {"pixelwise", "matching", "gender"});
        read(w, "pixelwise", c.san.weights.pixelwise);
        read(w, "matching", c.san.weights.matching);
        read(w, "gender", c.san.weights.gender);
      }
      if (s.contains("scheme")) c.san.scheme = pixelwise_scheme_from_string(s.at("scheme").get<std::string>());
      read(s, "epochs", c.san.epochs);
      read(s, "batch_size", c.san.batch_size);
      read(s, "learning_rate", c.san.adam.learning_rate);
      read(s, "flow_epochs", c.flow_epochs);
      read(s, "flow_learning_rate", c.flow_learning_rate);
      read(s, "concurrent_members", c.concurrent_members);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      reject_unknown(e, "eval", {"depths", "fmrs", "impostor_pairs", "summary_sizes"});
      read(e, "depths", c.eval.depths);
      read(e, "fmrs", c.eval.fmrs);
      read(e, "impostor_pairs", c.eval.protocol.impostor_pairs);
      read(e, "summary_sizes", c.summary_sizes);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json_file(path)); }

RunSeeds run_seeds(const RunConfig& cfg) {
  RunSeeds s;
  s.dataset = derive_seed(cfg.seed, "dataset", 0);
  s.ensemble = derive_seed(cfg.seed, "ensemble");
  s.flow = derive_seed(cfg.seed, "flow");
  s.protocol = derive_seed(cfg.seed, "match-protocol");
  s.gibbs = derive_seed(cfg.seed, "gibbs");
  for (int k = 1; k < cfg.eval_datasets; ++k) s.eval_datasets.push_back(derive_seed(cfg.seed, "dataset", k));
  for (int i = 0; i < cfg.ensemble_size; ++i) s.aux_classifiers.push_back(derive_seed(cfg.seed, "aux-classifier", i));
  s.aux_matcher = derive_seed(cfg.seed, "aux-matcher");
  for (std::size_t i = 0; i < cfg.unseen_classifiers.size(); ++i) {
    s.unseen_classifiers.push_back(derive_seed(cfg.seed, "unseen-classifier", i));
  }
  for (std::size_t i = 0; i < cfg.unseen_matchers.size(); ++i) {
    s.unseen_matchers.push_back(derive_seed(cfg.seed, "unseen-matcher", i));
  }
  return s;
}

namespace {

json seeds_json(const RunSeeds& s) {
  return {{"dataset", s.dataset},
          {"eval_datasets", s.eval_datasets},
          {"aux_classifiers", s.aux_classifiers},
          {"aux_matcher", s.aux_matcher},
          {"unseen_classifiers", s.unseen_classifiers},
          {"unseen_matchers", s.unseen_matchers},
          {"ensemble", s.ensemble},
          {"flow", s.flow},
          {"match_protocol", s.protocol},
          {"gibbs", s.gibbs}};
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

// run.json pins the configuration of a run directory. Evaluation settings may
// differ between evaluate calls; they select their own output directory.
void ensure_manifest(const RunConfig& cfg) {
  const fs::path path = cfg.out / "run.json";
  json manifest = to_json(cfg);
  manifest["seeds"] = seeds_json(run_seeds(cfg));
  if (fs::exists(path)) {
    const json existing = read_json_file(path);
    if (without(existing, {"out", "eval"}) != without(manifest, {"out", "eval"})) {
      throw UsageError(path.string() +
                       " was written for a different configuration; run directories are append-only, choose a new --out");
    }
    return;
  }
  write_json_file(manifest, path);
}

json stage_inputs(const RunConfig& cfg, const std::string& stage) {
  const json all = to_json(cfg);
  json in = {{"seed", all["seed"]}, {"data", all["data"]}};
  if (stage == "data") return in;
  in["aux"] = all["aux"];
  in["unseen"] = all["unseen"];
  if (stage == "models") return in;
  in["san"] = all["san"];
  if (stage == "ensemble" || stage == "flowsan") return in;
  in["eval"] = all["eval"];
  return in;
}

// True when the stage already completed with the same inputs. A directory left
// by an interrupted run is cleared; one completed under other inputs is an error.
bool stage_done(const fs::path& dir, const std::string& stage, std::uint64_t fp) {
  const fs::path stamp = dir / "stage.json";
  if (fs::exists(stamp)) {
    const json j = read_json_file(stamp);
    if (j.value("fingerprint", "") == hex(fp)) {
      log_info(stage + " up to date (" + dir.string() + ")");
      return true;
    }
    throw UsageError(dir.string() + " holds " + stage +
                     " outputs from a different configuration; run directories are append-only, choose a new --out");
  }
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);
  return false;
}

void finish_stage(const fs::path& dir, const std::string& stage, std::uint64_t fp, json extra = json::object()) {
  extra["stage"] = stage;
  extra["fingerprint"] = hex(fp);
  write_json_file(extra, dir / "stage.json");
}

void require_stage(const fs::path& dir, const std::string& what, const std::string& command) {
  if (!fs::exists(dir / "stage.json")) {
    throw UsageError("missing " + what + " in " + dir.string() + "/; run `flowsan " + command + "` first");
  }
}

std::string dataset_dir(int k) { return "eval_" + std::to_string(k); }

FaceDataset merge(FaceDataset a, const FaceDataset& b) {
  a.samples.insert(a.samples.end(), b.samples.begin(), b.samples.end());
  return a;
}

}  // namespace

std::vector<int> parse_depth_range(const std::string& text) {
  auto number = [&](std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("invalid depth range '" + text + "'");
    return v;
  };
  const auto dots = text.find("..");
  const std::string_view all(text);
  const int lo = number(dots == std::string::npos ? all : all.substr(0, dots));
  const int hi = dots == std::string::npos ? lo : number(all.substr(dots + 2));
  if (lo < 1 || hi < lo) throw ConfigError("depth range must satisfy 1 <= A <= B, got '" + text + "'");
  std::vector<int> out;
  for (int d = lo; d <= hi; ++d) out.push_back(d);
  return out;
}

std::vector<double> parse_fmr_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid FMR list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty FMR list");
  return out;
}

void cmd_gen_data(const RunConfig& cfg) {
  validate(cfg);
  ensure_manifest(cfg);
  const RunPaths paths{cfg.out};
  const std::uint64_t fp = fingerprint(stage_inputs(cfg, "data"));
  if (stage_done(paths.data(), "data", fp)) return;
  const RunSeeds seeds = run_seeds(cfg);
  GenerationSpec spec = cfg.data;
  spec.seed = seeds.dataset;
  const DatasetPartition part = partition_dataset(generate_dataset(spec), cfg.fractions);
  json hashes;
  auto save = [&](const FaceDataset& d, const std::string& name) {
    save_dataset(d, paths.data() / name);
    hashes[name] = hex(dataset_hash(d));
  };
  save(part.aux_train, "aux_train");
  save(part.san_train, "san_train");
  save(part.unseen_train, "unseen_train");
  save(part.eval, dataset_dir(1));
  for (int k = 2; k <= cfg.eval_datasets; ++k) {
    GenerationSpec extra = cfg.data;
    extra.seed = seeds.eval_datasets[static_cast<std::size_t>(k - 2)];
    save(partition_dataset(generate_dataset(extra), cfg.fractions).eval, dataset_dir(k));
  }
  finish_stage(paths.data(), "data", fp, {{"hashes", hashes}});
  log_info("datasets written to " + paths.data().string());
}

LoadedData load_data(const RunConfig& cfg) {
  const RunPaths paths{cfg.out};
  require_stage(paths.data(), "datasets", "gen-data");
  LoadedData d;
  d.partition.aux_train = load_dataset(paths.data() / "aux_train");
  d.partition.san_train = load_dataset(paths.data() / "san_train");
  d.partition.unseen_train = load_dataset(paths.data() / "unseen_train");
  d.partition.eval = load_dataset(paths.data() / dataset_dir(1));
  d.eval.push_back(d.partition.eval);
  for (int k = 2; k <= cfg.eval_datasets; ++k) d.eval.push_back(load_dataset(paths.data() / dataset_dir(k)));
  d.prototypes = compute_prototypes(merge(d.partition.aux_train, d.partition.san_train));
  return d;
}

void cmd_train_aux(const RunConfig& cfg) {
  validate(cfg);
  ensure_manifest(cfg);
  const RunPaths paths{cfg.out};
  const LoadedData data = load_data(cfg);
  const fs::path models = cfg.out / "models";
  const std::uint64_t fp = fingerprint(stage_inputs(cfg, "models"));
  if (stage_done(models, "auxiliary and unseen models", fp)) return;
  const RunSeeds seeds = run_seeds(cfg);
  const auto& part = data.partition;

  json summary;
  for (int i = 0; i < cfg.ensemble_size; ++i) {
    ClassifierTrainConfig tc = cfg.aux_classifier_train;
    tc.seed = seeds.aux_classifiers[static_cast<std::size_t>(i)];
    const FaceDataset resampled = resample_for_diversity(part.aux_train, i, cfg.ensemble_size, cfg.replication);
    const auto g = train_gender_classifier(resampled, cfg.aux_classifier, tc);
    save_checkpoint(g, paths.aux() / ("G_" + std::to_string(i + 1)));
    summary["aux_classifier_train_samples"].push_back(resampled.size());
    log_info("trained auxiliary gender classifier G_" + std::to_string(i + 1));
  }
  MatcherTrainConfig mc = cfg.aux_matcher_train;
  mc.seed = seeds.aux_matcher;
  save_checkpoint(train_face_matcher(merge(part.aux_train, part.san_train), cfg.aux_matcher, mc), paths.aux() / "M");
  log_info("trained auxiliary face matcher M");

  for (std::size_t i = 0; i < cfg.unseen_classifiers.size(); ++i) {
    ClassifierTrainConfig tc = cfg.unseen_classifier_train;
    tc.seed = seeds.unseen_classifiers[i];
    save_checkpoint(train_gender_classifier(part.unseen_train, cfg.unseen_classifiers[i], tc),
                    paths.unseen() / ("G_" + std::to_string(i + 1)));
  }
  for (std::size_t i = 0; i < cfg.unseen_matchers.size(); ++i) {
    MatcherTrainConfig tc = cfg.unseen_matcher_train;
    tc.seed = seeds.unseen_matchers[i];
    save_checkpoint(train_face_matcher(part.unseen_train, cfg.unseen_matchers[i], tc),
                    paths.unseen() / ("M_" + std::to_string(i + 1)));
  }
  log_info("trained " + std::to_string(cfg.unseen_classifiers.size()) + " unseen classifiers and " +
           std::to_string(cfg.unseen_matchers.size()) + " unseen matchers");
  finish_stage(models, "models", fp, summary);
}

LoadedModels load_models(const RunConfig& cfg) {
  const RunPaths paths{cfg.out};
  require_stage(cfg.out / "models", "auxiliary and unseen models", "train aux");
  LoadedModels m;
  for (int i = 1; i <= cfg.ensemble_size; ++i) {
    m.aux_classifiers.push_back(load_gender_classifier(paths.aux() / ("G_" + std::to_string(i))));
  }
  m.aux_matcher = load_face_matcher(paths.aux() / "M");
  for (std::size_t i = 1; i <= cfg.unseen_classifiers.size(); ++i) {
    m.unseen_classifiers.push_back(load_gender_classifier(paths.unseen() / ("G_" + std::to_string(i))));
  }
  for (std::size_t i = 1; i <= cfg.unseen_matchers.size(); ++i) {
    m.unseen_matchers.push_back(load_face_matcher(paths.unseen() / ("M_" + std::to_string(i))));
  }
  return m;
}

namespace {

void write_member_logs(const std::vector<std::vector<LossRecord>>& logs, const fs::path& members) {
  for (std::size_t i = 0; i < logs.size(); ++i) {
    write_training_log(logs[i], members / ("san_" + std::to_string(i + 1)) / "training_log.csv");
  }
}

json chain_hashes(const fs::path& members, int n) {
  json out;
  for (int t = 1; t <= n; ++t) out.push_back(hex(checkpoint_hash(members / ("san_" + std::to_string(t)))));
  return out;
}

}  // namespace

void cmd_train_ensemble(const RunConfig& cfg) {
  validate(cfg);
  ensure_manifest(cfg);
  const RunPaths paths{cfg.out};
  const LoadedData data = load_data(cfg);
  const LoadedModels models = load_models(cfg);
  const std::uint64_t fp = fingerprint(stage_inputs(cfg, "ensemble"));
  if (stage_done(paths.ensemble(), "ensemble", fp)) return;
  TrainConfig tc = cfg.san;
  tc.seed = run_seeds(cfg).ensemble;
  std::vector<std::vector<LossRecord>> logs;
  const SanChain chain = train_ensemble(data.partition.san_train, models.aux_classifiers, models.aux_matcher,
                                        data.prototypes, tc, {.concurrent = cfg.concurrent_members, .logs = &logs});
  const fs::path members = paths.ensemble() / "members";
  save_chain(chain, members);
  write_member_logs(logs, members);
  finish_stage(paths.ensemble(), "ensemble", fp, {{"checkpoints", chain_hashes(members, chain.size())}});
  log_info("ensemble of " + std::to_string(chain.size()) + " SANs written to " + members.string());
}

void cmd_train_flowsan(const RunConfig& cfg) {
  validate(cfg);
  ensure_manifest(cfg);
  const RunPaths paths{cfg.out};
  const fs::path ensemble_members = paths.ensemble() / "members";
  if (!fs::exists(paths.ensemble() / "stage.json") || !has_chain(ensemble_members)) {
    throw UsageError("missing ensemble checkpoints in " + ensemble_members.string() +
                     "/; FlowSAN fine-tunes the ensemble members, run `flowsan train ensemble` first");
  }
  const LoadedData data = load_data(cfg);
  const LoadedModels models = load_models(cfg);
  const std::uint64_t fp = fingerprint(stage_inputs(cfg, "flowsan"));
  if (stage_done(paths.flowsan(), "flowsan", fp)) return;
  const SanChain init = load_chain(ensemble_members);
  TrainConfig tc = cfg.san;
  tc.seed = run_seeds(cfg).flow;
  tc.epochs = cfg.flow_epochs;
  tc.adam.learning_rate = cfg.flow_learning_rate;
  std::vector<std::vector<LossRecord>> logs;
  FlowOptions opts;
  opts.init = &init;
  opts.logs = &logs;
  opts.on_stage = [&](int t, const FaceDataset& transformed) {
    save_dataset(transformed, paths.flowsan() / "transformed" / ("stage_" + std::to_string(t)));
    log_info("flow stage " + std::to_string(t) + " trained");
  };
  const SanChain chain =
      train_flowsan(data.partition.san_train, models.aux_classifiers, models.aux_matcher, data.prototypes, tc, opts);
  const fs::path members = paths.flowsan() / "members";
  save_chain(chain, members);
  write_member_logs(logs, members);
  finish_stage(paths.flowsan(), "flowsan", fp, {{"checkpoints", chain_hashes(members, chain.size())}});
  log_info("FlowSAN chain of " + std::to_string(chain.size()) + " SANs written to " + members.string());
}

fs::path evaluation_dir(const RunConfig& cfg) {
  const fs::path manifest = cfg.out / "run.json";
  const json current = to_json(cfg)["eval"];
  if (fs::exists(manifest) && read_json_file(manifest).value("eval", json()) == current) return cfg.out / "evaluation";
  return cfg.out / ("evaluation-" + hex(fingerprint(current)).substr(0, 8));
}

EvalReport cmd_evaluate(const RunConfig& cfg) {
  validate(cfg);
  ensure_manifest(cfg);
  const RunPaths paths{cfg.out};
  const LoadedData data = load_data(cfg);
  const LoadedModels models = load_models(cfg);
  std::vector<std::pair<std::string, SanChain>> chains;
  if (fs::exists(paths.ensemble() / "stage.json")) chains.emplace_back("ensemble", load_chain(paths.ensemble() / "members"));
  if (fs::exists(paths.flowsan() / "stage.json")) chains.emplace_back("flowsan", load_chain(paths.flowsan() / "members"));
  if (chains.empty()) {
    throw UsageError("no trained chains under " + paths.ensemble().string() + "/members/ or " +
                     paths.flowsan().string() + "/members/; run `flowsan train ensemble` first");
  }

  const RunSeeds seeds = run_seeds(cfg);
  EvalInputs in;
  in.prototypes = &data.prototypes;
  for (const auto& [name, chain] : chains) in.chains.push_back({name, &chain});
  for (std::size_t i = 0; i < models.unseen_classifiers.size(); ++i) {
    in.classifiers.push_back({"G_unseen_" + std::to_string(i + 1), &models.unseen_classifiers[i]});
  }
  for (std::size_t i = 0; i < models.unseen_matchers.size(); ++i) {
    in.matchers.push_back({"M_unseen_" + std::to_string(i + 1), &models.unseen_matchers[i]});
  }
  for (std::size_t k = 0; k < data.eval.size(); ++k) in.datasets.push_back({dataset_dir(static_cast<int>(k) + 1), &data.eval[k]});
  EvalConfig ec = cfg.eval;
  ec.protocol.seed = seeds.protocol;
  ec.gibbs_seed = seeds.gibbs;

  const EvalReport report = evaluate_suite(in, ec);
  const fs::path dir = evaluation_dir(cfg);
  fs::create_directories(dir);
  write_report_csv(report, dir / "report.csv");
  write_report_json(report, dir / "report.json");
  plot_metric(report, "auc", dir / "auc.svg");
  plot_metric(report, "eer", dir / "eer.svg");
  for (double fmr : ec.fmrs) {
    std::string name = tmr_metric(fmr);
    std::replace(name.begin(), name.end(), '@', '_');
    plot_metric(report, tmr_metric(fmr), dir / (name + ".svg"));
  }
  std::vector<int> sizes;
  for (int n : cfg.summary_sizes)
    if (!report.depths(kModeFlow).empty() || !report.depths(kModeAverage).empty()) sizes.push_back(n);
  const std::string table = summary_table(report, sizes, ec.fmrs.front());
  std::ofstream(dir / "summary.txt", std::ios::trunc) << table;
  log_info("evaluation written to " + dir.string() + "\n" + table);
  return report;
}

fs::path cmd_demo(const RunConfig& cfg, const DemoOptions& options) {
  validate(cfg);
  ensure_manifest(cfg);
  const RunPaths paths{cfg.out};
  const LoadedData data = load_data(cfg);
  const LoadedModels models = load_models(cfg);
  const fs::path chain_dir = (options.mode == ChainMode::flow ? paths.flowsan() : paths.ensemble()) / "members";
  if (!has_chain(chain_dir)) {
    throw UsageError("missing trained chain in " + chain_dir.string() + "/; run `flowsan train " +
                     (options.mode == ChainMode::flow ? "flowsan" : "ensemble") + "` first");
  }
  const SanChain chain = load_chain(chain_dir);
  const int depth = options.depth == 0 ? chain.size() : options.depth;
  require_depth(chain, depth);

  Image image;
  std::string stem;
  if (options.image) {
    try {
      image = read_pgm(*options.image);
    } catch (const Error& e) {
      throw IoError("cannot read input image " + options.image->string() + ": " + e.what());
    }
    require_same_size(data.prototypes.female, image, "demo input");
    stem = options.image->stem().string();
  } else {
    image = data.eval.front().samples.front().image;
    stem = "eval_1_sample_0";
  }
  int label;
  std::string label_source;
  if (options.label) {
    label = *options.label;
    label_source = "given";
  } else if (!options.image) {
    label = data.eval.front().samples.front().gender;
    label_source = "dataset";
  } else {
    label = models.aux_classifiers.front().predict(image) >= 0.5 ? 1 : 0;
    label_source = "predicted by auxiliary G_1";
  }

  const std::uint64_t gibbs_seed = derive_seed(run_seeds(cfg).gibbs, "demo");
  const PerturbationTrace tr = trace(chain, image, data.prototypes, label, depth, gibbs_seed);
  fs::create_directories(paths.demo());
  const std::string base = stem + "_" + to_string(chain.mode) + "_d" + std::to_string(depth);
  const fs::path grid = paths.demo() / (base + ".pgm");
  write_trace_grid(tr, grid);

  std::ofstream notes(paths.demo() / (base + ".txt"), std::ios::trunc);
  if (!notes) throw IoError("cannot write demo annotations in " + paths.demo().string());
  notes << std::fixed << std::setprecision(6);
  notes << "input " << (options.image ? options.image->string() : stem) << "\n";
  notes << "label " << (label == 1 ? "male" : "female") << " (" << label_source << ")\n";
  notes << "mode " << to_string(chain.mode) << "\n";
  if (chain.mode == ChainMode::ensemble) notes << "gibbs member " << tr.gibbs_member << " seed " << tr.gibbs_seed << "\n";
  notes << "panel";
  for (std::size_t i = 0; i < models.unseen_classifiers.size(); ++i) notes << " P(Male)|G_unseen_" << i + 1;
  for (std::size_t i = 0; i < models.unseen_matchers.size(); ++i) notes << " match|M_unseen_" << i + 1;
  notes << "\n";
  std::vector<const Image*> panels{&tr.original};
  for (const Image& o : tr.outputs) panels.push_back(&o);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    notes << (p == 0 ? std::string("original") : (chain.mode == ChainMode::flow ? "depth " : "member ") + std::to_string(p));
    for (const auto& g : models.unseen_classifiers) notes << ' ' << g.predict(*panels[p]);
    for (const auto& m : models.unseen_matchers) notes << ' ' << match_score(m, tr.original, *panels[p]);
    notes << "\n";
  }
  log_info("demo grid written to " + grid.string());
  return grid;
}

}  // namespace flowsan
