#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "flowsan/error.hpp"
#include "flowsan/pipeline.hpp"

using namespace flowsan;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string depths;
  std::string fmrs;
};

RunConfig resolve(const GlobalFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.depths.empty()) cfg.eval.depths = parse_depth_range(f.depths);
  if (!f.fmrs.empty()) cfg.eval.fmrs = parse_fmr_list(f.fmrs);
  validate(cfg);
  return cfg;
}

int parse_label(const std::string& s) {
  if (s == "1" || s == "male") return 1;
  if (s == "0" || s == "female") return 0;
  throw UsageError("--label must be male, female, 1 or 0");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-adversarial gender-privacy perturbation: SAN ensembles and FlowSAN"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags flags;
  app.add_option("--config", flags.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "Global seed");
  app.add_option("--out", flags.out, "Run directory");
  app.add_option("--depths", flags.depths, "Evaluation depths, A..B");
  app.add_option("--fmr", flags.fmrs, "Comma-separated FMR operating points");

  auto* gen = app.add_subcommand("gen-data", "Generate and split the synthetic datasets");
  auto* train = app.add_subcommand("train", "Train auxiliary/unseen models, SAN ensembles or FlowSAN");
  std::string regime;
  train->add_option("regime", regime, "aux, ensemble or flowsan")
      ->required()
      ->check(CLI::IsMember({"aux", "ensemble", "flowsan"}));
  auto* evaluate = app.add_subcommand("evaluate", "Depth-sweep evaluation against unseen models");
  auto* demo = app.add_subcommand("demo", "Write a perturbation trace grid for one image");
  std::string image, label, mode = "flow";
  int depth = 0;
  demo->add_option("--image", image, "Input PGM (defaults to the first evaluation sample)")->check(CLI::ExistingFile);
  demo->add_option("--label", label, "Gender label of the input: male or female");
  demo->add_option("--chain", mode, "flow or ensemble")->check(CLI::IsMember({"flow", "ensemble"}));
  demo->add_option("--depth", depth, "Number of members to apply (default: all)");
  auto* config = app.add_subcommand("config", "Print the resolved configuration as JSON");

  CLI11_PARSE(app, argc, argv);
  try {
    const RunConfig cfg = resolve(flags);
    if (*gen) {
      cmd_gen_data(cfg);
    } else if (*train) {
      if (regime == "aux") cmd_train_aux(cfg);
      if (regime == "ensemble") cmd_train_ensemble(cfg);
      if (regime == "flowsan") cmd_train_flowsan(cfg);
    } else if (*evaluate) {
      cmd_evaluate(cfg);
    } else if (*demo) {
      DemoOptions opts;
      if (!image.empty()) opts.image = image;
      if (!label.empty()) opts.label = parse_label(label);
      opts.mode = chain_mode_from_string(mode);
      opts.depth = depth;
      cmd_demo(cfg, opts);
    } else if (*config) {
      std::cout << to_json(cfg).dump(2) << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
