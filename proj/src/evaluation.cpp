#include "flowsan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "flowsan/log.hpp"
#include "flowsan/seed.hpp"

namespace flowsan {

void validate(const EvalConfig& cfg) {
  if (cfg.depths.empty()) throw ConfigError("evaluation needs at least one depth");
  for (int d : cfg.depths)
    if (d < 1) throw ConfigError("evaluation depths must be >= 1, got " + std::to_string(d));
  for (double f : cfg.fmrs)
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("FMR values must lie in (0,1)");
}

std::string tmr_metric(double fmr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tmr@%g", fmr);
  return buf;
}

double EvalReport::mean(const std::string& mode, int depth, const std::string& metric) const {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.mode == mode && r.depth == depth && r.metric == metric) {
      sum += r.value;
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

std::vector<int> EvalReport::depths(const std::string& mode) const {
  std::set<int> out;
  for (const auto& r : rows)
    if (r.mode == mode) out.insert(r.depth);
  return {out.begin(), out.end()};
}

namespace {

struct Sink {
  EvalReport& report;
  std::string chain_id;
  std::string mode;
  int depth;
  std::string dataset;

  void add(const std::string& model, const std::string& metric, double value) {
    report.rows.push_back({chain_id, mode, depth, dataset, model, metric, value});
  }
};

struct DatasetContext {
  const FaceDataset* data;
  std::vector<Image> originals;
  std::vector<int> labels;
  MatchProtocol protocol;
  std::vector<std::vector<std::vector<double>>> original_reps;  // per matcher
};

void gender_rows(Sink& sink, const EvalInputs& in, const DatasetContext& ctx, const std::vector<Image>& images) {
  for (const auto& c : in.classifiers) {
    const ScoreSet s{c.model->predict(images), ctx.labels};
    const double auc = roc_auc(s);
    sink.add(c.name, "auc", auc);
    sink.add(c.name, "eer", eer(s));
    sink.add(c.name, "gap", anonymization_gap(auc));
  }
}

void match_rows(Sink& sink, const EvalInputs& in, const EvalConfig& cfg, const DatasetContext& ctx,
                const std::vector<Image>& images, const std::string& suffix = "") {
  for (std::size_t m = 0; m < in.matchers.size(); ++m) {
    const PairScores scores = score_protocol(ctx.protocol, ctx.original_reps[m], in.matchers[m].model->represent(images));
    for (double fmr : cfg.fmrs) {
      sink.add(in.matchers[m].name + suffix, tmr_metric(fmr), tmr_at_fmr(scores.genuine, scores.impostor, fmr).tmr);
    }
  }
}

std::vector<int> usable_depths(const EvalConfig& cfg, const SanChain& chain) {
  std::vector<int> out;
  for (int d : cfg.depths)
    if (d <= chain.size()) out.push_back(d);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void evaluate_flow(EvalReport& report, const std::string& id, const SanChain& chain, const EvalInputs& in,
                   const EvalConfig& cfg, const std::string& dataset, const DatasetContext& ctx) {
  const std::vector<int> depths = usable_depths(cfg, chain);
  if (depths.empty()) return;
  std::vector<Image> current = ctx.originals;
  for (int t = 1; t <= depths.back(); ++t) {
    current = san_perturb(chain.members[static_cast<std::size_t>(t - 1)], current, ctx.labels, *in.prototypes);
    if (!std::binary_search(depths.begin(), depths.end(), t)) continue;
    Sink sink{report, id, kModeFlow, t, dataset};
    gender_rows(sink, in, ctx, current);
    match_rows(sink, in, cfg, ctx, current);
  }
}

void evaluate_ensemble(EvalReport& report, const std::string& id, const SanChain& chain, const EvalInputs& in,
                       const EvalConfig& cfg, const std::string& dataset, const DatasetContext& ctx) {
  const std::vector<int> depths = usable_depths(cfg, chain);
  if (depths.empty()) return;
  const std::size_t n = ctx.originals.size();
  std::vector<std::vector<Image>> outputs;
  for (int k = 0; k < depths.back(); ++k) {
    outputs.push_back(san_perturb(chain.members[static_cast<std::size_t>(k)], ctx.originals, ctx.labels, *in.prototypes));
  }
  // probs[c][k][i]: P(Male) of classifier c on member k's output for sample i.
  std::vector<std::vector<std::vector<double>>> probs;
  for (const auto& c : in.classifiers) {
    std::vector<std::vector<double>> per_member;
    for (const auto& o : outputs) per_member.push_back(c.model->predict(o));
    probs.push_back(std::move(per_member));
  }
  const std::uint64_t gibbs_base = derive_seed(cfg.gibbs_seed, "gibbs:" + id + ":" + dataset);

  for (int t : depths) {
    std::vector<Image> averaged, gibbs;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<const Image*> ptrs;
      for (int k = 0; k < t; ++k) ptrs.push_back(&outputs[static_cast<std::size_t>(k)][i]);
      averaged.push_back(average_images(ptrs));
      const int pick = gibbs_select(t, derive_seed(gibbs_base, "sample", i * 1024 + static_cast<std::size_t>(t)));
      gibbs.push_back(outputs[static_cast<std::size_t>(pick - 1)][i]);
    }
    Sink avg{report, id, kModeAverage, t, dataset};
    gender_rows(avg, in, ctx, averaged);
    match_rows(avg, in, cfg, ctx, averaged);
    Sink gib{report, id, kModeGibbs, t, dataset};
    gender_rows(gib, in, ctx, gibbs);
    match_rows(gib, in, cfg, ctx, gibbs);

    Sink best{report, id, kModeBest, t, dataset};
    for (std::size_t c = 0; c < in.classifiers.size(); ++c) {
      std::vector<Image> picked;
      std::vector<double> scores;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> candidates;
        for (int k = 0; k < t; ++k) candidates.push_back(probs[c][static_cast<std::size_t>(k)][i]);
        const int member = best_member(candidates, ctx.labels[i]);
        picked.push_back(outputs[static_cast<std::size_t>(member - 1)][i]);
        scores.push_back(candidates[static_cast<std::size_t>(member - 1)]);
      }
      const ScoreSet s{scores, ctx.labels};
      const double auc = roc_auc(s);
      best.add(in.classifiers[c].name, "auc", auc);
      best.add(in.classifiers[c].name, "eer", eer(s));
      best.add(in.classifiers[c].name, "gap", anonymization_gap(auc));
      match_rows(best, in, cfg, ctx, picked, "|" + in.classifiers[c].name);
    }
  }
}

// Forwards each distinct warning once while alive.
class DistinctWarnings {
 public:
  DistinctWarnings() {
    previous_ = set_log_sink([this](LogLevel level, const std::string& msg) {
      if (level == LogLevel::warning && !seen_.insert(msg).second) return;
      if (previous_) previous_(level, msg);
    });
  }
  ~DistinctWarnings() { set_log_sink(previous_); }
  DistinctWarnings(const DistinctWarnings&) = delete;
  DistinctWarnings& operator=(const DistinctWarnings&) = delete;

 private:
  LogSink previous_;
  std::set<std::string> seen_;
};

std::string format_value(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

EvalReport evaluate_suite(const EvalInputs& in, const EvalConfig& cfg) {
  validate(cfg);
  if (!in.prototypes) throw UsageError("evaluation needs gender prototypes");
  if (in.classifiers.empty() && in.matchers.empty()) throw UsageError("evaluation needs unseen models");
  const DistinctWarnings dedup;
  EvalReport report;
  for (const auto& d : in.datasets) {
    DatasetContext ctx;
    ctx.data = d.model;
    ctx.originals = d.model->images();
    ctx.labels = d.model->genders();
    if (!in.matchers.empty()) {
      ctx.protocol = build_match_protocol(*d.model, cfg.protocol);
      for (const auto& m : in.matchers) ctx.original_reps.push_back(m.model->represent(ctx.originals));
    }
    Sink base{report, "-", kModeOriginal, 0, d.name};
    gender_rows(base, in, ctx, ctx.originals);
    match_rows(base, in, cfg, ctx, ctx.originals);
    for (const auto& c : in.chains) {
      if (c.model->mode == ChainMode::flow) {
        evaluate_flow(report, c.name, *c.model, in, cfg, d.name, ctx);
      } else {
        evaluate_ensemble(report, c.name, *c.model, in, cfg, d.name, ctx);
      }
    }
  }
  return report;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "chain_id,mode,depth,dataset,model,metric,value\n";
  for (const auto& r : report.rows) {
    out << r.chain_id << ',' << r.mode << ',' << r.depth << ',' << r.dataset << ',' << r.model << ',' << r.metric
        << ',' << format_value(r.value) << '\n';
  }
}

nlohmann::json report_aggregates(const EvalReport& report) {
  std::map<std::string, std::map<int, std::set<std::string>>> cells;
  for (const auto& r : report.rows) cells[r.mode][r.depth].insert(r.metric);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [mode, by_depth] : cells) {
    nlohmann::json per_mode = nlohmann::json::array();
    for (const auto& [depth, metrics] : by_depth) {
      nlohmann::json entry = {{"depth", depth}};
      for (const auto& m : metrics) entry[m] = report.mean(mode, depth, m);
      per_mode.push_back(std::move(entry));
    }
    out[mode] = std::move(per_mode);
  }
  return out;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json{{"rows", report.rows.size()}, {"aggregates", report_aggregates(report)}}.dump(2) << '\n';
}

void plot_metric(const EvalReport& report, const std::string& metric, const std::filesystem::path& path) {
  const std::vector<std::string> modes{kModeFlow, kModeAverage, kModeGibbs, kModeBest};
  const std::vector<std::string> colors{"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
  int max_depth = 1;
  for (const auto& r : report.rows) max_depth = std::max(max_depth, r.depth);
  const double width = 480, height = 320, left = 56, right = 130, top = 20, bottom = 44;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double d) { return left + pw * d / max_depth; };
  auto py = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::fixed << std::setprecision(1);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  for (int d = 0; d <= max_depth; ++d) {
    out << "<text x=\"" << px(d) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << d << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    out << "<line x1=\"" << left - 4 << "\" y1=\"" << py(v) << "\" x2=\"" << left + pw << "\" y2=\"" << py(v)
        << "\" stroke=\"#dddddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << std::setprecision(2)
        << v << std::setprecision(1) << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 8 << "\" text-anchor=\"middle\">depth</text>\n";
  out << "<text x=\"14\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 14 " << top + ph / 2
      << ")\" text-anchor=\"middle\">" << metric << "</text>\n";

  const double baseline = report.mean(kModeOriginal, 0, metric);
  int legend = 0;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    const auto depths = report.depths(modes[m]);
    if (depths.empty()) continue;
    std::ostringstream points;
    points << std::fixed << std::setprecision(1);
    if (std::isfinite(baseline)) points << px(0) << ',' << py(baseline) << ' ';
    for (int d : depths) {
      const double v = report.mean(modes[m], d, metric);
      if (std::isfinite(v)) points << px(d) << ',' << py(v) << ' ';
    }
    out << "<polyline fill=\"none\" stroke=\"" << colors[m] << "\" stroke-width=\"2\" points=\"" << points.str()
        << "\"/>\n";
    const double ly = top + 12 + 16 * legend++;
    out << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\""
        << ly - 4 << "\" stroke=\"" << colors[m] << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << modes[m] << "</text>\n";
  }
  out << "</svg>\n";
}

std::string summary_table(const EvalReport& report, const std::vector<int>& sizes, double fmr) {
  const std::string tmr = tmr_metric(fmr);
  const std::vector<std::pair<std::string, std::string>> rows{{"Orig", kModeOriginal},
                                                              {"Ens-Avg", kModeAverage},
                                                              {"Ens-Gibbs", kModeGibbs},
                                                              {"Ens-Best", kModeBest},
                                                              {"FlowSAN", kModeFlow}};
  std::ostringstream out;
  out << std::left << std::setw(11) << "method";
  for (int n : sizes) {
    out << std::right << std::setw(12) << ("n=" + std::to_string(n) + " EER") << std::setw(16)
        << ("n=" + std::to_string(n) + " " + tmr);
  }
  out << '\n' << std::fixed << std::setprecision(4);
  for (const auto& [label, mode] : rows) {
    out << std::left << std::setw(11) << label << std::right;
    for (int n : sizes) {
      const int depth = mode == kModeOriginal ? 0 : n;
      const double e = report.mean(mode, depth, "eer");
      const double t = report.mean(mode, depth, tmr);
      auto cell = [&](double v, int w) {
        if (std::isfinite(v)) {
          out << std::setw(w) << v;
        } else {
          out << std::setw(w) << "-";
        }
      };
      cell(e, 12);
      cell(t, 16);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace flowsan
