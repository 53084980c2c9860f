#pragma once

// Command-line front end: simulate, baseline, bic, detect and report.
// run() returns the process exit code: 0 healthy, 1 usage or data error,
// 2 at least one outlier flagged.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "girder/ar.hpp"
#include "girder/detect.hpp"
#include "girder/io.hpp"
#include "girder/pca.hpp"
#include "girder/signals.hpp"
#include "girder/simulate.hpp"

namespace girder::cli {

namespace fs = std::filesystem;

inline constexpr const char* kModelStoreEnv = "GIRDER_MODEL_STORE";

enum ExitCode { kOk = 0, kError = 1, kOutliers = 2 };

/// Settings shared by the pipeline commands. Resolution order per field:
/// command-line flag, then config file, then the built-in default (the model
/// store additionally falls back to GIRDER_MODEL_STORE before its default).
struct RunConfig {
  fs::path model_store = "models";
  fs::path report_dir = "reports";
  double alpha = 0.01;
  double pca_threshold = kDefaultVarianceThreshold;
  std::optional<int> ar_order;  // nullopt: auto
  int order_min = 1;
  int order_max = 150;
  std::size_t bic_max_signals = 16;
  double split_fraction = 0.7;
  std::uint64_t seed = 1;
  double bin_width = 0.0;
  double trigger_fraction = kBaselineTriggerFraction;
  ArMode ar_mode = ArMode::Frozen;

  BaselineConfig baseline_config() const {
    BaselineConfig c;
    c.alpha = alpha;
    c.pca_threshold = pca_threshold;
    c.ar_order = ar_order;
    c.order_grid = order_range(order_min, order_max);
    c.bic_max_signals = bic_max_signals;
    c.split_fraction = split_fraction;
    c.seed = seed;
    c.bin_width = bin_width;
    c.trigger_fraction = trigger_fraction;
    c.ar_mode = ar_mode;
    return c;
  }
};

inline void validate(const RunConfig& c) {
  if (!(c.alpha > 0.0 && c.alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 0.5)");
  if (!(c.pca_threshold > 0.0 && c.pca_threshold <= 1.0))
    throw std::invalid_argument("pca_threshold must lie in (0, 1]");
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0))
    throw std::invalid_argument("split_fraction must lie in (0, 1)");
  if (c.order_min < 1 || c.order_max < c.order_min)
    throw std::invalid_argument("order range must satisfy 1 <= order_min <= order_max");
  if (c.ar_order && *c.ar_order < 1) throw std::invalid_argument("ar_order must be >= 1 or auto");
  if (!(c.trigger_fraction > 0.0 && c.trigger_fraction < 1.0))
    throw std::invalid_argument("trigger_fraction must lie in (0, 1)");
  if (c.bin_width < 0.0) throw std::invalid_argument("speed_bin_width must be >= 0");
}

inline std::optional<int> parse_order(const std::string& s) {
  if (s == "auto") return std::nullopt;
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v < 1) throw std::invalid_argument("ar_order must be a positive integer or auto, got " + s);
  return v;
}

inline ArMode parse_ar_mode(const std::string& s) {
  if (s == "frozen") return ArMode::Frozen;
  if (s == "refit") return ArMode::Refit;
  throw std::invalid_argument("ar_mode must be frozen or refit, got " + s);
}

/// Apply a config document (JSON or TOML converted to JSON) over `c`.
inline void apply_config(RunConfig& c, const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {
      "model_store", "report_dir", "alpha", "pca_threshold", "ar_order", "order_min", "order_max",
      "bic_max_signals", "split_fraction", "seed", "speed_bin_width", "trigger_fraction", "ar_mode"};
  if (!j.is_object()) throw std::invalid_argument("config: expected a table of settings");
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) throw std::invalid_argument("config." + k + ": unknown setting");
  auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(std::string("config.") + key + ": wrong type");
    }
  };
  std::string s;
  if (j.contains("model_store")) { get("model_store", s); c.model_store = s; }
  if (j.contains("report_dir")) { get("report_dir", s); c.report_dir = s; }
  get("alpha", c.alpha);
  get("pca_threshold", c.pca_threshold);
  if (j.contains("ar_order")) {
    const auto& v = j["ar_order"];
    c.ar_order = v.is_string() ? parse_order(v.get<std::string>())
                               : parse_order(std::to_string(v.get<long long>()));
  }
  get("order_min", c.order_min);
  get("order_max", c.order_max);
  get("bic_max_signals", c.bic_max_signals);
  get("split_fraction", c.split_fraction);
  get("seed", c.seed);
  get("speed_bin_width", c.bin_width);
  get("trigger_fraction", c.trigger_fraction);
  if (j.contains("ar_mode")) { get("ar_mode", s); c.ar_mode = parse_ar_mode(s); }
}

// ---------------------------------------------------------------------------
// Dataset access

/// Files named directly, plus every .csv/.json below named directories
/// (manifest.json excluded), in sorted order.
inline std::vector<fs::path> collect_inputs(const std::vector<std::string>& paths) {
  std::vector<fs::path> out;
  for (const auto& p : paths) {
    const fs::path path(p);
    if (fs::is_directory(path)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if ((ext == ".csv" || ext == ".json") && e.path().filename() != "manifest.json")
          found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(path)) {
      out.push_back(path);
    } else {
      throw std::runtime_error(p + ": no such file or directory");
    }
  }
  return out;
}

inline std::vector<PassageRecord> load_dataset(const std::vector<std::string>& paths,
                                               const ChannelRegistry& registry) {
  std::vector<PassageRecord> out;
  for (const auto& f : collect_inputs(paths)) {
    auto r = load_passages(f.string(), format_from_path(f.string()), registry);
    out.insert(out.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  return out;
}

inline std::string model_file_name(const std::string& channel, const std::string& bin) {
  return "model_" + channel + "_" + bin + ".json";
}

inline std::vector<BaselineModel> load_models(const fs::path& store) {
  if (!fs::is_directory(store)) throw std::runtime_error("model store " + store.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(store)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("model_", 0) == 0 && e.path().extension() == ".json")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<BaselineModel> out;
  for (const auto& f : files) {
    try {
      out.push_back(baseline_from_json(load_document(f)));
    } catch (const std::exception& e) {
      throw std::runtime_error(f.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw std::runtime_error("model store " + store.string() + " holds no models");
  return out;
}

// ---------------------------------------------------------------------------
// Report tables

/// One row per report: 1 when the component was detected, 0 when observed
/// but not detected, empty when no channel in the report observes it.
inline void write_detection_matrix(std::ostream& os,
                                   const std::vector<std::pair<std::string, DamageReport>>& reports) {
  std::vector<ComponentId> all;
  for (auto s : kAllSections)
    for (auto k : kAllComponents) all.push_back({s, k});
  os << "report";
  for (const auto& c : all) os << ',' << to_string(c);
  os << '\n';
  for (const auto& [name, rep] : reports) {
    os << name;
    for (const auto& c : all) {
      const auto it = std::find_if(rep.components.begin(), rep.components.end(),
                                   [&](const auto& v) { return v.component == c; });
      os << ',';
      if (it != rep.components.end()) os << (it->detected ? 1 : 0);
    }
    os << '\n';
  }
}

/// Median DF and flag rate per (channel, damaged component, delta).
inline void write_df_vs_delta(std::ostream& os,
                              const std::vector<std::pair<std::string, DamageReport>>& reports) {
  struct Key {
    std::string channel;
    ComponentId component;
    double delta;
    bool operator<(const Key& o) const {
      return std::tie(channel, component, delta) < std::tie(o.channel, o.component, o.delta);
    }
  };
  struct Acc {
    std::vector<double> df;
    std::size_t flagged = 0;
    double cb = 0.0;
  };
  std::map<Key, Acc> groups;
  for (const auto& [name, rep] : reports)
    for (const auto& r : rep.rows) {
      if (!r.damage) continue;
      auto& a = groups[{r.channel_id, r.damage->id(), r.damage->delta}];
      a.df.push_back(r.df);
      a.flagged += r.outlier ? 1 : 0;
      a.cb = r.cb;
    }
  os << "channel_id,section,component,delta,passages,median_df,flag_rate,cb\n";
  for (auto& [k, a] : groups) {
    std::sort(a.df.begin(), a.df.end());
    const std::size_t n = a.df.size();
    const double median = n % 2 ? a.df[n / 2] : 0.5 * (a.df[n / 2 - 1] + a.df[n / 2]);
    os << k.channel << ',' << to_string(k.component.section) << ',' << to_string(k.component.kind) << ','
       << girder::detail::format_double(k.delta) << ',' << n << ',' << girder::detail::format_double(median) << ','
       << girder::detail::format_double(static_cast<double>(a.flagged) / static_cast<double>(n)) << ','
       << girder::detail::format_double(a.cb) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline RunConfig resolve_config(const std::string& config_path) {
  RunConfig c;
  if (const char* env = std::getenv(kModelStoreEnv); env && *env) c.model_store = env;
  if (!config_path.empty()) apply_config(c, load_document(config_path));
  return c;
}

inline std::map<std::pair<std::string, std::string>, std::vector<PassageRecord>> group_baseline(
    std::vector<PassageRecord> records, double bin_width) {
  std::map<std::pair<std::string, std::string>, std::vector<PassageRecord>> groups;
  for (auto& r : records)
    if (r.condition == Condition::Baseline)
      groups[{r.channel_id, speed_bin_label(r.speed_kmh, bin_width)}].push_back(std::move(r));
  return groups;
}

}  // namespace detail

/// Flags shared by the pipeline commands; unset values leave the config alone.
struct PipelineFlags {
  std::string config;
  std::string model_store;
  std::optional<double> alpha, pca_threshold, split_fraction, bin_width, trigger_fraction;
  std::optional<std::string> ar_order, ar_mode;
  std::optional<int> order_min, order_max;
  std::optional<std::size_t> bic_max_signals;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "TOML or JSON settings file");
    cmd->add_option("--models", model_store, "model store directory (default $GIRDER_MODEL_STORE or ./models)");
    cmd->add_option("--alpha", alpha, "significance level of the confidence boundary");
    cmd->add_option("--pca-threshold", pca_threshold, "cumulative variance share of removed components");
    cmd->add_option("--order", ar_order, "AR order, or auto for BIC selection");
    cmd->add_option("--order-min", order_min, "smallest order tried by BIC");
    cmd->add_option("--order-max", order_max, "largest order tried by BIC");
    cmd->add_option("--bic-signals", bic_max_signals, "passages averaged for BIC (0 = all)");
    cmd->add_option("--split", split_fraction, "fit share of the baseline passages");
    cmd->add_option("--seed", seed, "seed of the fit/validation split");
    cmd->add_option("--speed-bin-width", bin_width, "speed bin width in km/h (0 = exact speed)");
    cmd->add_option("--trigger", trigger_fraction, "alignment trigger as a fraction of the record peak");
    cmd->add_option("--ar-mode", ar_mode, "frozen or refit");
  }

  RunConfig resolve() const {
    RunConfig c = detail::resolve_config(config);
    if (!model_store.empty()) c.model_store = model_store;
    if (alpha) c.alpha = *alpha;
    if (pca_threshold) c.pca_threshold = *pca_threshold;
    if (ar_order) c.ar_order = parse_order(*ar_order);
    if (order_min) c.order_min = *order_min;
    if (order_max) c.order_max = *order_max;
    if (bic_max_signals) c.bic_max_signals = *bic_max_signals;
    if (split_fraction) c.split_fraction = *split_fraction;
    if (seed) c.seed = *seed;
    if (bin_width) c.bin_width = *bin_width;
    if (trigger_fraction) c.trigger_fraction = *trigger_fraction;
    if (ar_mode) c.ar_mode = parse_ar_mode(*ar_mode);
    validate(c);
    return c;
  }
};

inline int cmd_simulate(const std::string& plan_file, const std::string& out_dir, bool dry_run,
                        std::optional<std::uint64_t> seed, detail::Streams io) {
  ExperimentPlan plan = plan_file.empty() ? ExperimentPlan{} : load_plan(plan_file);
  if (seed) plan.seed = *seed;
  const auto girder = default_girder();
  if (dry_run) {
    const auto sum = generate_experiment(plan, girder, std::nullopt);
    io.out << sum.manifest.dump(2) << '\n';
    return kOk;
  }
  if (out_dir.empty()) throw std::invalid_argument("--out is required unless --dry-run is given");
  const auto sum = generate_experiment(plan, girder, fs::path(out_dir));
  io.out << sum.baseline_conditions << " baseline / " << sum.damage_conditions
         << " damaged conditions written\n";
  return kOk;
}

inline int cmd_baseline(const std::vector<std::string>& data, const RunConfig& cfg, detail::Streams io) {
  const auto girder = default_girder();
  const auto registry = girder.registry();
  auto groups = detail::group_baseline(load_dataset(data, {}), cfg.bin_width);
  if (groups.empty()) throw std::runtime_error("dataset holds no baseline passages");
  const auto bc = cfg.baseline_config();
  for (auto& [key, records] : groups) {
    const auto& [channel, bin] = key;
    if (records.size() < 4)
      throw std::runtime_error("channel " + channel + " at speed bin " + bin + " has " +
                               std::to_string(records.size()) +
                               " baseline passages; at least 4 are needed");
    std::optional<ChannelMeta> meta;
    if (const auto* m = registry.find(channel)) meta = *m;
    const auto model = fit_baseline(std::move(records), bc, meta);
    write_text_atomic(cfg.model_store / model_file_name(channel, bin), to_json(model).dump(1) + "\n");
    if (model.bic)
      write_file_atomic(cfg.model_store / ("bic_" + channel + "_" + bin + ".csv"),
                        [&](std::ostream& os) { write_bic_csv(os, *model.bic); });
    std::ostringstream line;
    line.precision(4);
    line << channel << " @ " << bin << " km/h: p=" << model.pca.retained_p << " m=" << model.ar.order
         << (model.bic ? " (BIC)" : "") << " mu=" << model.threshold.mu << " sigma=" << model.threshold.sigma
         << " cb=" << model.threshold.cb << (model.threshold.degenerate ? " [sigma floored]" : "");
    io.out << line.str() << '\n';
  }
  return kOk;
}

inline int cmd_bic(const std::vector<std::string>& data, const std::string& channel,
                   const std::optional<double>& speed, const std::string& out_file, const RunConfig& cfg,
                   detail::Streams io) {
  auto groups = detail::group_baseline(load_dataset(data, {}), cfg.bin_width);
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& [k, v] : groups)
    if ((channel.empty() || k.first == channel) &&
        (!speed || k.second == speed_bin_label(*speed, cfg.bin_width)))
      keys.push_back(k);
  if (keys.empty()) throw std::runtime_error("no baseline passages match the channel/speed selection");
  std::vector<PassageMatrix> residuals;
  for (const auto& k : keys) {
    const auto& recs = groups[k];
    const auto n = common_length(recs, 10, cfg.trigger_fraction, BaselineConfig{}.length_margin);
    auto x = align_to_matrix(recs, n, AlignMethod::Truncate, cfg.bin_width, cfg.trigger_fraction);
    const auto basis = fit_pca(x, cfg.pca_threshold);
    auto r = remove_components(x, basis);
    if (cfg.bic_max_signals > 0 && static_cast<std::size_t>(r.rows()) > cfg.bic_max_signals) {
      r.data.conservativeResize(static_cast<Eigen::Index>(cfg.bic_max_signals), Eigen::NoChange);
      r.passage_ids.resize(cfg.bic_max_signals);
    }
    residuals.push_back(std::move(r));
  }
  const auto curve = select_order(residuals, order_range(cfg.order_min, cfg.order_max));
  if (out_file.empty())
    write_bic_csv(io.out, curve);
  else
    write_file_atomic(out_file, [&](std::ostream& os) { write_bic_csv(os, curve); });
  io.err << "optimal order " << curve.optimum << (curve.degenerate ? " (degenerate fit)" : "") << '\n';
  return kOk;
}

inline int cmd_detect(const std::vector<std::string>& data, const RunConfig& cfg, const std::string& name,
                      const std::string& against_bin, detail::Streams io) {
  const auto models = load_models(cfg.model_store);
  const auto records = load_dataset(data, {});
  if (records.empty()) throw std::runtime_error("no passages");
  DamageReport report;
  if (against_bin.empty()) {
    report = score(records, models);
  } else {
    // Deliberate cross-speed scoring against one bin's models.
    std::map<std::string, std::vector<PassageRecord>> by_channel;
    for (const auto& r : records) by_channel[r.channel_id].push_back(r);
    std::vector<PassageScore> rows;
    std::vector<ChannelMeta> channels;
    for (const auto& [ch, recs] : by_channel) {
      const auto it = std::find_if(models.begin(), models.end(), [&](const auto& m) {
        return m.channel_id == ch && m.speed_bin == against_bin;
      });
      if (it == models.end())
        throw MissingModel("no baseline model for channel " + ch + " at speed bin " + against_bin);
      auto s = score_passages(recs, *it, true);
      rows.insert(rows.end(), s.begin(), s.end());
      if (it->channel) channels.push_back(*it->channel);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return std::tie(a.passage_id, a.channel_id) < std::tie(b.passage_id, b.channel_id);
    });
    report = make_report(std::move(rows), channels);
  }
  write_text_atomic(cfg.report_dir / (name + ".json"), to_json(report).dump(1) + "\n");
  write_file_atomic(cfg.report_dir / (name + ".csv"), [&](std::ostream& os) { write_report_csv(os, report); });
  io.out << report.rows.size() << " passage scores, " << report.baseline_flagged << "/" << report.baseline_rows
         << " baseline and " << report.damaged_flagged << "/" << report.damaged_rows
         << " damaged flagged\n";
  return report.any_outlier() ? kOutliers : kOk;
}

inline int cmd_report(const std::vector<std::string>& files, const std::string& out_dir, detail::Streams io) {
  if (files.empty()) throw std::invalid_argument("at least one report file is required");
  std::vector<std::pair<std::string, DamageReport>> reports;
  for (const auto& f : files) {
    try {
      reports.emplace_back(fs::path(f).stem().string(), report_from_json(load_document(f)));
    } catch (const std::exception& e) {
      throw std::runtime_error(f + ": malformed report (" + e.what() + ")");
    }
  }
  const fs::path dir(out_dir);
  write_file_atomic(dir / "detection_matrix.csv", [&](std::ostream& os) { write_detection_matrix(os, reports); });
  write_file_atomic(dir / "df_vs_delta.csv", [&](std::ostream& os) { write_df_vs_delta(os, reports); });
  std::size_t rows = 0;
  for (const auto& [n, r] : reports) rows += r.rows.size();
  io.out << reports.size() << " report(s), " << rows << " passage scores summarised in " << dir.string() << '\n';
  return kOk;
}

/// Parse arguments and run one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train-induced strain damage detection for box girders", "girder"};
  app.require_subcommand(1);
  detail::Streams io{out, err};

  auto* sim = app.add_subcommand("simulate", "generate a surrogate baseline/damage dataset");
  std::string plan_file, sim_out;
  bool dry_run = false;
  std::optional<std::uint64_t> sim_seed;
  sim->add_option("--plan", plan_file, "experiment plan (TOML or JSON); defaults when omitted");
  sim->add_option("--out", sim_out, "output directory");
  sim->add_flag("--dry-run", dry_run, "print the manifest without writing files");
  sim->add_option("--seed", sim_seed, "override the plan seed");

  auto* base = app.add_subcommand("baseline", "fit one baseline model per channel and speed bin");
  std::vector<std::string> base_data;
  PipelineFlags base_flags;
  base->add_option("--data", base_data, "dataset files or directories")->required();
  base_flags.add_to(base);

  auto* bic = app.add_subcommand("bic", "averaged BIC curve of PC-removed baseline passages");
  std::vector<std::string> bic_data;
  std::string bic_channel, bic_out;
  std::optional<double> bic_speed;
  PipelineFlags bic_flags;
  bic->add_option("--data", bic_data, "dataset files or directories")->required();
  bic->add_option("--channel", bic_channel, "restrict to one channel");
  bic->add_option("--speed", bic_speed, "restrict to one speed (km/h)");
  bic->add_option("--out", bic_out, "CSV output (default standard output)");
  bic_flags.add_to(bic);

  auto* det = app.add_subcommand("detect", "score passages against the stored baselines");
  std::vector<std::string> det_data;
  std::string report_dir, report_name = "report", against_bin;
  PipelineFlags det_flags;
  det->add_option("--data", det_data, "dataset files or directories")->required();
  det->add_option("--out", report_dir, "report directory (default ./reports)");
  det->add_option("--name", report_name, "report file stem");
  det->add_option("--against-speed-bin", against_bin,
                  "score every passage against this speed bin's models (cross-speed study)");
  det_flags.add_to(det);

  auto* rep = app.add_subcommand("report", "detection matrix and DF-vs-delta tables from reports");
  std::vector<std::string> rep_files;
  std::string rep_out = ".";
  rep->add_option("reports", rep_files, "report JSON files")->required();
  rep->add_option("--out", rep_out, "output directory");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(plan_file, sim_out, dry_run, sim_seed, io);
    if (base->parsed()) return cmd_baseline(base_data, base_flags.resolve(), io);
    if (bic->parsed()) return cmd_bic(bic_data, bic_channel, bic_speed, bic_out, bic_flags.resolve(), io);
    if (det->parsed()) {
      auto cfg = det_flags.resolve();
      if (!report_dir.empty()) cfg.report_dir = report_dir;
      return cmd_detect(det_data, cfg, report_name, against_bin, io);
    }
    if (rep->parsed()) return cmd_report(rep_files, rep_out, io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kError;
  }
  return kError;
}

inline int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace girder::cli
