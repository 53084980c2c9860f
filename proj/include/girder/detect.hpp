#pragma once

// Fit ratios, the damage feature, the Gaussian confidence boundary and the
// per-(channel, speed bin) baseline model used to flag outlying passages.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "girder/ar.hpp"
#include "girder/pca.hpp"
#include "girder/signals.hpp"

namespace girder {

/// ||s - s_hat|| / ||s||.
inline double fit_ratio(const Eigen::VectorXd& measured,
                        const Eigen::VectorXd& reconstructed) {
  if (measured.size() != reconstructed.size())
    throw std::invalid_argument("fit ratio needs equal-length signals");
  const double denom = measured.norm();
  if (!(denom > 0.0))
    throw std::invalid_argument("fit ratio of a zero-norm measured signal");
  return (measured - reconstructed).norm() / denom;
}

/// |fr2 - fr1| / fr2 * 100.
inline double damage_feature(double fr2, double fr1_ref) {
  if (!(fr2 > 0.0)) throw std::invalid_argument("damage feature needs fr2 > 0");
  return std::abs(fr2 - fr1_ref) / fr2 * 100.0;
}

inline double gaussian_cdf(double x, double mu = 0.0, double sigma = 1.0) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

/// Inverse Gaussian CDF (Wichura's AS 241, PPND16; ~1e-16 relative).
inline double gaussian_quantile(double p, double mu = 0.0, double sigma = 1.0) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("quantile probability must lie in (0, 1)");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const double q = p - 0.5;
  double z;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    z = q *
        (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r +
              67265.770927008700853) * r + 45921.953931549871457) * r +
            13731.693765509461125) * r + 1971.5909503065514427) * r +
          133.14166789178437745) * r + 3.387132872796366608) /
        (((((((r * 5226.495278852545925 + 28729.085735721942674) * r +
              39307.89580009271061) * r + 21213.794301586595867) * r +
            5394.1960214247511077) * r + 687.1870074920579083) * r +
          42.313330701600911252) * r + 1.0);
  } else {
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
      r -= 1.6;
      z = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r +
                0.24178072517745061177) * r + 1.27045825245236838258) * r +
              3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r +
                0.0151986665636164571966) * r + 0.14810397642748007459) * r +
              0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
    } else {
      r -= 5.0;
      z = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r +
                0.0012426609473880784386) * r + 0.026532189526576123093) * r +
              0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r +
                1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
              0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
    }
    if (q < 0.0) z = -z;
  }
  return mu + sigma * z;
}

struct CbThreshold {
  double mu = 0.0;
  double sigma = 0.0;
  double alpha = 0.01;
  double cb = 0.0;
  bool degenerate = false;  // sigma was floored
};

/// Boundary at probability 1 - alpha of N(mu, sigma) estimated from
/// baseline damage features (sample standard deviation).
inline CbThreshold confidence_boundary(const std::vector<double>& baseline_df,
                                       double alpha) {
  if (baseline_df.size() < 2)
    throw std::invalid_argument("confidence boundary needs at least 2 values");
  if (!(alpha > 0.0 && alpha < 0.5))
    throw std::invalid_argument("alpha must lie in (0, 0.5)");
  CbThreshold t;
  t.alpha = alpha;
  const double n = static_cast<double>(baseline_df.size());
  t.mu = std::accumulate(baseline_df.begin(), baseline_df.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : baseline_df) ss += (v - t.mu) * (v - t.mu);
  t.sigma = std::sqrt(ss / (n - 1.0));
  const double floor = 1e-9 * std::max(1.0, t.mu);
  if (!(t.sigma > floor)) {
    t.sigma = floor;
    t.degenerate = true;
  }
  t.cb = gaussian_quantile(1.0 - alpha, t.mu, t.sigma);
  return t;
}

inline bool is_outlier(double df, const CbThreshold& t) { return df >= t.cb; }

// ---------------------------------------------------------------------------
// Baseline model

/// How test passages are reconstructed: with the frozen baseline AR model,
/// or with an AR model of the same order refitted on each test passage.
enum class ArMode { Frozen, Refit };

/// Alignment trigger used by the baseline pipeline. Higher than the bare
/// trigger default: at 5% measurement noise a 5% level fires on noise ahead
/// of the train and the resulting shift jitter dominates the first components.
inline constexpr double kBaselineTriggerFraction = 0.30;

struct BaselineConfig {
  double alpha = 0.01;
  double pca_threshold = kDefaultVarianceThreshold;
  std::optional<int> ar_order;            // nullopt: select by BIC
  std::vector<int> order_grid = order_range(1, 150);
  std::size_t bic_max_signals = 0;        // 0: every fit passage
  double split_fraction = 0.7;
  std::uint64_t seed = 1;
  double bin_width = 0.0;
  std::size_t length_multiple = 10;
  std::size_t length_margin = 50;  // headroom for test records that trigger later
  double trigger_fraction = kBaselineTriggerFraction;
  ArMode ar_mode = ArMode::Frozen;
};

inline void validate(const BaselineConfig& c) {
  if (!(c.alpha > 0.0 && c.alpha < 0.5))
    throw std::invalid_argument("alpha must lie in (0, 0.5)");
  if (!(c.pca_threshold > 0.0 && c.pca_threshold <= 1.0))
    throw std::invalid_argument("pca_threshold must lie in (0, 1]");
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0))
    throw std::invalid_argument("split fraction must lie in (0, 1)");
  if (c.ar_order && *c.ar_order < 1)
    throw std::invalid_argument("AR order must be >= 1");
  if (!c.ar_order && c.order_grid.empty())
    throw std::invalid_argument("empty order grid");
}

struct BaselineModel {
  std::string channel_id;
  std::string speed_bin;
  double bin_width = 0.0;
  std::size_t target_n = 0;
  double trigger_fraction = kBaselineTriggerFraction;
  PcaBasis pca;
  ArModel ar;
  ArMode ar_mode = ArMode::Frozen;
  double fr1_ref = 0.0;
  CbThreshold threshold;
  std::vector<std::string> fit_ids;
  std::vector<std::string> validation_ids;
  std::vector<double> validation_df;
  std::optional<BicCurve> bic;
  std::optional<ChannelMeta> channel;
};

struct PassageScore {
  std::string passage_id;
  std::string channel_id;
  std::string speed_bin;
  Condition condition = Condition::Baseline;
  std::optional<DamageSpec> damage;
  double fr2 = 0.0;
  double df = 0.0;
  double cb = 0.0;
  bool outlier = false;
};

namespace detail {

inline std::vector<double> fit_ratios(const Eigen::MatrixXd& residual_rows,
                                      const ArModel& model, ArMode mode) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(residual_rows.rows()));
  for (Eigen::Index r = 0; r < residual_rows.rows(); ++r) {
    const Eigen::VectorXd x = residual_rows.row(r).transpose();
    if (mode == ArMode::Refit) {
      const auto fit = fit_ar(x, model.order);
      const Eigen::VectorXd target = x.tail(x.size() - model.order);
      out.push_back(fit_ratio(target, target - fit.residuals));
    } else {
      const auto p = predict_residuals(x, model);
      out.push_back(fit_ratio(p.target, p.reconstruction));
    }
  }
  return out;
}

inline std::vector<Eigen::VectorXd> rows_of(const Eigen::MatrixXd& m) {
  std::vector<Eigen::VectorXd> v;
  for (Eigen::Index r = 0; r < m.rows(); ++r) v.emplace_back(m.row(r).transpose());
  return v;
}

}  // namespace detail

/// Fit the PCA basis and AR model on a seeded split of the baseline
/// passages and set the confidence boundary from the held-out split.
inline BaselineModel fit_baseline(std::vector<PassageRecord> passages,
                                  const BaselineConfig& config,
                                  std::optional<ChannelMeta> channel = std::nullopt) {
  validate(config);
  if (passages.size() < 4)
    throw std::invalid_argument("baseline fit needs at least 4 passages, got " +
                                std::to_string(passages.size()));
  for (const auto& p : passages) {
    validate(p);
    if (p.condition != Condition::Baseline)
      throw std::invalid_argument("passage " + p.passage_id + " is not a baseline passage");
  }
  std::sort(passages.begin(), passages.end(),
            [](const auto& a, const auto& b) { return a.passage_id < b.passage_id; });
  std::mt19937_64 rng(config.seed);
  std::shuffle(passages.begin(), passages.end(), rng);

  const std::size_t k = passages.size();
  auto n_fit = static_cast<std::size_t>(std::lround(config.split_fraction * static_cast<double>(k)));
  n_fit = std::clamp<std::size_t>(n_fit, 2, k - 2);
  const std::vector<PassageRecord> fit_set(passages.begin(), passages.begin() + static_cast<std::ptrdiff_t>(n_fit));
  const std::vector<PassageRecord> val_set(passages.begin() + static_cast<std::ptrdiff_t>(n_fit), passages.end());

  BaselineModel model;
  model.channel_id = passages.front().channel_id;
  model.bin_width = config.bin_width;
  model.trigger_fraction = config.trigger_fraction;
  model.ar_mode = config.ar_mode;
  model.channel = std::move(channel);
  model.target_n = common_length(passages, config.length_multiple, config.trigger_fraction,
                                config.length_margin);

  const auto fit_matrix = align_to_matrix(fit_set, model.target_n, AlignMethod::Truncate,
                                          config.bin_width, config.trigger_fraction);
  model.speed_bin = fit_matrix.speed_bin;
  model.fit_ids = fit_matrix.passage_ids;
  model.pca = fit_pca(fit_matrix.data, config.pca_threshold);
  const Eigen::MatrixXd fit_resid = remove_components(fit_matrix.data, model.pca);
  const auto fit_rows = detail::rows_of(fit_resid);

  int order = 0;
  if (config.ar_order) {
    order = *config.ar_order;
  } else {
    std::vector<Eigen::VectorXd> bic_rows = fit_rows;
    if (config.bic_max_signals > 0 && bic_rows.size() > config.bic_max_signals)
      bic_rows.resize(config.bic_max_signals);
    model.bic = select_order(bic_rows, config.order_grid);
    order = model.bic->optimum;
  }
  if (model.target_n < static_cast<std::size_t>(2 * order + 1))
    throw std::invalid_argument("aligned length " + std::to_string(model.target_n) +
                                " is too short for AR(" + std::to_string(order) + ")");
  model.ar = fit_ar_stacked(fit_rows, order, model.channel_id).model;

  const auto fit_fr = detail::fit_ratios(fit_resid, model.ar, model.ar_mode);
  model.fr1_ref = std::accumulate(fit_fr.begin(), fit_fr.end(), 0.0) /
                  static_cast<double>(fit_fr.size());

  const auto val_matrix = align_to_matrix(val_set, model.target_n, AlignMethod::Truncate,
                                          config.bin_width, config.trigger_fraction);
  model.validation_ids = val_matrix.passage_ids;
  const auto val_fr = detail::fit_ratios(remove_components(val_matrix.data, model.pca),
                                         model.ar, model.ar_mode);
  for (double fr : val_fr) model.validation_df.push_back(damage_feature(fr, model.fr1_ref));
  model.threshold = confidence_boundary(model.validation_df, config.alpha);
  return model;
}

class SpeedBinMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Score test passages of the model's channel and speed bin. Passages from
/// another speed bin are refused unless `allow_speed_mismatch` is set.
inline std::vector<PassageScore> score_passages(const std::vector<PassageRecord>& passages,
                                                const BaselineModel& model,
                                                bool allow_speed_mismatch = false) {
  std::vector<PassageScore> out;
  if (passages.empty()) return out;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(passages.size()),
                    static_cast<Eigen::Index>(model.target_n));
  for (std::size_t i = 0; i < passages.size(); ++i) {
    const auto& p = passages[i];
    validate(p);
    if (p.channel_id != model.channel_id)
      throw std::invalid_argument("passage " + p.passage_id + " is from channel " +
                                  p.channel_id + ", model is for " + model.channel_id);
    const auto bin = speed_bin_label(p.speed_kmh, model.bin_width);
    if (bin != model.speed_bin && !allow_speed_mismatch)
      throw SpeedBinMismatch("passage " + p.passage_id + " is in speed bin " + bin +
                             " but the baseline was fitted at " + model.speed_bin +
                             " km/h; baselines are valid only at their own train speed");
    const auto row = truncate_after_trigger(p.samples, model.target_n, model.trigger_fraction);
    x.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
  }
  const auto fr = detail::fit_ratios(remove_components(x, model.pca), model.ar, model.ar_mode);
  for (std::size_t i = 0; i < passages.size(); ++i) {
    const auto& p = passages[i];
    PassageScore s;
    s.passage_id = p.passage_id;
    s.channel_id = p.channel_id;
    s.speed_bin = model.speed_bin;
    s.condition = p.condition;
    s.damage = p.damage;
    s.fr2 = fr[i];
    s.df = damage_feature(fr[i], model.fr1_ref);
    s.cb = model.threshold.cb;
    s.outlier = is_outlier(s.df, model.threshold);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ComponentVerdict {
  ComponentId component;
  bool detected = false;
  std::size_t flagged_rows = 0;
  std::vector<std::string> flagging_channels;
};

struct DamageReport {
  std::vector<PassageScore> rows;
  std::vector<ComponentVerdict> components;
  std::size_t baseline_rows = 0;
  std::size_t baseline_flagged = 0;
  std::size_t damaged_rows = 0;
  std::size_t damaged_flagged = 0;

  double false_positive_rate() const {
    return baseline_rows ? static_cast<double>(baseline_flagged) / static_cast<double>(baseline_rows) : 0.0;
  }
  double detection_rate() const {
    return damaged_rows ? static_cast<double>(damaged_flagged) / static_cast<double>(damaged_rows) : 0.0;
  }
  bool any_outlier() const {
    return std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.outlier; });
  }
};

/// Collect scores and attribute flags to components: a component counts as
/// detected when any channel observing it flags a passage.
inline DamageReport make_report(std::vector<PassageScore> rows,
                                const std::vector<ChannelMeta>& channels) {
  DamageReport rep;
  rep.rows = std::move(rows);
  std::map<ComponentId, ComponentVerdict> verdicts;
  for (const auto& ch : channels)
    for (const auto& c : ch.component_affinity) verdicts[c].component = c;
  for (const auto& r : rep.rows) {
    if (r.condition == Condition::Baseline) {
      ++rep.baseline_rows;
      rep.baseline_flagged += r.outlier ? 1 : 0;
    } else {
      ++rep.damaged_rows;
      rep.damaged_flagged += r.outlier ? 1 : 0;
    }
    if (!r.outlier) continue;
    const auto ch = std::find_if(channels.begin(), channels.end(),
                                 [&](const auto& c) { return c.channel_id == r.channel_id; });
    if (ch == channels.end()) continue;
    for (const auto& c : ch->component_affinity) {
      auto& v = verdicts[c];
      v.detected = true;
      ++v.flagged_rows;
      if (std::find(v.flagging_channels.begin(), v.flagging_channels.end(), r.channel_id) ==
          v.flagging_channels.end())
        v.flagging_channels.push_back(r.channel_id);
    }
  }
  for (auto& [id, v] : verdicts) {
    std::sort(v.flagging_channels.begin(), v.flagging_channels.end());
    rep.components.push_back(std::move(v));
  }
  return rep;
}

/// Score passages across channels and speed bins against a set of models.
/// Throws MissingModel naming the first (channel, bin) without a model.
class MissingModel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline DamageReport score(const std::vector<PassageRecord>& passages,
                          const std::vector<BaselineModel>& models) {
  if (passages.empty()) throw std::invalid_argument("no passages");
  std::map<std::pair<std::string, std::string>, std::vector<PassageRecord>> groups;
  std::vector<ChannelMeta> channels;
  for (const auto& p : passages) {
    const auto it = std::find_if(models.begin(), models.end(), [&](const auto& m) {
      return m.channel_id == p.channel_id &&
             m.speed_bin == speed_bin_label(p.speed_kmh, m.bin_width);
    });
    if (it == models.end())
      throw MissingModel("no baseline model for channel " + p.channel_id + " at speed bin " +
                         speed_bin_label(p.speed_kmh, models.empty() ? 0.0 : models.front().bin_width));
    groups[{it->channel_id, it->speed_bin}].push_back(p);
  }
  std::vector<PassageScore> rows;
  for (const auto& [key, group] : groups) {
    const auto& m = *std::find_if(models.begin(), models.end(), [&](const auto& mm) {
      return mm.channel_id == key.first && mm.speed_bin == key.second;
    });
    auto s = score_passages(group, m);
    rows.insert(rows.end(), s.begin(), s.end());
  }
  for (const auto& m : models)
    if (m.channel &&
        std::none_of(channels.begin(), channels.end(),
                     [&](const auto& c) { return c.channel_id == m.channel->channel_id; }))
      channels.push_back(*m.channel);
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.passage_id, a.channel_id) < std::tie(b.passage_id, b.channel_id);
  });
  return make_report(std::move(rows), channels);
}

inline DamageReport score(const std::vector<PassageRecord>& passages,
                          const BaselineModel& model) {
  return score(passages, std::vector<BaselineModel>{model});
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ChannelMeta& c) {
  nlohmann::json j;
  j["channel_id"] = c.channel_id;
  j["section"] = to_string(c.section);
  j["position_label"] = c.position_label;
  j["longitudinal_coord"] = c.longitudinal_coord;
  auto aff = nlohmann::json::array();
  for (const auto& a : c.component_affinity)
    aff.push_back({{"section", to_string(a.section)}, {"component", to_string(a.kind)}});
  j["component_affinity"] = std::move(aff);
  return j;
}

inline ChannelMeta channel_from_json(const nlohmann::json& j) {
  ChannelMeta c;
  c.channel_id = j.at("channel_id").get<std::string>();
  const auto sec = parse_section(j.at("section").get<std::string>());
  if (!sec) throw std::invalid_argument("unknown section in channel " + c.channel_id);
  c.section = *sec;
  c.position_label = j.value("position_label", c.channel_id);
  c.longitudinal_coord = j.value("longitudinal_coord", 0.0);
  for (const auto& a : j.value("component_affinity", nlohmann::json::array())) {
    const auto s = parse_section(a.at("section").get<std::string>());
    const auto k = parse_component(a.at("component").get<std::string>());
    if (!s || !k) throw std::invalid_argument("bad component affinity in channel " + c.channel_id);
    c.component_affinity.push_back({*s, *k});
  }
  return c;
}

inline nlohmann::json to_json(const CbThreshold& t) {
  return {{"mu", t.mu}, {"sigma", t.sigma}, {"alpha", t.alpha}, {"cb", t.cb},
          {"degenerate", t.degenerate}};
}

inline nlohmann::json to_json(const BicCurve& c) {
  return {{"orders", c.orders}, {"values", c.values}, {"optimum", c.optimum},
          {"degenerate", c.degenerate}};
}

inline nlohmann::json to_json(const BaselineModel& m) {
  nlohmann::json j;
  j["channel_id"] = m.channel_id;
  j["speed_bin"] = m.speed_bin;
  j["bin_width"] = m.bin_width;
  j["target_n"] = m.target_n;
  j["trigger_fraction"] = m.trigger_fraction;
  j["pca"] = to_json(m.pca);
  j["ar"] = to_json(m.ar);
  j["ar_mode"] = m.ar_mode == ArMode::Frozen ? "frozen" : "refit";
  j["fr1_ref"] = m.fr1_ref;
  j["threshold"] = to_json(m.threshold);
  j["training_manifest"] = {{"fit", m.fit_ids}, {"validation", m.validation_ids}};
  j["validation_df"] = m.validation_df;
  if (m.bic) j["bic"] = to_json(*m.bic);
  if (m.channel) j["channel"] = to_json(*m.channel);
  return j;
}

inline BaselineModel baseline_from_json(const nlohmann::json& j) {
  BaselineModel m;
  m.channel_id = j.at("channel_id").get<std::string>();
  m.speed_bin = j.at("speed_bin").get<std::string>();
  m.bin_width = j.value("bin_width", 0.0);
  m.target_n = j.at("target_n").get<std::size_t>();
  m.trigger_fraction = j.value("trigger_fraction", kBaselineTriggerFraction);
  m.pca = pca_from_json(j.at("pca"));
  m.ar = ar_from_json(j.at("ar"));
  m.ar_mode = j.value("ar_mode", "frozen") == "refit" ? ArMode::Refit : ArMode::Frozen;
  m.fr1_ref = j.at("fr1_ref").get<double>();
  const auto& t = j.at("threshold");
  m.threshold = {t.at("mu").get<double>(), t.at("sigma").get<double>(), t.at("alpha").get<double>(),
                 t.at("cb").get<double>(), t.value("degenerate", false)};
  m.fit_ids = j.at("training_manifest").at("fit").get<std::vector<std::string>>();
  m.validation_ids = j.at("training_manifest").at("validation").get<std::vector<std::string>>();
  m.validation_df = j.value("validation_df", std::vector<double>{});
  if (j.contains("bic")) {
    BicCurve c;
    c.orders = j["bic"].at("orders").get<std::vector<int>>();
    c.values = j["bic"].at("values").get<std::vector<double>>();
    c.optimum = j["bic"].at("optimum").get<int>();
    c.degenerate = j["bic"].value("degenerate", false);
    m.bic = std::move(c);
  }
  if (j.contains("channel")) m.channel = channel_from_json(j["channel"]);
  if (m.pca.dimension() != static_cast<Eigen::Index>(m.target_n))
    throw std::invalid_argument("model bundle: PCA dimension differs from target_n");
  return m;
}

inline nlohmann::json to_json(const PassageScore& s) {
  nlohmann::json j;
  j["passage_id"] = s.passage_id;
  j["channel_id"] = s.channel_id;
  j["speed_bin"] = s.speed_bin;
  j["condition"] = to_string(s.condition);
  if (s.damage)
    j["damage"] = {{"section", to_string(s.damage->section)},
                   {"component", to_string(s.damage->component)},
                   {"delta", s.damage->delta}};
  j["fr2"] = s.fr2;
  j["df"] = s.df;
  j["cb"] = s.cb;
  j["outlier"] = s.outlier;
  return j;
}

inline nlohmann::json to_json(const DamageReport& r) {
  nlohmann::json j;
  auto rows = nlohmann::json::array();
  for (const auto& s : r.rows) rows.push_back(to_json(s));
  j["passages"] = std::move(rows);
  auto comps = nlohmann::json::array();
  for (const auto& c : r.components)
    comps.push_back({{"section", to_string(c.component.section)},
                     {"component", to_string(c.component.kind)},
                     {"detected", c.detected},
                     {"flagged_rows", c.flagged_rows},
                     {"flagging_channels", c.flagging_channels}});
  j["components"] = std::move(comps);
  j["summary"] = {{"baseline_rows", r.baseline_rows},
                  {"baseline_flagged", r.baseline_flagged},
                  {"damaged_rows", r.damaged_rows},
                  {"damaged_flagged", r.damaged_flagged},
                  {"false_positive_rate", r.false_positive_rate()},
                  {"detection_rate", r.detection_rate()}};
  return j;
}

inline DamageReport report_from_json(const nlohmann::json& j) {
  DamageReport r;
  for (const auto& p : j.at("passages")) {
    PassageScore s;
    s.passage_id = p.at("passage_id").get<std::string>();
    s.channel_id = p.at("channel_id").get<std::string>();
    s.speed_bin = p.value("speed_bin", "");
    const auto cond = parse_condition(p.at("condition").get<std::string>());
    if (!cond) throw std::invalid_argument("unknown condition in report");
    s.condition = *cond;
    if (p.contains("damage")) {
      const auto& d = p["damage"];
      const auto sec = parse_section(d.at("section").get<std::string>());
      const auto comp = parse_component(d.at("component").get<std::string>());
      if (!sec || !comp) throw std::invalid_argument("bad damage entry in report");
      s.damage = DamageSpec{*sec, *comp, d.at("delta").get<double>()};
    }
    s.fr2 = p.at("fr2").get<double>();
    s.df = p.at("df").get<double>();
    s.cb = p.at("cb").get<double>();
    s.outlier = p.at("outlier").get<bool>();
    r.rows.push_back(std::move(s));
  }
  for (const auto& c : j.value("components", nlohmann::json::array())) {
    const auto sec = parse_section(c.at("section").get<std::string>());
    const auto comp = parse_component(c.at("component").get<std::string>());
    if (!sec || !comp) throw std::invalid_argument("bad component entry in report");
    ComponentVerdict v;
    v.component = {*sec, *comp};
    v.detected = c.at("detected").get<bool>();
    v.flagged_rows = c.value("flagged_rows", std::size_t{0});
    v.flagging_channels = c.value("flagging_channels", std::vector<std::string>{});
    r.components.push_back(std::move(v));
  }
  for (const auto& s : r.rows) {
    auto& total = s.condition == Condition::Baseline ? r.baseline_rows : r.damaged_rows;
    auto& flagged = s.condition == Condition::Baseline ? r.baseline_flagged : r.damaged_flagged;
    ++total;
    flagged += s.outlier ? 1 : 0;
  }
  return r;
}

inline void write_report_csv(std::ostream& os, const DamageReport& r) {
  os << "passage_id,channel_id,fr2,df,cb,outlier\n";
  for (const auto& s : r.rows)
    os << s.passage_id << ',' << s.channel_id << ',' << detail::format_double(s.fr2) << ','
       << detail::format_double(s.df) << ',' << detail::format_double(s.cb) << ','
       << (s.outlier ? 1 : 0) << '\n';
}

}  // namespace girder
