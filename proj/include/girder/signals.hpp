#pragma once

// Passage records, file ingestion and alignment of per-passage strain
// records into fixed-length rows for PCA over passages.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace girder {

enum class Section { Quarter, Mid, ThreeQuarter };

enum class ComponentKind {
  BottomPlate,
  LeftWeb,
  RightWeb,
  TopPlate,
  LeftTrackPlate,
  RightTrackPlate
};

inline constexpr std::array<Section, 3> kAllSections = {
    Section::Quarter, Section::Mid, Section::ThreeQuarter};

inline constexpr std::array<ComponentKind, 6> kAllComponents = {
    ComponentKind::BottomPlate,    ComponentKind::LeftWeb,
    ComponentKind::RightWeb,       ComponentKind::TopPlate,
    ComponentKind::LeftTrackPlate, ComponentKind::RightTrackPlate};

enum class Condition { Baseline, Damaged };

/// Raised for malformed input; the message names the file and line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(Section s) {
  switch (s) {
    case Section::Quarter: return "L/4";
    case Section::Mid: return "L/2";
    case Section::ThreeQuarter: return "3L/4";
  }
  return "?";
}

inline std::string to_string(ComponentKind c) {
  switch (c) {
    case ComponentKind::BottomPlate: return "bottom_plate";
    case ComponentKind::LeftWeb: return "left_web";
    case ComponentKind::RightWeb: return "right_web";
    case ComponentKind::TopPlate: return "top_plate";
    case ComponentKind::LeftTrackPlate: return "left_track_plate";
    case ComponentKind::RightTrackPlate: return "right_track_plate";
  }
  return "?";
}

inline std::string to_string(Condition c) {
  return c == Condition::Baseline ? "baseline" : "damaged";
}

inline std::optional<Section> parse_section(std::string_view s) {
  for (auto sec : kAllSections)
    if (to_string(sec) == s) return sec;
  return std::nullopt;
}

inline std::optional<ComponentKind> parse_component(std::string_view s) {
  for (auto c : kAllComponents)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline std::optional<Condition> parse_condition(std::string_view s) {
  if (s == "baseline") return Condition::Baseline;
  if (s == "damaged") return Condition::Damaged;
  return std::nullopt;
}

/// Fraction of the span at which a section sits.
inline double section_fraction(Section s) {
  switch (s) {
    case Section::Quarter: return 0.25;
    case Section::Mid: return 0.5;
    case Section::ThreeQuarter: return 0.75;
  }
  return 0.0;
}

struct ComponentId {
  Section section = Section::Quarter;
  ComponentKind kind = ComponentKind::BottomPlate;

  auto operator<=>(const ComponentId&) const = default;
};

inline std::string to_string(const ComponentId& id) {
  return to_string(id.section) + ":" + to_string(id.kind);
}

/// Stiffness reduction of one plate component at one section.
struct DamageSpec {
  Section section = Section::Quarter;
  ComponentKind component = ComponentKind::BottomPlate;
  double delta = 0.0;

  ComponentId id() const { return {section, component}; }
  bool operator==(const DamageSpec&) const = default;
};

inline void validate(const DamageSpec& d) {
  if (!(d.delta >= 0.0 && d.delta < 1.0))
    throw std::invalid_argument("damage delta must lie in [0, 1), got " +
                                std::to_string(d.delta));
}

struct ChannelMeta {
  std::string channel_id;
  Section section = Section::Quarter;
  std::string position_label;
  double longitudinal_coord = 0.0;  // metres along the span
  std::vector<ComponentId> component_affinity;

  bool observes(const ComponentId& c) const {
    return std::find(component_affinity.begin(), component_affinity.end(),
                     c) != component_affinity.end();
  }
};

/// Known channels of a dataset. An empty registry accepts any channel id.
class ChannelRegistry {
 public:
  ChannelRegistry() = default;

  explicit ChannelRegistry(std::vector<ChannelMeta> channels, double span)
      : channels_(std::move(channels)) {
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      const auto& c = channels_[i];
      if (c.longitudinal_coord < 0.0 || c.longitudinal_coord > span)
        throw std::invalid_argument("channel " + c.channel_id +
                                    " lies outside the span");
      for (std::size_t j = 0; j < i; ++j)
        if (channels_[j].channel_id == c.channel_id)
          throw std::invalid_argument("duplicate channel id " + c.channel_id);
    }
  }

  const ChannelMeta* find(std::string_view id) const {
    for (const auto& c : channels_)
      if (c.channel_id == id) return &c;
    return nullptr;
  }

  bool empty() const { return channels_.empty(); }
  const std::vector<ChannelMeta>& channels() const { return channels_; }

 private:
  std::vector<ChannelMeta> channels_;
};

/// One train passage seen by one strain channel.
struct PassageRecord {
  std::string passage_id;
  std::string channel_id;
  std::vector<double> samples;  // microstrain
  double sample_rate = 1000.0;  // Hz
  double speed_kmh = 0.0;
  std::string weight_class;
  std::string irregularity_label;
  Condition condition = Condition::Baseline;
  std::optional<DamageSpec> damage;
};

inline void validate(const PassageRecord& r) {
  if (r.samples.empty())
    throw std::invalid_argument("passage " + r.passage_id + " has no samples");
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    if (!std::isfinite(r.samples[i]))
      throw std::invalid_argument("passage " + r.passage_id + "/" +
                                  r.channel_id + " has a non-finite sample at " +
                                  std::to_string(i));
  if (r.condition == Condition::Baseline && r.damage)
    throw std::invalid_argument("baseline passage " + r.passage_id +
                                " carries a damage spec");
  if (r.damage) validate(*r.damage);
  if (!(r.sample_rate > 0.0))
    throw std::invalid_argument("sample rate must be positive");
}

/// Speed-bin label. width <= 0 means exact matching on the speed value.
inline std::string speed_bin_label(double speed_kmh, double width = 0.0) {
  double v = speed_kmh;
  if (width > 0.0) v = std::round(speed_kmh / width) * width;
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// k passages x n samples for one channel and one speed bin.
struct PassageMatrix {
  std::string channel_id;
  std::string speed_bin;
  std::vector<std::string> passage_ids;
  Eigen::MatrixXd data;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
};

// ---------------------------------------------------------------------------
// Alignment

enum class AlignMethod { Truncate, LinearResample };

inline constexpr double kDefaultTriggerFraction = 0.05;

/// First sample whose magnitude exceeds `fraction` of the record's peak
/// magnitude; 0 for an all-zero record.
inline std::size_t trigger_index(std::span<const double> x,
                                 double fraction = kDefaultTriggerFraction) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return 0;
  const double level = fraction * peak;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) > level) return i;
  return 0;
}

/// Minimum post-trigger length across records, less `margin` samples of
/// headroom for later test records, rounded down to a multiple of `multiple`.
inline std::size_t common_length(const std::vector<PassageRecord>& records,
                                 std::size_t multiple = 10,
                                 double fraction = kDefaultTriggerFraction,
                                 std::size_t margin = 0) {
  if (records.empty()) throw std::invalid_argument("no passages");
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& r : records)
    n = std::min(n, r.samples.size() - trigger_index(r.samples, fraction));
  n -= std::min(n, margin);
  if (multiple > 1) n -= n % multiple;
  return n;
}

inline std::vector<double> truncate_after_trigger(
    std::span<const double> x, std::size_t target_n,
    double fraction = kDefaultTriggerFraction) {
  const std::size_t t = trigger_index(x, fraction);
  if (x.size() - t < target_n)
    throw std::invalid_argument("record has " + std::to_string(x.size() - t) +
                                " post-trigger samples, need " +
                                std::to_string(target_n));
  return {x.begin() + static_cast<std::ptrdiff_t>(t),
          x.begin() + static_cast<std::ptrdiff_t>(t + target_n)};
}

inline std::vector<double> linear_resample(std::span<const double> x,
                                           std::size_t target_n) {
  if (x.empty() || target_n == 0)
    throw std::invalid_argument("cannot resample an empty record");
  std::vector<double> out(target_n);
  if (target_n == 1 || x.size() == 1) {
    std::fill(out.begin(), out.end(), x[0]);
    return out;
  }
  const double step = static_cast<double>(x.size() - 1) /
                      static_cast<double>(target_n - 1);
  for (std::size_t i = 0; i < target_n; ++i) {
    const double pos = step * static_cast<double>(i);
    const auto lo = std::min(static_cast<std::size_t>(pos), x.size() - 2);
    const double frac = pos - static_cast<double>(lo);
    out[i] = x[lo] + frac * (x[lo + 1] - x[lo]);
  }
  return out;
}

inline PassageMatrix align_to_matrix(const std::vector<PassageRecord>& records,
                                     std::size_t target_n,
                                     AlignMethod method = AlignMethod::Truncate,
                                     double bin_width = 0.0,
                                     double fraction = kDefaultTriggerFraction) {
  if (records.empty()) throw std::invalid_argument("no passages");
  if (target_n == 0) throw std::invalid_argument("target length is zero");
  PassageMatrix m;
  m.channel_id = records.front().channel_id;
  m.speed_bin = speed_bin_label(records.front().speed_kmh, bin_width);
  m.data.resize(static_cast<Eigen::Index>(records.size()),
                static_cast<Eigen::Index>(target_n));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.channel_id != m.channel_id)
      throw std::invalid_argument("mixed channels: " + m.channel_id + " and " +
                                  r.channel_id);
    if (speed_bin_label(r.speed_kmh, bin_width) != m.speed_bin)
      throw std::invalid_argument(
          "mixed speed bins: " + m.speed_bin + " and " +
          speed_bin_label(r.speed_kmh, bin_width) +
          " (baselines are per speed; resample explicitly if intended)");
    const auto row = method == AlignMethod::Truncate
                         ? truncate_after_trigger(r.samples, target_n, fraction)
                         : linear_resample(r.samples, target_n);
    m.data.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(row.data(),
                                             static_cast<Eigen::Index>(target_n));
    m.passage_ids.push_back(r.passage_id);
  }
  return m;
}

// ---------------------------------------------------------------------------
// File formats

enum class FileFormat { Csv, Json };

inline constexpr std::string_view kCsvHeader =
    "passage_id,channel_id,speed_kmh,weight_class,irregularity,condition,"
    "damage_component,damage_section,damage_delta,sample_index,value";

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::optional<double> parse_double(std::string_view s) {
  // strtod accepts "nan"/"inf", which lets the finiteness check report them.
  std::string tmp(s);
  if (tmp.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size()) return std::nullopt;
  return v;
}

}  // namespace detail

inline void write_passages_csv(std::ostream& os,
                               const std::vector<PassageRecord>& records,
                               bool header = true) {
  if (header) os << kCsvHeader << '\n';
  for (const auto& r : records) {
    std::string prefix = r.passage_id + ',' + r.channel_id + ',' +
                         detail::format_double(r.speed_kmh) + ',' +
                         r.weight_class + ',' + r.irregularity_label + ',' +
                         to_string(r.condition) + ',';
    if (r.damage)
      prefix += to_string(r.damage->component) + ',' +
                to_string(r.damage->section) + ',' +
                detail::format_double(r.damage->delta) + ',';
    else
      prefix += ",,,";
    for (std::size_t i = 0; i < r.samples.size(); ++i)
      os << prefix << i << ',' << detail::format_double(r.samples[i]) << '\n';
  }
}

inline nlohmann::json to_json(const PassageRecord& r) {
  nlohmann::json j;
  j["passage_id"] = r.passage_id;
  j["channel_id"] = r.channel_id;
  j["speed_kmh"] = r.speed_kmh;
  j["weight_class"] = r.weight_class;
  j["irregularity"] = r.irregularity_label;
  j["condition"] = to_string(r.condition);
  j["sample_rate"] = r.sample_rate;
  if (r.damage) {
    j["damage_component"] = to_string(r.damage->component);
    j["damage_section"] = to_string(r.damage->section);
    j["damage_delta"] = r.damage->delta;
  }
  j["samples"] = r.samples;
  return j;
}

inline void write_passages_json(std::ostream& os,
                                const std::vector<PassageRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back(to_json(r));
  os << arr.dump() << '\n';
}

namespace detail {

inline std::optional<DamageSpec> parse_damage(std::string_view component,
                                              std::string_view section,
                                              std::string_view delta,
                                              const std::string& where) {
  if (component.empty() && section.empty() && delta.empty())
    return std::nullopt;
  auto c = parse_component(component);
  auto s = parse_section(section);
  auto d = parse_double(delta);
  if (!c) throw ParseError(where + ": unknown damage component '" +
                           std::string(component) + "'");
  if (!s) throw ParseError(where + ": unknown damage section '" +
                           std::string(section) + "'");
  if (!d) throw ParseError(where + ": bad damage delta '" +
                           std::string(delta) + "'");
  return DamageSpec{*s, *c, *d};
}

inline void finish_record(PassageRecord& r, const ChannelRegistry& registry,
                          const std::string& where) {
  if (!registry.empty() && !registry.find(r.channel_id))
    throw ParseError(where + ": unknown channel id '" + r.channel_id + "'");
  try {
    validate(r);
  } catch (const std::invalid_argument& e) {
    throw ParseError(where + ": " + e.what());
  }
}

/// Every channel of one passage must carry the same sample count.
inline void check_passage_lengths(const std::vector<PassageRecord>& records,
                                  const std::string& file) {
  std::map<std::string, std::size_t> lengths;
  for (const auto& r : records) {
    auto [it, inserted] = lengths.emplace(r.passage_id, r.samples.size());
    if (!inserted && it->second != r.samples.size())
      throw ParseError(file + ": passage " + r.passage_id +
                       " has inconsistent sample counts across channels (" +
                       std::to_string(it->second) + " vs " +
                       std::to_string(r.samples.size()) + ")");
  }
}

}  // namespace detail

inline std::vector<PassageRecord> read_passages_csv(
    std::istream& is, const std::string& file,
    const ChannelRegistry& registry = {}, double sample_rate = 1000.0) {
  std::vector<PassageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  const auto where = [&] { return file + ":" + std::to_string(lineno); };
  if (!std::getline(is, line)) throw ParseError(file + ": no passages");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader)
    throw ParseError(where() + ": malformed header, expected '" +
                     std::string(kCsvHeader) + "'");

  PassageRecord* cur = nullptr;
  std::set<std::pair<std::string, std::string>> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 11)
      throw ParseError(where() + ": expected 11 fields, got " +
                       std::to_string(f.size()));
    const auto index = detail::parse_double(f[9]);
    const auto value = detail::parse_double(f[10]);
    if (!index || !value)
      throw ParseError(where() + ": unparsable sample_index/value");
    if (!std::isfinite(*value))
      throw ParseError(where() + ": non-finite sample in passage " +
                       std::string(f[0]));
    const bool same = cur && cur->passage_id == f[0] && cur->channel_id == f[1];
    if (!same) {
      if (cur) detail::finish_record(*cur, registry, where());
      PassageRecord r;
      r.passage_id = std::string(f[0]);
      r.channel_id = std::string(f[1]);
      const auto speed = detail::parse_double(f[2]);
      if (!speed) throw ParseError(where() + ": bad speed_kmh");
      r.speed_kmh = *speed;
      r.weight_class = std::string(f[3]);
      r.irregularity_label = std::string(f[4]);
      const auto cond = parse_condition(f[5]);
      if (!cond)
        throw ParseError(where() + ": unknown condition '" + std::string(f[5]) +
                         "'");
      r.condition = *cond;
      r.damage = detail::parse_damage(f[6], f[7], f[8], where());
      r.sample_rate = sample_rate;
      if (!seen.emplace(r.passage_id, r.channel_id).second)
        throw ParseError(where() + ": samples of passage " + r.passage_id +
                           "/" + r.channel_id + " are not contiguous");
      out.push_back(std::move(r));
      cur = &out.back();
    }
    if (*index != static_cast<double>(cur->samples.size()))
      throw ParseError(where() + ": sample_index " + std::string(f[9]) +
                       " out of order (expected " +
                       std::to_string(cur->samples.size()) + ")");
    cur->samples.push_back(*value);
  }
  if (out.empty()) throw ParseError(file + ": no passages");
  detail::finish_record(*cur, registry, where());
  detail::check_passage_lengths(out, file);
  return out;
}

inline std::vector<PassageRecord> read_passages_json(
    std::istream& is, const std::string& file,
    const ChannelRegistry& registry = {}) {
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file + ": " + e.what());
  }
  if (!arr.is_array()) throw ParseError(file + ": expected an array of passages");
  if (arr.empty()) throw ParseError(file + ": no passages");
  std::vector<PassageRecord> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& j = arr[i];
    const std::string where = file + ": passage #" + std::to_string(i);
    try {
      PassageRecord r;
      r.passage_id = j.at("passage_id").get<std::string>();
      r.channel_id = j.at("channel_id").get<std::string>();
      r.speed_kmh = j.at("speed_kmh").get<double>();
      r.weight_class = j.value("weight_class", "");
      r.irregularity_label = j.value("irregularity", "");
      const auto cond = parse_condition(j.value("condition", "baseline"));
      if (!cond) throw ParseError(where + ": unknown condition");
      r.condition = *cond;
      r.sample_rate = j.value("sample_rate", 1000.0);
      if (j.contains("damage_component") && !j["damage_component"].is_null())
        r.damage = detail::parse_damage(
            j.at("damage_component").get<std::string>(),
            j.at("damage_section").get<std::string>(),
            detail::format_double(j.at("damage_delta").get<double>()), where);
      for (const auto& v : j.at("samples")) {
        if (!v.is_number())
          throw ParseError(where + ": non-finite or non-numeric sample");
        r.samples.push_back(v.get<double>());
      }
      detail::finish_record(r, registry, where);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  detail::check_passage_lengths(out, file);
  return out;
}

inline std::vector<PassageRecord> load_passages(
    const std::string& path, FileFormat format,
    const ChannelRegistry& registry = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  return format == FileFormat::Csv ? read_passages_csv(in, path, registry)
                                   : read_passages_json(in, path, registry);
}

/// Guess the format from the extension (.json, otherwise CSV).
inline FileFormat format_from_path(const std::string& path) {
  return path.size() >= 5 && path.substr(path.size() - 5) == ".json"
             ? FileFormat::Json
             : FileFormat::Csv;
}

}  // namespace girder
