#pragma once

// Surrogate strain generator for a 32 m simply supported box girder crossed
// by an eight-carriage train. Strain comes from influence-line superposition
// of the axle loads, weighted per (channel, plate component) and by lane
// eccentricity. Damage is a local stiffness reduction; track irregularity is
// a multiplicative dynamic term.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "girder/io.hpp"
#include "girder/signals.hpp"

namespace girder {

enum class Lane { Up, Down };
enum class Side { Left, Right };
enum class Fiber { Bottom, Top };

inline std::string to_string(Lane l) { return l == Lane::Up ? "up" : "down"; }

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return mix_seed(a, h);
}

// ---------------------------------------------------------------------------
// Train

struct Carriage {
  std::string label;
  double total_weight = 0.0;                 // kN
  std::array<double, 4> axle_weights{};      // kN
  std::array<double, 4> axle_offsets{};      // m from the carriage front
};

inline constexpr std::array<double, 4> kDefaultAxleOffsets = {2.5625, 5.0625, 19.9375, 22.4375};

inline Carriage make_carriage(std::string label, double total_weight,
                              std::array<double, 4> offsets = kDefaultAxleOffsets) {
  Carriage c{std::move(label), total_weight, {}, offsets};
  c.axle_weights.fill(total_weight / 4.0);
  return c;
}

struct TrainSpec {
  std::vector<Carriage> carriages;
  double carriage_length = 25.0;  // m
  double speed_kmh = 360.0;
  Lane lane = Lane::Up;

  double length() const { return carriage_length * static_cast<double>(carriages.size()); }
  double speed_ms() const { return speed_kmh / 3.6; }
};

inline void validate(const TrainSpec& t) {
  if (t.carriages.empty()) throw std::invalid_argument("train has no carriages");
  if (!(t.speed_kmh > 0.0)) throw std::invalid_argument("train speed must be positive");
  if (!(t.carriage_length > 0.0)) throw std::invalid_argument("carriage length must be positive");
  for (const auto& c : t.carriages) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (c.axle_offsets[i] < 0.0 || c.axle_offsets[i] > t.carriage_length)
        throw std::invalid_argument("carriage " + c.label + ": axle offset outside the carriage");
      if (i > 0 && !(c.axle_offsets[i] > c.axle_offsets[i - 1]))
        throw std::invalid_argument("carriage " + c.label + ": axle offsets must increase");
      if (!(c.axle_weights[i] >= 0.0))
        throw std::invalid_argument("carriage " + c.label + ": negative axle weight");
    }
  }
}

/// Eight carriages, four motored and four trailers, with the axle weights
/// scaled by `weight_scale`.
inline TrainSpec default_train(double speed_kmh = 360.0, double weight_scale = 1.0,
                               Lane lane = Lane::Up) {
  static const std::array<std::pair<const char*, double>, 8> kCarriages = {{
      {"M1", 574.3}, {"T2", 666.4}, {"M3", 651.7}, {"T4", 599.8},
      {"T5", 612.5}, {"M6", 666.4}, {"T7", 654.6}, {"M8", 571.3}}};
  TrainSpec t;
  t.speed_kmh = speed_kmh;
  t.lane = lane;
  for (const auto& [label, w] : kCarriages) t.carriages.push_back(make_carriage(label, w * weight_scale));
  return t;
}

struct Axle {
  double offset = 0.0;  // m behind the train front
  double weight = 0.0;  // kN
};

inline std::vector<Axle> axles_of(const TrainSpec& t) {
  std::vector<Axle> out;
  for (std::size_t i = 0; i < t.carriages.size(); ++i)
    for (std::size_t a = 0; a < 4; ++a)
      out.push_back({static_cast<double>(i) * t.carriage_length + t.carriages[i].axle_offsets[a],
                     t.carriages[i].axle_weights[a]});
  return out;
}

// ---------------------------------------------------------------------------
// Girder and channels

struct ChannelLayout {
  ChannelMeta meta;
  Side side = Side::Left;
  Fiber fiber = Fiber::Bottom;
  std::map<ComponentKind, double> gains;  // components of the channel's own section
};

struct GirderSpec {
  double span = 32.0;
  std::vector<ChannelLayout> channels;
  double tau_near = 1.0;  // torsion factor of channels on the loaded lane's side
  double tau_far = 0.7;

  double section_coord(Section s) const { return section_fraction(s) * span; }

  double tau(Lane lane, Side side) const {
    const bool near = (lane == Lane::Up) == (side == Side::Left);
    return near ? tau_near : tau_far;
  }

  const ChannelLayout* find(std::string_view id) const {
    for (const auto& c : channels)
      if (c.meta.channel_id == id) return &c;
    return nullptr;
  }

  ChannelRegistry registry() const {
    std::vector<ChannelMeta> metas;
    for (const auto& c : channels) metas.push_back(c.meta);
    return ChannelRegistry(std::move(metas), span);
  }
};

inline void validate(const GirderSpec& g) {
  if (!(g.span > 0.0)) throw std::invalid_argument("span must be positive");
  if (!(g.tau_near > g.tau_far && g.tau_far > 0.0))
    throw std::invalid_argument("torsion factors must satisfy tau_near > tau_far > 0");
  for (const auto& c : g.channels) {
    double mx = 0.0;
    for (const auto& [k, v] : c.gains) {
      if (v < 0.0 || v > 1.0)
        throw std::invalid_argument("channel " + c.meta.channel_id + ": gain outside [0, 1]");
      mx = std::max(mx, v);
    }
    if (mx != 1.0)
      throw std::invalid_argument("channel " + c.meta.channel_id + ": largest gain must be 1");
  }
  (void)g.registry();
}

/// Twelve channels: bottom and top fibres on both sides of L/4, L/2 and 3L/4.
inline GirderSpec default_girder(double span = 32.0) {
  GirderSpec g;
  g.span = span;
  struct Row { const char* id; Section s; Side side; Fiber fiber; };
  static const std::array<Row, 12> kRows = {{
      {"P3b", Section::Quarter, Side::Left, Fiber::Bottom},
      {"P12b", Section::Quarter, Side::Right, Fiber::Bottom},
      {"P3t", Section::Quarter, Side::Left, Fiber::Top},
      {"P12t", Section::Quarter, Side::Right, Fiber::Top},
      {"P5b", Section::Mid, Side::Left, Fiber::Bottom},
      {"P14b", Section::Mid, Side::Right, Fiber::Bottom},
      {"P5t", Section::Mid, Side::Left, Fiber::Top},
      {"P14t", Section::Mid, Side::Right, Fiber::Top},
      {"P7b", Section::ThreeQuarter, Side::Left, Fiber::Bottom},
      {"P16b", Section::ThreeQuarter, Side::Right, Fiber::Bottom},
      {"P7t", Section::ThreeQuarter, Side::Left, Fiber::Top},
      {"P16t", Section::ThreeQuarter, Side::Right, Fiber::Top}}};
  for (const auto& r : kRows) {
    ChannelLayout c;
    c.side = r.side;
    c.fiber = r.fiber;
    const bool left = r.side == Side::Left;
    if (r.fiber == Fiber::Bottom) {
      c.gains[ComponentKind::BottomPlate] = 1.0;
      c.gains[left ? ComponentKind::LeftWeb : ComponentKind::RightWeb] = 0.8;
    } else {
      c.gains[ComponentKind::TopPlate] = 1.0;
      c.gains[left ? ComponentKind::LeftTrackPlate : ComponentKind::RightTrackPlate] = 0.35;
    }
    c.meta.channel_id = r.id;
    c.meta.section = r.s;
    c.meta.position_label = to_string(r.s) + (left ? " left " : " right ") +
                            (r.fiber == Fiber::Bottom ? "bottom" : "top");
    c.meta.longitudinal_coord = section_fraction(r.s) * span;
    for (const auto& [k, v] : c.gains)
      if (v > 0.0) c.meta.component_affinity.push_back({r.s, k});
    g.channels.push_back(std::move(c));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Surrogate parameters and irregularity presets

/// Every constant of the surrogate physics. None of these are measured values.
struct SurrogateParams {
  double strain_per_moment = 6.2e-3;  // microstrain per kN*m at the bottom fibre
  double top_fiber_ratio = -0.58;     // top fibre strain relative to bottom
  double kappa = 1.0;                 // amp = 1 / (1 - kappa * delta)
  double window_fraction = 0.125;     // damage acts within +-fraction*span of its section
  double fluctuation_rms = 0.02;      // times delta times channel peak
  double fluctuation_lo_hz = 20.0;
  double fluctuation_hi_hz = 80.0;
  int fluctuation_terms = 128;
  double roughness_ratio = 0.02;      // RMS of the dynamic factor at level 1 and 360 km/h
  double roughness_lo_hz = 1.0;       // band at the reference speed
  double roughness_hi_hz = 50.0;
  double reference_speed_kmh = 360.0;
  int roughness_terms = 256;
  double dynamic_ratio = 0.02;        // RMS of the per-passage dynamic factor at the reference speed
  double dynamic_exponent = 0.0;
};

struct IrregularityPreset {
  std::string label;
  double level = 1.0;     // scales roughness_ratio
  double exponent = 2.0;  // PSD ~ n^-exponent over spatial frequency n
  std::uint64_t seed = 0;
};

struct WeightClass {
  std::string label;
  double scale = 1.0;
};

inline std::vector<IrregularityPreset> default_irregularities() {
  return {{"uic_good", 0.40, 3.0, 11}, {"irr2", 0.55, 2.8, 12}, {"irr3", 0.70, 2.6, 13},
          {"irr4", 0.85, 2.5, 14},     {"irr5", 1.00, 2.4, 15}, {"irr6", 1.20, 2.2, 16},
          {"irr7", 1.45, 2.1, 17},     {"uic_bad", 1.80, 2.0, 18}};
}

inline std::vector<WeightClass> default_weight_classes() {
  return {{"w095", 0.95}, {"w100", 1.00}, {"w105", 1.05}, {"w110", 1.10}};
}

// ---------------------------------------------------------------------------
// Physics

/// Unit-load bending-moment influence ordinate at x_sensor for a load at
/// x_load; zero when the load is off the span.
inline double influence_strain(double x_sensor, double x_load, double span) {
  if (x_load < 0.0 || x_load > span) return 0.0;
  if (x_load <= x_sensor) return x_load * (span - x_sensor) / span;
  return x_sensor * (span - x_load) / span;
}

/// Passage duration from the first axle entering to the train front having
/// run (train length + span).
inline std::size_t passage_samples(const TrainSpec& t, double span, double sample_rate) {
  return static_cast<std::size_t>(std::ceil((t.length() + span) / t.speed_ms() * sample_rate));
}

namespace detail {

struct Sinusoid {
  double freq, amp, phase;
};

/// Sum-of-sinusoids realization with PSD ~ f^-exponent on [lo, hi],
/// normalized to the requested RMS.
inline std::vector<Sinusoid> spectral_realization(double lo, double hi, double exponent,
                                                  int terms, double rms, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Sinusoid> out;
  const double df = (hi - lo) / terms;
  double power = 0.0;
  for (int j = 0; j < terms; ++j) {
    const double f = lo + (j + u(rng)) * df;
    const double a = std::sqrt(std::pow(f, -exponent) * df);
    out.push_back({f, a, 2.0 * std::numbers::pi * u(rng)});
    power += a * a / 2.0;
  }
  const double scale = power > 0.0 ? rms / std::sqrt(power) : 0.0;
  for (auto& s : out) s.amp *= scale;
  return out;
}

inline double evaluate(const std::vector<Sinusoid>& s, double x) {
  double v = 0.0;
  for (const auto& t : s) v += t.amp * std::cos(2.0 * std::numbers::pi * t.freq * x + t.phase);
  return v;
}

}  // namespace detail

struct PassageContext {
  std::string passage_id;
  std::string weight_class;
  std::uint64_t seed = 0;  // damage fluctuation
};

/// Noise-free strain of every channel for one passage.
inline std::vector<PassageRecord> synthesize_passage(
    const TrainSpec& train, const GirderSpec& girder, const std::optional<DamageSpec>& damage,
    const std::optional<IrregularityPreset>& irregularity, double sample_rate = 1000.0,
    const SurrogateParams& params = {}, const PassageContext& ctx = {}) {
  validate(train);
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
  if (damage) validate(*damage);
  const double L = girder.span;
  const double v = train.speed_ms();
  const auto axles = axles_of(train);
  const std::size_t n = passage_samples(train, L, sample_rate);

  std::vector<double> rough(n, 0.0);
  if (irregularity) {
    const double rms = irregularity->level * params.roughness_ratio *
                       (train.speed_kmh / params.reference_speed_kmh);
    if (rms > 0.0) {
      // Spatial profile: the band is fixed in cycles per metre at the
      // reference speed, so a different speed shifts the temporal band.
      const double vref = params.reference_speed_kmh / 3.6;
      const auto s = detail::spectral_realization(params.roughness_lo_hz / vref,
                                                  params.roughness_hi_hz / vref,
                                                  irregularity->exponent, params.roughness_terms,
                                                  rms, mix_seed(irregularity->seed, "roughness"));
      for (std::size_t i = 0; i < n; ++i) rough[i] = detail::evaluate(s, v * (static_cast<double>(i) / sample_rate));
    }
  }
  // Run-to-run vehicle dynamics: same band, fixed level, fresh phases per passage.
  const double dyn_rms = params.dynamic_ratio * (train.speed_kmh / params.reference_speed_kmh);
  if (dyn_rms > 0.0) {
    const auto s = detail::spectral_realization(params.roughness_lo_hz, params.roughness_hi_hz,
                                                params.dynamic_exponent, params.roughness_terms,
                                                dyn_rms, mix_seed(ctx.seed, "dynamics"));
    for (std::size_t i = 0; i < n; ++i) rough[i] += detail::evaluate(s, static_cast<double>(i) / sample_rate);
  }

  const bool damaged = damage && damage->delta > 0.0;
  const double dam_x = damaged ? girder.section_coord(damage->section) : 0.0;
  const double half_window = params.window_fraction * L;
  const double amp = damaged ? 1.0 / (1.0 - params.kappa * damage->delta) : 1.0;
  if (damaged && !(params.kappa * damage->delta < 1.0))
    throw std::invalid_argument("kappa * delta must stay below 1");

  std::vector<double> gate(n, 0.0);
  std::vector<double> fluct(n, 0.0);
  if (damaged) {
    const auto s = detail::spectral_realization(params.fluctuation_lo_hz, params.fluctuation_hi_hz,
                                                0.0, params.fluctuation_terms, 1.0,
                                                mix_seed(ctx.seed, "fluctuation"));
    for (std::size_t i = 0; i < n; ++i) {
      const double front = v * static_cast<double>(i) / sample_rate;
      for (const auto& a : axles)
        if (std::abs(front - a.offset - dam_x) <= half_window) {
          gate[i] = 1.0;
          break;
        }
      if (gate[i] > 0.0) fluct[i] = detail::evaluate(s, static_cast<double>(i) / sample_rate);
    }
  }

  std::vector<PassageRecord> out;
  for (const auto& ch : girder.channels) {
    const double xs = ch.meta.longitudinal_coord;
    const double fiber = params.strain_per_moment * (ch.fiber == Fiber::Top ? params.top_fiber_ratio : 1.0);
    const double tau = girder.tau(train.lane, ch.side);
    double g_damaged = 0.0;
    if (damaged && damage->section == ch.meta.section) {
      const auto it = ch.gains.find(damage->component);
      if (it != ch.gains.end()) g_damaged = it->second;
    }
    double g_total = 0.0;
    for (const auto& [k, g] : ch.gains) g_total += g;

    PassageRecord r;
    r.passage_id = ctx.passage_id;
    r.channel_id = ch.meta.channel_id;
    r.sample_rate = sample_rate;
    r.speed_kmh = train.speed_kmh;
    r.weight_class = ctx.weight_class;
    r.irregularity_label = irregularity ? irregularity->label : "";
    r.condition = damage ? Condition::Damaged : Condition::Baseline;
    r.damage = damage;
    r.samples.resize(n);
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double front = v * static_cast<double>(i) / sample_rate;
      double m = 0.0;
      for (const auto& a : axles) m += a.weight * influence_strain(xs, front - a.offset, L);
      // The damaged component's strain is amplified while any axle is within
      // the damage window.
      const double base = fiber * tau * m * (g_total + g_damaged * (amp - 1.0) * gate[i]);
      r.samples[i] = base * (1.0 + rough[i]);
      peak = std::max(peak, std::abs(fiber * tau * g_total * m));
    }
    if (g_damaged > 0.0) {
      const double k = params.fluctuation_rms * damage->delta * peak * g_damaged;
      for (std::size_t i = 0; i < n; ++i) r.samples[i] += k * fluct[i];
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// b + nlev * mean|b| * z with z standard normal.
inline std::vector<double> add_noise(std::span<const double> b, double nlev, std::uint64_t seed) {
  if (!(nlev >= 0.0)) throw std::invalid_argument("noise level must be >= 0");
  std::vector<double> out(b.begin(), b.end());
  if (nlev == 0.0 || b.empty()) return out;
  double mean_abs = 0.0;
  for (double x : b) mean_abs += std::abs(x);
  mean_abs /= static_cast<double>(b.size());
  const double sigma = nlev * mean_abs;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  for (auto& x : out) x += sigma * z(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment plan

struct ExperimentPlan {
  std::vector<double> speeds{300.0, 330.0, 360.0};
  std::vector<WeightClass> weight_classes = default_weight_classes();
  std::vector<IrregularityPreset> irregularities = default_irregularities();
  double noise_level = 0.05;
  int baseline_passages = 2;  // per baseline condition
  int damage_passages = 1;    // per damage condition
  bool include_damage = true;
  std::vector<Section> damage_sections{kAllSections.begin(), kAllSections.end()};
  std::vector<ComponentKind> damage_components{kAllComponents.begin(), kAllComponents.end()};
  std::vector<double> deltas{0.05, 0.10, 0.15, 0.20};
  std::vector<std::string> channels;  // empty: every channel
  std::uint64_t seed = 2024;
  double sample_rate = 1000.0;
  Lane lane = Lane::Up;
  SurrogateParams surrogate;
};

inline void validate(const ExperimentPlan& p, const GirderSpec& girder) {
  auto fail = [](const std::string& field, const std::string& what) {
    throw std::invalid_argument("plan." + field + ": " + what);
  };
  if (p.speeds.empty()) fail("speeds", "at least one speed is required");
  for (std::size_t i = 0; i < p.speeds.size(); ++i) {
    if (!(p.speeds[i] > 0.0)) fail("speeds[" + std::to_string(i) + "]", "speed must be positive");
    for (std::size_t j = 0; j < i; ++j)
      if (p.speeds[j] == p.speeds[i]) fail("speeds", "duplicate speed");
  }
  if (p.weight_classes.empty()) fail("weight_classes", "at least one weight class is required");
  for (std::size_t i = 0; i < p.weight_classes.size(); ++i)
    if (!(p.weight_classes[i].scale > 0.0))
      fail("weight_classes[" + std::to_string(i) + "].scale", "must be positive");
  if (p.irregularities.empty()) fail("irregularities", "at least one preset is required");
  for (std::size_t i = 0; i < p.irregularities.size(); ++i)
    if (!(p.irregularities[i].level >= 0.0))
      fail("irregularities[" + std::to_string(i) + "].level", "must be >= 0");
  if (!(p.noise_level >= 0.0)) fail("noise_level", "must be >= 0");
  if (p.baseline_passages < 1) fail("baseline_passages", "must be >= 1");
  if (p.include_damage && p.damage_passages < 1) fail("damage_passages", "must be >= 1");
  for (std::size_t i = 0; i < p.deltas.size(); ++i)
    if (!(p.deltas[i] > 0.0 && p.surrogate.kappa * p.deltas[i] < 1.0))
      fail("deltas[" + std::to_string(i) + "]", "must lie in (0, 1/kappa)");
  if (!(p.sample_rate > 0.0)) fail("sample_rate", "must be positive");
  for (const auto& c : p.channels)
    if (!girder.find(c)) fail("channels", "unknown channel " + c);
  const auto& s = p.surrogate;
  if (!(s.roughness_lo_hz > 0.0 && s.roughness_hi_hz > s.roughness_lo_hz))
    fail("surrogate.roughness band", "need 0 < lo < hi");
  if (!(s.fluctuation_lo_hz > 0.0 && s.fluctuation_hi_hz > s.fluctuation_lo_hz))
    fail("surrogate.fluctuation band", "need 0 < lo < hi");
  if (s.roughness_terms < 1 || s.fluctuation_terms < 1) fail("surrogate", "term counts must be >= 1");
}

/// One passage to generate: the condition it belongs to and its seed.
struct PassageSpec {
  std::string passage_id;
  std::string condition_id;
  double speed_kmh = 0.0;
  std::size_t weight_index = 0;
  std::size_t irregularity_index = 0;
  std::optional<DamageSpec> damage;
  std::uint64_t seed = 0;
};

struct ConditionSpec {
  std::string condition_id;
  Condition condition = Condition::Baseline;
  double speed_kmh = 0.0;
  std::optional<DamageSpec> damage;
  std::vector<PassageSpec> passages;
};

namespace detail {

inline std::string section_token(Section s) {
  switch (s) {
    case Section::Quarter: return "L4";
    case Section::Mid: return "L2";
    case Section::ThreeQuarter: return "3L4";
  }
  return "?";
}

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

/// Baseline conditions (speed x weight x irregularity) followed by damage
/// conditions (speed x section x component x delta). Replicates of a damage
/// condition cycle through the weight/irregularity combinations.
inline std::vector<ConditionSpec> enumerate_conditions(const ExperimentPlan& p) {
  std::vector<ConditionSpec> out;
  for (double v : p.speeds)
    for (std::size_t w = 0; w < p.weight_classes.size(); ++w)
      for (std::size_t i = 0; i < p.irregularities.size(); ++i) {
        ConditionSpec c;
        c.condition_id = "B" + speed_bin_label(v) + "-" + p.weight_classes[w].label + "-" +
                         p.irregularities[i].label;
        c.speed_kmh = v;
        for (int r = 0; r < p.baseline_passages; ++r) {
          PassageSpec s;
          s.passage_id = c.condition_id + "-R" + std::to_string(r);
          s.condition_id = c.condition_id;
          s.speed_kmh = v;
          s.weight_index = w;
          s.irregularity_index = i;
          s.seed = mix_seed(p.seed, s.passage_id);
          c.passages.push_back(std::move(s));
        }
        out.push_back(std::move(c));
      }
  if (!p.include_damage) return out;
  const std::size_t combos = p.weight_classes.size() * p.irregularities.size();
  std::size_t index = 0;
  for (double v : p.speeds)
    for (auto sec : p.damage_sections)
      for (auto comp : p.damage_components)
        for (double delta : p.deltas) {
          ConditionSpec c;
          c.condition = Condition::Damaged;
          c.condition_id = "D" + speed_bin_label(v) + "-" + detail::section_token(sec) + "-" +
                           to_string(comp) + "-" + detail::fixed2(delta);
          c.speed_kmh = v;
          c.damage = DamageSpec{sec, comp, delta};
          for (int r = 0; r < p.damage_passages; ++r) {
            const std::size_t combo = (static_cast<std::size_t>(r) + index) % combos;
            PassageSpec s;
            s.passage_id = c.condition_id + "-R" + std::to_string(r);
            s.condition_id = c.condition_id;
            s.speed_kmh = v;
            s.weight_index = combo % p.weight_classes.size();
            s.irregularity_index = combo / p.weight_classes.size();
            s.damage = c.damage;
            s.seed = mix_seed(p.seed, s.passage_id);
            c.passages.push_back(std::move(s));
          }
          out.push_back(std::move(c));
          ++index;
        }
  return out;
}

/// Noisy records of one passage for the plan's channels.
inline std::vector<PassageRecord> generate_passage(const PassageSpec& s, const ExperimentPlan& p,
                                                   const GirderSpec& girder) {
  const auto train = default_train(s.speed_kmh, p.weight_classes.at(s.weight_index).scale, p.lane);
  auto records = synthesize_passage(train, girder, s.damage, p.irregularities.at(s.irregularity_index),
                                    p.sample_rate, p.surrogate,
                                    {s.passage_id, p.weight_classes[s.weight_index].label, s.seed});
  std::vector<PassageRecord> out;
  for (auto& r : records) {
    if (!p.channels.empty() &&
        std::find(p.channels.begin(), p.channels.end(), r.channel_id) == p.channels.end())
      continue;
    r.samples = add_noise(r.samples, p.noise_level, mix_seed(s.seed, r.channel_id));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PassageRecord> generate_condition(const ConditionSpec& c, const ExperimentPlan& p,
                                                     const GirderSpec& girder) {
  std::vector<PassageRecord> out;
  for (const auto& s : c.passages) {
    auto r = generate_passage(s, p, girder);
    out.insert(out.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plan serialization

inline nlohmann::json to_json(const SurrogateParams& s) {
  return {{"strain_per_moment", s.strain_per_moment}, {"top_fiber_ratio", s.top_fiber_ratio},
          {"kappa", s.kappa}, {"window_fraction", s.window_fraction},
          {"fluctuation_rms", s.fluctuation_rms}, {"fluctuation_lo_hz", s.fluctuation_lo_hz},
          {"fluctuation_hi_hz", s.fluctuation_hi_hz}, {"fluctuation_terms", s.fluctuation_terms},
          {"roughness_ratio", s.roughness_ratio}, {"roughness_lo_hz", s.roughness_lo_hz},
          {"roughness_hi_hz", s.roughness_hi_hz}, {"reference_speed_kmh", s.reference_speed_kmh},
          {"roughness_terms", s.roughness_terms},
          {"dynamic_ratio", s.dynamic_ratio}, {"dynamic_exponent", s.dynamic_exponent}};
}

inline nlohmann::json to_json(const ExperimentPlan& p) {
  nlohmann::json j;
  j["speeds"] = p.speeds;
  auto w = nlohmann::json::array();
  for (const auto& c : p.weight_classes) w.push_back({{"label", c.label}, {"scale", c.scale}});
  j["weight_classes"] = std::move(w);
  auto irr = nlohmann::json::array();
  for (const auto& c : p.irregularities)
    irr.push_back({{"label", c.label}, {"level", c.level}, {"exponent", c.exponent}, {"seed", c.seed}});
  j["irregularities"] = std::move(irr);
  j["noise_level"] = p.noise_level;
  j["baseline_passages"] = p.baseline_passages;
  j["damage_passages"] = p.damage_passages;
  j["include_damage"] = p.include_damage;
  auto secs = nlohmann::json::array();
  for (auto s : p.damage_sections) secs.push_back(to_string(s));
  j["damage_sections"] = std::move(secs);
  auto comps = nlohmann::json::array();
  for (auto c : p.damage_components) comps.push_back(to_string(c));
  j["damage_components"] = std::move(comps);
  j["deltas"] = p.deltas;
  j["channels"] = p.channels;
  j["seed"] = p.seed;
  j["sample_rate"] = p.sample_rate;
  j["lane"] = to_string(p.lane);
  j["surrogate"] = to_json(p.surrogate);
  return j;
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(path + key + ": wrong type");
  }
}

}  // namespace detail

/// Plan from JSON; absent fields keep their defaults.
inline ExperimentPlan plan_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("plan: expected an object");
  static const std::vector<std::string> kKeys = {
      "speeds", "weight_classes", "irregularities", "noise_level", "baseline_passages",
      "damage_passages", "include_damage", "damage_sections", "damage_components", "deltas",
      "channels", "seed", "sample_rate", "lane", "surrogate"};
  for (const auto& [k, v] : j.items())
    if (std::find(kKeys.begin(), kKeys.end(), k) == kKeys.end())
      throw std::invalid_argument("plan." + k + ": unknown field");
  ExperimentPlan p;
  using detail::read_field;
  read_field(j, "speeds", p.speeds, "plan.");
  read_field(j, "noise_level", p.noise_level, "plan.");
  read_field(j, "baseline_passages", p.baseline_passages, "plan.");
  read_field(j, "damage_passages", p.damage_passages, "plan.");
  read_field(j, "include_damage", p.include_damage, "plan.");
  read_field(j, "deltas", p.deltas, "plan.");
  read_field(j, "channels", p.channels, "plan.");
  read_field(j, "seed", p.seed, "plan.");
  read_field(j, "sample_rate", p.sample_rate, "plan.");
  if (j.contains("weight_classes")) {
    p.weight_classes.clear();
    for (const auto& w : j["weight_classes"]) {
      WeightClass c;
      read_field(w, "label", c.label, "plan.weight_classes.");
      read_field(w, "scale", c.scale, "plan.weight_classes.");
      if (c.label.empty()) throw std::invalid_argument("plan.weight_classes.label: required");
      p.weight_classes.push_back(c);
    }
  }
  if (j.contains("irregularities")) {
    p.irregularities.clear();
    for (const auto& w : j["irregularities"]) {
      IrregularityPreset c;
      read_field(w, "label", c.label, "plan.irregularities.");
      read_field(w, "level", c.level, "plan.irregularities.");
      read_field(w, "exponent", c.exponent, "plan.irregularities.");
      read_field(w, "seed", c.seed, "plan.irregularities.");
      if (c.label.empty()) throw std::invalid_argument("plan.irregularities.label: required");
      p.irregularities.push_back(c);
    }
  }
  if (j.contains("damage_sections")) {
    p.damage_sections.clear();
    for (const auto& s : j["damage_sections"]) {
      const auto sec = parse_section(s.get<std::string>());
      if (!sec) throw std::invalid_argument("plan.damage_sections: unknown section " + s.dump());
      p.damage_sections.push_back(*sec);
    }
  }
  if (j.contains("damage_components")) {
    p.damage_components.clear();
    for (const auto& s : j["damage_components"]) {
      const auto c = parse_component(s.get<std::string>());
      if (!c) throw std::invalid_argument("plan.damage_components: unknown component " + s.dump());
      p.damage_components.push_back(*c);
    }
  }
  if (j.contains("lane")) {
    const auto lane = j["lane"].get<std::string>();
    if (lane != "up" && lane != "down") throw std::invalid_argument("plan.lane: expected up or down");
    p.lane = lane == "up" ? Lane::Up : Lane::Down;
  }
  if (j.contains("surrogate")) {
    const auto& s = j["surrogate"];
    auto& o = p.surrogate;
    const std::string pre = "plan.surrogate.";
    read_field(s, "strain_per_moment", o.strain_per_moment, pre);
    read_field(s, "top_fiber_ratio", o.top_fiber_ratio, pre);
    read_field(s, "kappa", o.kappa, pre);
    read_field(s, "window_fraction", o.window_fraction, pre);
    read_field(s, "fluctuation_rms", o.fluctuation_rms, pre);
    read_field(s, "fluctuation_lo_hz", o.fluctuation_lo_hz, pre);
    read_field(s, "fluctuation_hi_hz", o.fluctuation_hi_hz, pre);
    read_field(s, "fluctuation_terms", o.fluctuation_terms, pre);
    read_field(s, "roughness_ratio", o.roughness_ratio, pre);
    read_field(s, "roughness_lo_hz", o.roughness_lo_hz, pre);
    read_field(s, "roughness_hi_hz", o.roughness_hi_hz, pre);
    read_field(s, "reference_speed_kmh", o.reference_speed_kmh, pre);
    read_field(s, "roughness_terms", o.roughness_terms, pre);
    read_field(s, "dynamic_ratio", o.dynamic_ratio, pre);
    read_field(s, "dynamic_exponent", o.dynamic_exponent, pre);
  }
  return p;
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
  return plan_from_json(load_document(path));
}

// ---------------------------------------------------------------------------
// Dataset generation

struct ExperimentSummary {
  std::size_t baseline_conditions = 0;
  std::size_t damage_conditions = 0;
  std::size_t baseline_passages = 0;
  std::size_t damaged_passages = 0;
  nlohmann::json manifest;
};

inline nlohmann::json channel_manifest(const GirderSpec& g) {
  auto arr = nlohmann::json::array();
  for (const auto& c : g.channels) {
    nlohmann::json gains = nlohmann::json::object();
    for (const auto& [k, v] : c.gains) gains[to_string(k)] = v;
    arr.push_back({{"channel_id", c.meta.channel_id},
                   {"section", to_string(c.meta.section)},
                   {"position_label", c.meta.position_label},
                   {"longitudinal_coord", c.meta.longitudinal_coord},
                   {"side", c.side == Side::Left ? "left" : "right"},
                   {"fiber", c.fiber == Fiber::Bottom ? "bottom" : "top"},
                   {"gains", std::move(gains)}});
  }
  return arr;
}

/// Build the manifest; with `out_dir` set, also write one CSV per condition
/// under baseline/ and damaged/ plus manifest.json.
inline ExperimentSummary generate_experiment(const ExperimentPlan& plan, const GirderSpec& girder,
                                             const std::optional<std::filesystem::path>& out_dir) {
  validate(girder);
  validate(plan, girder);
  const auto conditions = enumerate_conditions(plan);
  ExperimentSummary sum;
  auto conds = nlohmann::json::array();
  for (const auto& c : conditions) {
    const bool base = c.condition == Condition::Baseline;
    (base ? sum.baseline_conditions : sum.damage_conditions) += 1;
    (base ? sum.baseline_passages : sum.damaged_passages) += c.passages.size();
    const std::string file = std::string(base ? "baseline/" : "damaged/") + c.condition_id + ".csv";
    nlohmann::json cj = {{"condition_id", c.condition_id}, {"condition", to_string(c.condition)},
                         {"speed_kmh", c.speed_kmh}, {"file", file}};
    if (c.damage)
      cj["damage"] = {{"section", to_string(c.damage->section)},
                      {"component", to_string(c.damage->component)},
                      {"delta", c.damage->delta}};
    auto ps = nlohmann::json::array();
    for (const auto& s : c.passages)
      ps.push_back({{"passage_id", s.passage_id},
                    {"weight_class", plan.weight_classes[s.weight_index].label},
                    {"irregularity", plan.irregularities[s.irregularity_index].label},
                    {"seed", s.seed}});
    cj["passages"] = std::move(ps);
    conds.push_back(std::move(cj));
    if (out_dir) {
      const auto records = generate_condition(c, plan, girder);
      write_file_atomic(*out_dir / file, [&](std::ostream& os) { write_passages_csv(os, records); });
    }
  }
  auto& m = sum.manifest;
  m["plan"] = to_json(plan);
  m["girder"] = {{"span", girder.span}, {"tau_near", girder.tau_near}, {"tau_far", girder.tau_far},
                 {"channels", channel_manifest(girder)}};
  m["counts"] = {{"baseline_conditions", sum.baseline_conditions},
                 {"damage_conditions", sum.damage_conditions},
                 {"baseline_passages", sum.baseline_passages},
                 {"damaged_passages", sum.damaged_passages}};
  m["assumptions"] = {
      "surrogate parameters, weight classes, irregularity presets and the delta grid are modelling "
      "assumptions, not measured values",
      "damage amplifies the damaged component's strain while axles are within the damage window "
      "of its section"};
  m["conditions"] = std::move(conds);
  if (out_dir)
    write_text_atomic(*out_dir / "manifest.json", m.dump(2) + "\n");
  return sum;
}

}  // namespace girder
