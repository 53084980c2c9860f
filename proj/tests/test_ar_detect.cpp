#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "girder/ar.hpp"
#include "girder/detect.hpp"

using namespace girder;

namespace {

// x_t = sum_i a_i x_{t-i} + e_t with a = (a_1, a_2, ...).
std::vector<double> ar_signal(const std::vector<double>& a, std::size_t n, double sigma,
                              std::uint64_t seed, double x0 = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> x(n, 0.0);
  x[0] = x0;
  for (std::size_t t = 1; t < n; ++t) {
    double v = sigma > 0.0 ? g(rng) : 0.0;
    for (std::size_t i = 0; i < a.size() && i < t; ++i) v += a[i] * x[t - 1 - i];
    x[t] = v;
  }
  return x;
}

// Normal equations solved in long double: an oracle independent of the QR path.
std::vector<double> normal_equation_ar(const std::vector<double>& x, int m) {
  using LD = long double;
  std::vector<std::vector<LD>> a(m, std::vector<LD>(m + 1, 0.0L));
  for (std::size_t t = m; t < x.size(); ++t)
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) a[i][j] += static_cast<LD>(x[t - 1 - i]) * x[t - 1 - j];
      a[i][m] += static_cast<LD>(x[t - 1 - i]) * x[t];
    }
  for (int c = 0; c < m; ++c) {
    int piv = c;
    for (int r = c + 1; r < m; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (int r = 0; r < m; ++r) {
      if (r == c) continue;
      const LD f = a[r][c] / a[c][c];
      for (int k = c; k <= m; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> coef(m);
  for (int i = 0; i < m; ++i) coef[i] = static_cast<double>(a[i][m] / a[i][i]);
  return coef;  // lag 1 first
}

PassageRecord pulse_record(const std::string& id, double scale, double speed, std::uint64_t seed,
                           double bump = 0.0) {
  PassageRecord r;
  r.passage_id = id;
  r.channel_id = "P3b";
  r.speed_kmh = speed;
  const auto noise = ar_signal({0.6, -0.2}, 700, 0.3, seed, 0.0);
  r.samples.resize(700);
  for (std::size_t i = 0; i < 700; ++i) {
    const double t = static_cast<double>(i);
    double v = (i >= 50 && i < 650) ? 100.0 * scale * std::sin(M_PI * (t - 50.0) / 600.0) : 0.0;
    if (i >= 300 && i < 400) v += bump * std::sin(0.9 * t);
    r.samples[i] = v + noise[i];
  }
  return r;
}

std::vector<PassageRecord> pulse_set(int k, double speed, std::uint64_t salt) {
  std::vector<PassageRecord> out;
  std::mt19937_64 rng(salt);
  std::uniform_real_distribution<double> u(0.9, 1.1);
  for (int i = 0; i < k; ++i)
    out.push_back(pulse_record("B" + std::to_string(salt) + "-" + std::to_string(i), u(rng), speed, salt * 1000 + i));
  return out;
}

BaselineConfig small_config() {
  BaselineConfig c;
  c.order_grid = order_range(1, 8);
  c.trigger_fraction = 0.3;
  return c;
}

}  // namespace

TEST(Ar, ExactRecoveryMatchesNormalEquations) {
  const auto x = ar_signal({0.5, -0.3}, 2000, 0.0, 1);
  const auto fit = fit_ar(x, 2);
  // Stored oldest lag first.
  EXPECT_NEAR(fit.model.coefficients(1), 0.5, 1e-10);
  EXPECT_NEAR(fit.model.coefficients(0), -0.3, 1e-10);

  const auto y = ar_signal({0.4, 0.2, -0.25}, 800, 1.0, 2);
  const auto f3 = fit_ar(y, 3);
  const auto ne = normal_equation_ar(y, 3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(f3.model.coefficients(2 - i), ne[i], 1e-9);
}

TEST(Ar, ResidualsAndPredictionAgree) {
  const auto x = ar_signal({0.5, -0.3}, 400, 1.0, 3);
  const auto fit = fit_ar(x, 2);
  const auto pred = predict_residuals(x, fit.model);
  EXPECT_NEAR((pred.residuals - fit.residuals).norm(), 0.0, 1e-12);
  EXPECT_NEAR(fit.mse, fit.residuals.squaredNorm() / 398.0, 1e-12);
}

TEST(Ar, StackedFitDoesNotCrossPassages) {
  const auto a = ar_signal({0.5, -0.3}, 300, 1.0, 4);
  const auto b = ar_signal({0.5, -0.3}, 300, 1.0, 5);
  std::vector<Eigen::VectorXd> sig{Eigen::Map<const Eigen::VectorXd>(a.data(), 300),
                                   Eigen::Map<const Eigen::VectorXd>(b.data(), 300)};
  const auto fit = fit_ar_stacked(sig, 2);
  EXPECT_EQ(fit.residuals.size(), 2 * 298);
  EXPECT_EQ(fit.model.trained_on, 2);

  // Same answer as one least-squares solve over the union of per-passage rows.
  const auto sa = build_regression(a, 2), sb = build_regression(b, 2);
  Eigen::MatrixXd h(596, 2);
  Eigen::VectorXd s(596);
  h << sa.h, sb.h;
  s << sa.s, sb.s;
  const Eigen::VectorXd w = h.colPivHouseholderQr().solve(s);
  EXPECT_NEAR((w - fit.model.coefficients).norm(), 0.0, 1e-10);
}

TEST(Ar, TooShortAndRankDeficient) {
  EXPECT_THROW(fit_ar(std::vector<double>(4, 1.0), 2), std::invalid_argument);
  EXPECT_THROW(fit_ar(std::vector<double>(10, 1.0), 0), std::invalid_argument);
  const auto f = fit_ar(std::vector<double>(50, 2.0), 3);
  EXPECT_TRUE(f.model.rank_deficient);
  EXPECT_TRUE(f.model.coefficients.allFinite());
  EXPECT_NEAR(f.residuals.norm(), 0.0, 1e-9);
}

TEST(Bic, FastCurveMatchesPerOrderFits) {
  const auto x = ar_signal({0.4, 0.2, -0.25}, 600, 1.0, 7);
  const auto orders = order_range(1, 12);
  const auto curve = bic_curve(x, orders);
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const auto f = fit_ar(x, orders[i]);
    EXPECT_NEAR(curve.values[i], bic(f.residuals, orders[i]).value, 1e-8 * std::abs(curve.values[i]));
  }
}

TEST(Bic, DegenerateAndOrderIndependence) {
  EXPECT_TRUE(std::isinf(bic_from_mse(0.0, 2, 10).value));
  EXPECT_TRUE(bic_from_mse(0.0, 2, 10).degenerate);
  EXPECT_THROW(bic_from_mse(1.0, 2, 0), std::invalid_argument);

  std::vector<Eigen::VectorXd> sig;
  for (int s = 0; s < 5; ++s) {
    const auto x = ar_signal({0.4, 0.2, -0.25}, 400, 1.0, 100 + s);
    sig.emplace_back(Eigen::Map<const Eigen::VectorXd>(x.data(), 400));
  }
  const auto a = select_order(sig, order_range(1, 10));
  std::reverse(sig.begin(), sig.end());
  const auto b = select_order(sig, order_range(1, 10));
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.optimum, 3);
}

TEST(Detect, QuantileAgainstBisection) {
  auto bisect = [](double p) {
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (gaussian_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  for (double p : {1e-10, 1e-4, 0.01, 0.2, 0.5, 0.7, 0.95, 0.99, 0.999999})
    EXPECT_NEAR(gaussian_quantile(p), bisect(p), 1e-9 * std::max(1.0, std::abs(bisect(p)))) << p;
  EXPECT_NEAR(gaussian_quantile(0.99, 3.0, 2.0), 3.0 + 2.0 * gaussian_quantile(0.99), 1e-12);
  EXPECT_THROW(gaussian_quantile(0.0), std::invalid_argument);
  EXPECT_THROW(gaussian_quantile(1.0), std::invalid_argument);
}

TEST(Detect, FeatureAndBoundaryProperties) {
  EXPECT_DOUBLE_EQ(damage_feature(0.5, 0.5), 0.0);
  EXPECT_NEAR(damage_feature(0.4, 0.5), 25.0, 1e-12);
  EXPECT_GT(damage_feature(0.1, 0.5), 100.0);
  EXPECT_THROW(damage_feature(0.0, 0.5), std::invalid_argument);

  Eigen::VectorXd s(4), r(4);
  s << 1, 2, 3, 4;
  r << 1, 2, 3, 3;
  EXPECT_NEAR(fit_ratio(s, r), fit_ratio(7.5 * s, 7.5 * r), 1e-15);
  EXPECT_THROW(fit_ratio(Eigen::VectorXd::Zero(4), r), std::invalid_argument);

  const std::vector<double> df{1.0, 2.0, 3.0, 2.5, 1.5};
  const auto t1 = confidence_boundary(df, 0.01);
  const auto t5 = confidence_boundary(df, 0.05);
  EXPECT_GT(t1.cb, t5.cb);
  EXPECT_NEAR(t1.mu, 2.0, 1e-12);
  EXPECT_NEAR(t1.sigma, std::sqrt(2.5 / 4.0), 1e-12);
  EXPECT_TRUE(is_outlier(t1.cb, t1));
  const auto flat = confidence_boundary({2.0, 2.0, 2.0}, 0.01);
  EXPECT_TRUE(flat.degenerate);
  EXPECT_GT(flat.cb, 2.0);
  EXPECT_THROW(confidence_boundary({1.0}, 0.01), std::invalid_argument);
  EXPECT_THROW(confidence_boundary(df, 0.6), std::invalid_argument);
}

TEST(Detect, BaselineFitScoreAndSerialization) {
  const auto base = pulse_set(30, 360.0, 1);
  const auto model = fit_baseline(base, small_config());
  EXPECT_EQ(model.fit_ids.size(), 21u);
  EXPECT_EQ(model.validation_ids.size(), 9u);
  EXPECT_EQ(model.target_n % 10, 0u);
  ASSERT_TRUE(model.bic);
  EXPECT_EQ(model.ar.order, model.bic->optimum);

  // Passage order does not change the model.
  auto shuffled = base;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto again = fit_baseline(shuffled, small_config());
  EXPECT_EQ(again.fit_ids, model.fit_ids);
  EXPECT_DOUBLE_EQ(again.threshold.cb, model.threshold.cb);

  const auto test = pulse_set(5, 360.0, 2);
  const auto s1 = score_passages(test, model);
  const auto restored = baseline_from_json(nlohmann::json::parse(to_json(model).dump()));
  const auto s2 = score_passages(test, restored);
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_DOUBLE_EQ(s1[i].df, s2[i].df);

  std::vector<PassageRecord> hit{pulse_record("D0", 1.0, 360.0, 77, 40.0)};
  hit[0].condition = Condition::Damaged;
  hit[0].damage = DamageSpec{Section::Quarter, ComponentKind::BottomPlate, 0.1};
  EXPECT_TRUE(score_passages(hit, model)[0].outlier);
}

TEST(Detect, SpeedBinsAreNeverMixed) {
  const auto model = fit_baseline(pulse_set(20, 360.0, 3), small_config());
  const auto other = pulse_set(3, 330.0, 4);
  EXPECT_THROW(score_passages(other, model), SpeedBinMismatch);
  EXPECT_NO_THROW(score_passages(other, model, true));
  try {
    score(other, model);
    FAIL();
  } catch (const MissingModel& e) {
    EXPECT_NE(std::string(e.what()).find("330"), std::string::npos);
  }
  EXPECT_THROW(fit_baseline(pulse_set(3, 360.0, 5), small_config()), std::invalid_argument);
}

TEST(Detect, ReportMarksComponentIfAnyAffineChannelFlags) {
  const ComponentId bottom{Section::Quarter, ComponentKind::BottomPlate};
  const ComponentId web{Section::Quarter, ComponentKind::RightWeb};
  const std::vector<ChannelMeta> channels{{"P3b", Section::Quarter, "", 8.0, {bottom}},
                                          {"P12b", Section::Quarter, "", 8.0, {bottom, web}}};
  PassageScore a{"D1", "P3b", "360", Condition::Damaged, std::nullopt, 0.5, 1.0, 2.0, false};
  PassageScore b{"D1", "P12b", "360", Condition::Damaged, std::nullopt, 0.5, 3.0, 2.0, true};
  const auto rep = make_report({a, b}, channels);
  ASSERT_EQ(rep.components.size(), 2u);
  for (const auto& c : rep.components) {
    EXPECT_TRUE(c.detected);
    EXPECT_EQ(c.flagging_channels, std::vector<std::string>{"P12b"});
  }
  EXPECT_DOUBLE_EQ(rep.detection_rate(), 0.5);
  const auto back = report_from_json(nlohmann::json::parse(to_json(rep).dump()));
  EXPECT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.damaged_flagged, 1u);
}
