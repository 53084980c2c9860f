#pragma once

// Autoregressive residual features: regression system, least-squares
// coefficients, frozen-model residuals and BIC order selection.
//
// Coefficient vectors follow the column order of the regression matrix:
// row j of H is (x_j, ..., x_{j+m-1}) and predicts x_{j+m}, so the
// coefficient paired with column i multiplies lag m - i (a_m first, a_1 last).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "girder/signals.hpp"

namespace girder {

inline constexpr double kRankTolerance = 1e-10;

struct RegressionSystem {
  Eigen::MatrixXd h;  // (n - m) x m
  Eigen::VectorXd s;  // n - m
};

inline RegressionSystem build_regression(std::span<const double> x, int m) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (m < 1) throw std::invalid_argument("AR order must be >= 1");
  if (n <= m)
    throw std::invalid_argument("signal of length " + std::to_string(n) +
                                " is too short for order " + std::to_string(m));
  RegressionSystem sys;
  const Eigen::Index rows = n - m;
  sys.h.resize(rows, m);
  sys.s.resize(rows);
  for (Eigen::Index j = 0; j < rows; ++j) {
    for (int i = 0; i < m; ++i) sys.h(j, i) = x[static_cast<std::size_t>(j + i)];
    sys.s(j) = x[static_cast<std::size_t>(j + m)];
  }
  return sys;
}

struct ArModel {
  int order = 0;
  Eigen::VectorXd coefficients;  // a_m ... a_1
  std::string channel_id;
  int trained_on = 0;  // passages
  bool rank_deficient = false;
};

struct ArFitResult {
  ArModel model;
  Eigen::VectorXd residuals;
  double mse = 0.0;
  Eigen::Index rank = 0;
};

struct ArPrediction {
  Eigen::VectorXd target;          // S
  Eigen::VectorXd reconstruction;  // H w
  Eigen::VectorXd residuals;       // S - H w
};

namespace detail {

/// Augmented triangular factor of [H | S] accumulated block by block, so a
/// stacked system over many passages never has to be held in memory.
class LeastSquaresAccumulator {
 public:
  explicit LeastSquaresAccumulator(int m) : m_(m), r_(Eigen::MatrixXd::Zero(0, m + 1)) {}

  void add_block(const Eigen::MatrixXd& augmented) {
    Eigen::MatrixXd stacked(r_.rows() + augmented.rows(), m_ + 1);
    stacked << r_, augmented;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(stacked);
    const Eigen::Index keep = std::min<Eigen::Index>(stacked.rows(), m_ + 1);
    r_ = qr.matrixQR().topRows(keep).triangularView<Eigen::Upper>();
  }

  /// Minimum-norm least-squares solution through a complete orthogonal
  /// decomposition of the triangular factor.
  Eigen::VectorXd solve(Eigen::Index& rank) const {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(m_, m_);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(m_);
    const Eigen::Index rows = std::min<Eigen::Index>(r_.rows(), m_);
    r.topRows(rows) = r_.topLeftCorner(rows, m_);
    z.head(rows) = r_.col(m_).head(rows);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(kRankTolerance);
    cod.compute(r);
    rank = cod.rank();
    return cod.solve(z);
  }

 private:
  int m_;
  Eigen::MatrixXd r_;
};

inline Eigen::MatrixXd augmented_system(std::span<const double> x, int m) {
  const auto sys = build_regression(x, m);
  Eigen::MatrixXd a(sys.h.rows(), m + 1);
  a << sys.h, sys.s;
  return a;
}

inline Eigen::VectorXd apply_model(std::span<const double> x,
                                   const Eigen::VectorXd& w) {
  const auto m = static_cast<std::size_t>(w.size());
  Eigen::VectorXd out(static_cast<Eigen::Index>(x.size() - m));
  for (std::size_t j = 0; j + m < x.size(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += x[j + i] * w(static_cast<Eigen::Index>(i));
    out(static_cast<Eigen::Index>(j)) = acc;
  }
  return out;
}

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace detail

/// Least-squares AR(m) fit of a single signal; requires n >= 2m + 1.
inline ArFitResult fit_ar(std::span<const double> x, int m) {
  if (m < 1) throw std::invalid_argument("AR order must be >= 1");
  if (x.size() < static_cast<std::size_t>(2 * m + 1))
    throw std::invalid_argument("AR(" + std::to_string(m) + ") needs at least " +
                                std::to_string(2 * m + 1) + " samples, got " +
                                std::to_string(x.size()));
  detail::LeastSquaresAccumulator acc(m);
  acc.add_block(detail::augmented_system(x, m));
  ArFitResult res;
  res.model.order = m;
  res.model.coefficients = acc.solve(res.rank);
  res.model.rank_deficient = res.rank < m;
  res.model.trained_on = 1;
  const auto sys = build_regression(x, m);
  res.residuals = sys.s - sys.h * res.model.coefficients;
  res.mse = res.residuals.squaredNorm() / static_cast<double>(res.residuals.size());
  return res;
}

inline ArFitResult fit_ar(const Eigen::VectorXd& x, int m) {
  return fit_ar(detail::as_span(x), m);
}

/// One model over several passages: each passage contributes its own rows,
/// so no regression row straddles two passages.
inline ArFitResult fit_ar_stacked(const std::vector<Eigen::VectorXd>& signals,
                                  int m, std::string channel_id = {}) {
  if (signals.empty()) throw std::invalid_argument("no signals to fit");
  detail::LeastSquaresAccumulator acc(m);
  for (const auto& s : signals) {
    if (s.size() < 2 * m + 1)
      throw std::invalid_argument("signal too short for AR(" + std::to_string(m) + ")");
    acc.add_block(detail::augmented_system(detail::as_span(s), m));
  }
  ArFitResult res;
  res.model.order = m;
  res.model.channel_id = std::move(channel_id);
  res.model.trained_on = static_cast<int>(signals.size());
  res.model.coefficients = acc.solve(res.rank);
  res.model.rank_deficient = res.rank < m;
  Eigen::Index total = 0;
  for (const auto& s : signals) total += s.size() - m;
  res.residuals.resize(total);
  Eigen::Index off = 0;
  for (const auto& s : signals) {
    const auto span = detail::as_span(s);
    const Eigen::VectorXd recon = detail::apply_model(span, res.model.coefficients);
    res.residuals.segment(off, recon.size()) = s.tail(recon.size()) - recon;
    off += recon.size();
  }
  res.mse = res.residuals.squaredNorm() / static_cast<double>(total);
  return res;
}

/// Apply a frozen model to a new signal.
inline ArPrediction predict_residuals(std::span<const double> x,
                                      const ArModel& model) {
  if (x.size() <= static_cast<std::size_t>(model.order))
    throw std::invalid_argument("signal of length " + std::to_string(x.size()) +
                                " is too short for AR(" +
                                std::to_string(model.order) + ")");
  ArPrediction p;
  p.reconstruction = detail::apply_model(x, model.coefficients);
  p.target = Eigen::Map<const Eigen::VectorXd>(
      x.data() + model.order, static_cast<Eigen::Index>(x.size()) - model.order);
  p.residuals = p.target - p.reconstruction;
  return p;
}

inline ArPrediction predict_residuals(const Eigen::VectorXd& x,
                                      const ArModel& model) {
  return predict_residuals(detail::as_span(x), model);
}

// ---------------------------------------------------------------------------
// BIC

struct BicValue {
  double value = 0.0;
  bool degenerate = false;  // zero residual energy; value is -inf
};

/// n ln(mse) + m ln(n), with n the residual count and mse the mean squared
/// residual.
inline BicValue bic_from_mse(double mse, int m, Eigen::Index n_effective) {
  if (n_effective <= 0) throw std::invalid_argument("BIC needs residuals");
  if (mse < 0.0) throw std::invalid_argument("negative mean squared residual");
  if (mse == 0.0) return {-std::numeric_limits<double>::infinity(), true};
  const auto n = static_cast<double>(n_effective);
  return {n * std::log(mse) + m * std::log(n), false};
}

inline BicValue bic(const Eigen::VectorXd& residuals, int m) {
  if (residuals.size() == 0) throw std::invalid_argument("BIC needs residuals");
  return bic_from_mse(residuals.squaredNorm() / static_cast<double>(residuals.size()),
                      m, residuals.size());
}

struct BicCurve {
  std::vector<int> orders;
  std::vector<double> values;
  int optimum = 0;
  bool degenerate = false;
};

/// Candidate orders lo..hi inclusive.
inline std::vector<int> order_range(int lo, int hi) {
  if (lo < 1 || hi < lo) throw std::invalid_argument("bad order range");
  std::vector<int> v(static_cast<std::size_t>(hi - lo + 1));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

namespace detail {

inline int argmin_order(const std::vector<int>& orders,
                        const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < values[best] ||
        (values[i] == values[best] && orders[i] < orders[best]))
      best = i;
  return orders[best];
}

/// Rotate one extra row into an upper-triangular factor.
inline void givens_add_row(Eigen::MatrixXd& r, Eigen::VectorXd row) {
  const Eigen::Index k = r.cols();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (row(i) == 0.0) continue;
    const double a = r(i, i);
    const double b = row(i);
    const double h = std::hypot(a, b);
    const double c = a / h;
    const double s = b / h;
    for (Eigen::Index j = i; j < k; ++j) {
      const double rij = r(i, j);
      r(i, j) = c * rij + s * row(j);
      row(j) = -s * rij + c * row(j);
    }
  }
}

}  // namespace detail

/// Residual sum of squares of the least-squares AR(m) fit for every m in
/// 1..max_order, each on its own n - m rows.
///
/// Columns are laid out by lag (1..M) followed by the target, so order m
/// uses the leading m columns and its residual energy is the tail of the
/// target column of the triangular factor. Starting from the rows common to
/// all orders, the factor is updated one row at a time while walking the
/// order down; lags that fall before the signal start are zero and never
/// enter the leading columns of the order being read.
inline std::vector<double> ar_rss_by_order(std::span<const double> x, int max_order) {
  const int big_m = max_order;
  const auto n = static_cast<Eigen::Index>(x.size());
  if (big_m < 1) throw std::invalid_argument("AR order must be >= 1");
  if (n < 2 * big_m + 1)
    throw std::invalid_argument("signal of length " + std::to_string(n) +
                                " is too short for order " + std::to_string(big_m));
  const Eigen::Index rows = n - big_m;
  Eigen::MatrixXd a(rows, big_m + 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index t = r + big_m;
    for (int lag = 1; lag <= big_m; ++lag) a(r, lag - 1) = x[static_cast<std::size_t>(t - lag)];
    a(r, big_m) = x[static_cast<std::size_t>(t)];
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd r = qr.matrixQR().topRows(big_m + 1).triangularView<Eigen::Upper>();

  std::vector<double> rss(static_cast<std::size_t>(big_m + 1), 0.0);
  for (int m = big_m; m >= 1; --m) {
    rss[static_cast<std::size_t>(m)] = r.col(big_m).segment(m, big_m + 1 - m).squaredNorm();
    if (m == 1) break;
    const Eigen::Index t = m - 1;  // first target row of order m - 1
    Eigen::VectorXd row = Eigen::VectorXd::Zero(big_m + 1);
    for (Eigen::Index lag = 1; lag <= t; ++lag) row(lag - 1) = x[static_cast<std::size_t>(t - lag)];
    row(big_m) = x[static_cast<std::size_t>(t)];
    detail::givens_add_row(r, std::move(row));
  }
  return rss;
}

/// BIC curve of one signal over the candidate orders.
inline BicCurve bic_curve(std::span<const double> x, const std::vector<int>& orders) {
  if (orders.empty()) throw std::invalid_argument("no candidate orders");
  const int big_m = *std::max_element(orders.begin(), orders.end());
  if (*std::min_element(orders.begin(), orders.end()) < 1)
    throw std::invalid_argument("AR order must be >= 1");
  const auto rss = ar_rss_by_order(x, big_m);
  BicCurve c;
  c.orders = orders;
  const auto n = static_cast<Eigen::Index>(x.size());
  for (int m : orders) {
    const Eigen::Index n_eff = n - m;
    const auto b = bic_from_mse(rss[static_cast<std::size_t>(m)] / static_cast<double>(n_eff),
                                m, n_eff);
    c.values.push_back(b.value);
    c.degenerate = c.degenerate || b.degenerate;
  }
  c.optimum = detail::argmin_order(c.orders, c.values);
  return c;
}

inline BicCurve bic_curve(const Eigen::VectorXd& x, const std::vector<int>& orders) {
  return bic_curve(detail::as_span(x), orders);
}

/// Average the per-signal BIC curves and pick the order at the minimum
/// (ties go to the smaller order). Per-order values are summed in sorted
/// order, so the result does not depend on the order of the inputs.
inline BicCurve select_order(const std::vector<Eigen::VectorXd>& signals,
                             const std::vector<int>& orders) {
  if (signals.empty()) throw std::invalid_argument("no signals for order selection");
  std::vector<std::vector<double>> per_order(orders.size());
  bool degenerate = false;
  for (const auto& s : signals) {
    const auto c = bic_curve(s, orders);
    degenerate = degenerate || c.degenerate;
    for (std::size_t i = 0; i < orders.size(); ++i) per_order[i].push_back(c.values[i]);
  }
  BicCurve avg;
  avg.orders = orders;
  avg.degenerate = degenerate;
  for (auto& v : per_order) {
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    avg.values.push_back(sum / static_cast<double>(v.size()));
  }
  avg.optimum = detail::argmin_order(avg.orders, avg.values);
  return avg;
}

/// Rows of every PC-removed matrix, across channels, as signals.
inline BicCurve select_order(const std::vector<PassageMatrix>& matrices,
                             const std::vector<int>& orders) {
  std::vector<Eigen::VectorXd> signals;
  for (const auto& m : matrices)
    for (Eigen::Index r = 0; r < m.rows(); ++r) signals.emplace_back(m.data.row(r).transpose());
  return select_order(signals, orders);
}

inline void write_bic_csv(std::ostream& os, const BicCurve& c) {
  os << "order,bic\n";
  for (std::size_t i = 0; i < c.orders.size(); ++i)
    os << c.orders[i] << ',' << detail::format_double(c.values[i]) << '\n';
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const ArModel& m) {
  nlohmann::json j;
  j["order"] = m.order;
  j["coefficients"] =
      std::vector<double>(m.coefficients.data(), m.coefficients.data() + m.coefficients.size());
  j["channel_id"] = m.channel_id;
  j["trained_on"] = m.trained_on;
  j["rank_deficient"] = m.rank_deficient;
  return j;
}

inline ArModel ar_from_json(const nlohmann::json& j) {
  ArModel m;
  m.order = j.at("order").get<int>();
  const auto c = j.at("coefficients").get<std::vector<double>>();
  if (static_cast<int>(c.size()) != m.order || m.order < 1)
    throw std::invalid_argument("AR model order and coefficient count disagree");
  m.coefficients = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  m.channel_id = j.value("channel_id", "");
  m.trained_on = j.value("trained_on", 0);
  m.rank_deficient = j.value("rank_deficient", false);
  return m;
}

}  // namespace girder
