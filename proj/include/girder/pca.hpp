#pragma once

// Principal-component removal of operational variation. The basis is fitted
// on baseline passages (rows) and frozen; the same basis and column means
// are then applied to every test matrix.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "girder/signals.hpp"

namespace girder {

inline constexpr double kDefaultVarianceThreshold = 0.80;

struct PcaBasis {
  Eigen::MatrixXd transform;    // n x r, orthonormal columns
  Eigen::VectorXd eigenvalues;  // r, descending, >= 0
  Eigen::Index rank = 0;
  Eigen::Index retained_p = 0;
  Eigen::VectorXd column_means;  // n
  Eigen::Index source_k = 0;

  Eigen::Index dimension() const { return column_means.size(); }
  Eigen::MatrixXd retained() const { return transform.leftCols(retained_p); }
};

/// Smallest p whose cumulative share of the spectrum reaches `threshold`
/// (inclusive). Zero for an all-zero spectrum.
inline Eigen::Index select_p(std::span<const double> eigenvalues,
                             double threshold = kDefaultVarianceThreshold) {
  double total = 0.0;
  for (double v : eigenvalues) total += std::max(v, 0.0);
  if (total <= 0.0) return 0;
  // Relative slack so that exact ties such as 8/10 == 0.80 count as reached.
  const double target = threshold * total * (1.0 - 1e-12);
  double acc = 0.0;
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    acc += std::max(eigenvalues[i], 0.0);
    if (acc >= target) return static_cast<Eigen::Index>(i + 1);
  }
  return static_cast<Eigen::Index>(eigenvalues.size());
}

inline Eigen::Index select_p(const Eigen::VectorXd& eigenvalues,
                             double threshold = kDefaultVarianceThreshold) {
  return select_p(std::span<const double>(eigenvalues.data(),
                                          static_cast<std::size_t>(eigenvalues.size())),
                  threshold);
}

/// Economy SVD of the column-centred passage matrix. Eigenvalues of the
/// sample covariance are s^2 / (k - 1).
inline PcaBasis fit_pca(const Eigen::MatrixXd& x,
                        double threshold = kDefaultVarianceThreshold) {
  const Eigen::Index k = x.rows();
  if (k < 2) throw std::invalid_argument("PCA needs at least 2 passages");
  if (!x.allFinite())
    throw std::invalid_argument("PCA input has non-finite entries");

  PcaBasis b;
  b.source_k = k;
  b.column_means = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - b.column_means.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s.size() > 0 ? s(0) : 0.0;
  const double tol = smax * static_cast<double>(std::max(x.rows(), x.cols())) *
                     std::numeric_limits<double>::epsilon();
  Eigen::Index rank = 0;
  while (rank < s.size() && rank < k - 1 && s(rank) > tol && s(rank) > 0.0)
    ++rank;

  b.rank = rank;
  b.transform = svd.matrixV().leftCols(rank);
  b.eigenvalues = s.head(rank).array().square() / static_cast<double>(k - 1);
  b.retained_p = select_p(b.eigenvalues, threshold);
  return b;
}

inline PcaBasis fit_pca(const PassageMatrix& x,
                        double threshold = kDefaultVarianceThreshold) {
  return fit_pca(x.data, threshold);
}

/// Centre with the baseline means, then subtract the projection onto the
/// first retained_p baseline components.
inline Eigen::MatrixXd remove_components(const Eigen::MatrixXd& x,
                                         const PcaBasis& basis) {
  if (x.cols() != basis.dimension())
    throw std::invalid_argument(
        "dimension mismatch: matrix has " + std::to_string(x.cols()) +
        " columns, basis expects " + std::to_string(basis.dimension()));
  Eigen::MatrixXd centered = x.rowwise() - basis.column_means.transpose();
  if (basis.retained_p == 0) return centered;
  const auto t = basis.transform.leftCols(basis.retained_p);
  const Eigen::MatrixXd scores = centered * t;
  centered.noalias() -= scores * t.transpose();
  return centered;
}

inline PassageMatrix remove_components(const PassageMatrix& x,
                                       const PcaBasis& basis) {
  PassageMatrix out{x.channel_id, x.speed_bin, x.passage_ids,
                    remove_components(x.data, basis)};
  return out;
}

/// The part removed by remove_components (scores mapped back to samples).
inline Eigen::MatrixXd principal_part(const Eigen::MatrixXd& x,
                                      const PcaBasis& basis) {
  const Eigen::MatrixXd centered = x.rowwise() - basis.column_means.transpose();
  const auto t = basis.transform.leftCols(basis.retained_p);
  return (centered * t) * t.transpose();
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                           static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// Means, spectrum, p and the retained components; the full basis only when
/// `full_basis` is set.
inline nlohmann::json to_json(const PcaBasis& b, bool full_basis = false) {
  nlohmann::json j;
  j["column_means"] = detail::vector_json(b.column_means);
  j["eigenvalues"] = detail::vector_json(b.eigenvalues);
  j["rank"] = b.rank;
  j["retained_p"] = b.retained_p;
  j["source_k"] = b.source_k;
  const Eigen::Index cols = full_basis ? b.rank : b.retained_p;
  auto comps = nlohmann::json::array();
  for (Eigen::Index c = 0; c < cols; ++c)
    comps.push_back(detail::vector_json(b.transform.col(c)));
  j["components"] = std::move(comps);
  return j;
}

inline PcaBasis pca_from_json(const nlohmann::json& j) {
  PcaBasis b;
  b.column_means = detail::vector_from_json(j.at("column_means"));
  b.eigenvalues = detail::vector_from_json(j.at("eigenvalues"));
  b.rank = j.at("rank").get<Eigen::Index>();
  b.retained_p = j.at("retained_p").get<Eigen::Index>();
  b.source_k = j.at("source_k").get<Eigen::Index>();
  const auto& comps = j.at("components");
  if (static_cast<Eigen::Index>(comps.size()) < b.retained_p)
    throw std::invalid_argument("PCA bundle holds fewer components than retained_p");
  b.transform.resize(b.column_means.size(), static_cast<Eigen::Index>(comps.size()));
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto v = detail::vector_from_json(comps[c]);
    if (v.size() != b.column_means.size())
      throw std::invalid_argument("PCA component length mismatch");
    b.transform.col(static_cast<Eigen::Index>(c)) = v;
  }
  return b;
}

}  // namespace girder
