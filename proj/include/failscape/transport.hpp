#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace failscape {

// Weighted Diracs: row i of `points` carries mass weights[i].
struct DiscreteMeasure {
  Eigen::MatrixXd points;   // atoms x dimension
  Eigen::VectorXd weights;  // atoms

  std::size_t atoms() const { return static_cast<std::size_t>(points.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(points.cols()); }

  // Non-empty, weights >= 0 summing to 1 within 1e-9, distinct points.
  // Throws kEmptySupport or kInvalidArgument.
  void validate() const;
};

DiscreteMeasure dirac(const Eigen::VectorXd& point);

// Drops atoms whose weight is at most `threshold`, renormalizing the rest.
DiscreteMeasure compact(const DiscreteMeasure& measure, double threshold = 1e-12);

nlohmann::json to_json(const DiscreteMeasure& measure);
DiscreteMeasure discrete_measure_from_json(const nlohmann::json& j);

// C(i, j) = squared Euclidean distance between x.row(i) and y.row(j).
Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct TransportPlan {
  double cost = 0.0;
  Eigen::MatrixXd plan;  // supply x demand
  std::size_t pivots = 0;
};

// Exact balanced transport (transportation simplex with u-v potentials).
// `supply` and `demand` must be non-negative with equal totals.
TransportPlan solve_transport(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                              const Eigen::MatrixXd& cost);

// W2 with squared Euclidean ground cost, solved exactly.
// Throws kDimensionMismatch when ambient dimensions differ.
double wasserstein_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

struct BarycenterResult {
  DiscreteMeasure measure;  // on the given support, zero weights kept
  double objective = 0.0;   // sum_i lambda_i W2^2(mu_i, result)
  std::vector<double> objective_trace;  // nonincreasing, one entry per solver pivot
};

// Fixed-support barycenter: minimizes sum_i lambda_i W2^2(mu_i, mu) over
// weight vectors on `support`, as one exact linear program.
// Throws kEmptySupport, kInvalidArgument (bad lambdas) or kDimensionMismatch.
BarycenterResult barycenter(const std::vector<DiscreteMeasure>& measures,
                            const std::vector<double>& lambdas, const Eigen::MatrixXd& support);

// Objective of a candidate weight vector on `support`, for oracles and reports.
double barycenter_objective(const std::vector<DiscreteMeasure>& measures,
                            const std::vector<double>& lambdas, const DiscreteMeasure& candidate);

}  // namespace failscape
