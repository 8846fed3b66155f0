#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace failscape {

// min c'x  s.t.  A x = b,  x >= 0.
struct LinearProgram {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kIterationLimit };

struct LpSolution {
  LpStatus status = LpStatus::kOptimal;
  Eigen::VectorXd x;
  double objective = 0.0;
  // Phase-two objective at the first feasible basis and after every pivot.
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
};

struct LpOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 100000;
};

// Dense two-phase tableau simplex. Dantzig pricing, switching to Bland's rule
// after a run of degenerate pivots so it cannot cycle. Redundant equality
// rows are tolerated. Throws Error(kShapeMismatch) on inconsistent shapes.
LpSolution solve_lp(const LinearProgram& lp, const LpOptions& options = {});

}  // namespace failscape
