#include "failscape/lp.hpp"

#include <cmath>
#include <limits>

#include "failscape/errors.hpp"

namespace failscape {

namespace {

// Tableau with rows 0..m-1 for constraints and row m for the objective
// (reduced costs, with -objective in the last column).
class Tableau {
 public:
  Tableau(Eigen::MatrixXd t, std::vector<Eigen::Index> basis, double tol)
      : t_(std::move(t)), basis_(std::move(basis)), tol_(tol) {}

  Eigen::Index rows() const { return t_.rows() - 1; }
  Eigen::Index rhs_col() const { return t_.cols() - 1; }
  double objective() const { return -t_(rows(), rhs_col()); }
  Eigen::MatrixXd& data() { return t_; }
  std::vector<Eigen::Index>& basis() { return basis_; }

  void pivot(Eigen::Index r, Eigen::Index c) {
    t_.row(r) /= t_(r, c);
    for (Eigen::Index i = 0; i < t_.rows(); ++i) {
      if (i != r && t_(i, c) != 0.0) t_.row(i) -= t_(i, c) * t_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  // Runs the simplex over columns [0, allowed). Returns kOptimal,
  // kUnbounded or kIterationLimit. Records the objective after each pivot.
  LpStatus optimize(Eigen::Index allowed, std::size_t& iterations, std::size_t max_iterations,
                    std::vector<double>* trace) {
    std::size_t degenerate_run = 0;
    bool bland = false;
    while (true) {
      if (iterations >= max_iterations) return LpStatus::kIterationLimit;
      Eigen::Index enter = -1;
      double best = -tol_;
      for (Eigen::Index j = 0; j < allowed; ++j) {
        const double rc = t_(rows(), j);
        if (rc < best) {
          enter = j;
          if (bland) break;
          best = rc;
        }
      }
      if (enter < 0) return LpStatus::kOptimal;

      Eigen::Index leave = -1;
      double ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < rows(); ++i) {
        const double coef = t_(i, enter);
        if (coef <= tol_) continue;
        const double q = t_(i, rhs_col()) / coef;
        if (q < ratio - tol_ ||
            (std::abs(q - ratio) <= tol_ && leave >= 0 &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          ratio = std::min(q, ratio);
          leave = i;
        }
      }
      if (leave < 0) return LpStatus::kUnbounded;
      degenerate_run = ratio <= tol_ ? degenerate_run + 1 : 0;
      if (degenerate_run > 50) bland = true;
      pivot(leave, enter);
      ++iterations;
      // Clean tiny negative right-hand sides introduced by round-off.
      for (Eigen::Index i = 0; i < rows(); ++i) {
        if (t_(i, rhs_col()) < 0.0 && t_(i, rhs_col()) > -tol_) t_(i, rhs_col()) = 0.0;
      }
      if (trace) trace->push_back(objective());
    }
  }

 private:
  Eigen::MatrixXd t_;
  std::vector<Eigen::Index> basis_;
  double tol_;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, const LpOptions& options) {
  const Eigen::Index m = lp.a.rows();
  const Eigen::Index n = lp.a.cols();
  if (lp.b.size() != m || lp.c.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "solve_lp: A, b and c shapes disagree");
  }
  LpSolution sol;
  sol.x = Eigen::VectorXd::Zero(n);
  if (m == 0) {
    if ((lp.c.array() < 0.0).any()) sol.status = LpStatus::kUnbounded;
    return sol;
  }

  // Phase one: artificial variables n..n+m-1, one per row, rhs made >= 0.
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double sign = lp.b[i] < 0.0 ? -1.0 : 1.0;
    t.row(i).head(n) = sign * lp.a.row(i);
    t(i, n + i) = 1.0;
    t(i, n + m) = sign * lp.b[i];
    basis[static_cast<std::size_t>(i)] = n + i;
  }
  for (Eigen::Index i = 0; i < m; ++i) t.row(m) -= t.row(i);
  for (Eigen::Index i = 0; i < m; ++i) t(m, n + i) = 0.0;

  Tableau tab(std::move(t), std::move(basis), options.tolerance);
  const LpStatus p1 = tab.optimize(n, sol.iterations, options.max_iterations, nullptr);
  if (p1 == LpStatus::kIterationLimit) {
    sol.status = p1;
    return sol;
  }
  const double scale = 1.0 + lp.b.cwiseAbs().sum();
  if (tab.objective() > 1e-8 * scale) {
    sol.status = LpStatus::kInfeasible;
    return sol;
  }

  // Drive remaining artificials out of the basis; rows where that is
  // impossible are redundant and get zeroed.
  Eigen::MatrixXd& d = tab.data();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (tab.basis()[static_cast<std::size_t>(i)] < n) continue;
    Eigen::Index col = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(d(i, j)) > options.tolerance) {
        col = j;
        break;
      }
    }
    if (col >= 0) {
      tab.pivot(i, col);
    } else {
      d.row(i).setZero();
      d(i, tab.basis()[static_cast<std::size_t>(i)]) = 1.0;
    }
  }

  // Phase two objective row: c minus c_B * rows.
  d.row(m).setZero();
  d.row(m).head(n) = lp.c.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bi = tab.basis()[static_cast<std::size_t>(i)];
    if (bi < n && lp.c[bi] != 0.0) d.row(m) -= lp.c[bi] * d.row(i);
  }
  sol.objective_trace.push_back(tab.objective());
  sol.status = tab.optimize(n, sol.iterations, options.max_iterations, &sol.objective_trace);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bi = tab.basis()[static_cast<std::size_t>(i)];
    if (bi < n) sol.x[bi] = std::max(0.0, d(i, tab.rhs_col()));
  }
  sol.objective = lp.c.dot(sol.x);
  return sol;
}

}  // namespace failscape
