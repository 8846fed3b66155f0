#include "failscape/transport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "failscape/errors.hpp"
#include "failscape/lp.hpp"

namespace failscape {

void DiscreteMeasure::validate() const {
  if (points.rows() == 0) throw Error(ErrorCode::kEmptySupport, "measure has no atoms");
  if (weights.size() != points.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "measure has " + std::to_string(points.rows()) +
                                               " atoms but " + std::to_string(weights.size()) +
                                               " weights");
  }
  if (!points.allFinite() || !weights.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "measure has non-finite entries");
  }
  if ((weights.array() < 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "measure weights must be non-negative");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "measure weights must sum to 1");
  }
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < points.rows(); ++j) {
      if (points.row(i) == points.row(j)) {
        throw Error(ErrorCode::kInvalidArgument, "measure support points must be distinct");
      }
    }
  }
}

DiscreteMeasure dirac(const Eigen::VectorXd& point) {
  DiscreteMeasure m;
  m.points = point.transpose();
  m.weights = Eigen::VectorXd::Ones(1);
  return m;
}

DiscreteMeasure compact(const DiscreteMeasure& measure, double threshold) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < measure.weights.size(); ++i) {
    if (measure.weights[i] > threshold) keep.push_back(i);
  }
  if (keep.empty()) throw Error(ErrorCode::kEmptySupport, "measure has no mass above threshold");
  DiscreteMeasure out;
  out.points.resize(static_cast<Eigen::Index>(keep.size()), measure.points.cols());
  out.weights.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.points.row(static_cast<Eigen::Index>(k)) = measure.points.row(keep[k]);
    out.weights[static_cast<Eigen::Index>(k)] = measure.weights[keep[k]];
  }
  out.weights /= out.weights.sum();
  return out;
}

nlohmann::json to_json(const DiscreteMeasure& m) {
  nlohmann::json atoms = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.points.rows(); ++i) {
    std::vector<double> p;
    for (Eigen::Index d = 0; d < m.points.cols(); ++d) p.push_back(m.points(i, d));
    atoms.push_back({{"point", p}, {"weight", m.weights[i]}});
  }
  return {{"atoms", atoms}};
}

DiscreteMeasure discrete_measure_from_json(const nlohmann::json& j) {
  try {
    const auto& atoms = j.at("atoms");
    DiscreteMeasure m;
    const auto n = static_cast<Eigen::Index>(atoms.size());
    m.weights.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto p = atoms[static_cast<std::size_t>(i)].at("point").get<std::vector<double>>();
      if (i == 0) m.points.resize(n, static_cast<Eigen::Index>(p.size()));
      if (static_cast<Eigen::Index>(p.size()) != m.points.cols()) {
        throw Error(ErrorCode::kDimensionMismatch, "measure atoms differ in dimension");
      }
      for (std::size_t d = 0; d < p.size(); ++d) m.points(i, static_cast<Eigen::Index>(d)) = p[d];
      m.weights[i] = atoms[static_cast<std::size_t>(i)].at("weight").get<double>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("measure: ") + e.what());
  }
}

Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.cols() != y.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "point sets differ in ambient dimension");
  }
  Eigen::MatrixXd c(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  }
  return c;
}

namespace {

struct Cell {
  Eigen::Index row;
  Eigen::Index col;
  double flow;
};

}  // namespace

TransportPlan solve_transport(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                              const Eigen::MatrixXd& cost) {
  const Eigen::Index n = supply.size();
  const Eigen::Index m = demand.size();
  if (n == 0 || m == 0) throw Error(ErrorCode::kEmptySupport, "transport with an empty side");
  if (cost.rows() != n || cost.cols() != m) {
    throw Error(ErrorCode::kShapeMismatch, "cost matrix shape disagrees with marginals");
  }
  if ((supply.array() < 0.0).any() || (demand.array() < 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "marginals must be non-negative");
  }
  if (std::abs(supply.sum() - demand.sum()) > 1e-9 * std::max(1.0, supply.sum())) {
    throw Error(ErrorCode::kInvalidArgument, "marginals must have equal mass");
  }

  // Northwest-corner start: exactly n + m - 1 basic cells forming a spanning tree.
  std::vector<Cell> basis;
  basis.reserve(static_cast<std::size_t>(n + m - 1));
  {
    Eigen::VectorXd s = supply, d = demand;
    Eigen::Index i = 0, j = 0;
    while (true) {
      const bool last = i == n - 1 && j == m - 1;
      const double x = last ? std::max(0.0, s[i]) : std::min(s[i], d[j]);
      basis.push_back({i, j, x});
      s[i] -= x;
      d[j] -= x;
      if (last) break;
      if (i == n - 1) {
        ++j;
      } else if (j == m - 1) {
        ++i;
      } else if (s[i] <= d[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const double tol = 1e-12 * (1.0 + cost.cwiseAbs().maxCoeff());
  const Eigen::Index nodes = n + m;
  std::vector<std::vector<std::size_t>> adj(static_cast<std::size_t>(nodes));
  Eigen::VectorXd u(n), v(m);
  std::vector<char> seen(static_cast<std::size_t>(nodes));
  std::vector<std::ptrdiff_t> parent_edge(static_cast<std::size_t>(nodes));
  std::deque<Eigen::Index> queue;
  auto other_end = [&](const Cell& c, Eigen::Index node) {
    return node < n ? n + c.col : c.row;
  };
  auto rebuild_adjacency = [&] {
    for (auto& a : adj) a.clear();
    for (std::size_t k = 0; k < basis.size(); ++k) {
      adj[static_cast<std::size_t>(basis[k].row)].push_back(k);
      adj[static_cast<std::size_t>(n + basis[k].col)].push_back(k);
    }
  };
  // BFS over the basis tree from `root`, recording the edge used to reach each node.
  auto bfs = [&](Eigen::Index root, bool potentials) {
    std::fill(seen.begin(), seen.end(), 0);
    std::fill(parent_edge.begin(), parent_edge.end(), -1);
    queue.clear();
    queue.push_back(root);
    seen[static_cast<std::size_t>(root)] = 1;
    if (potentials) u[root] = 0.0;
    while (!queue.empty()) {
      const Eigen::Index node = queue.front();
      queue.pop_front();
      for (std::size_t k : adj[static_cast<std::size_t>(node)]) {
        const Cell& c = basis[k];
        const Eigen::Index next = other_end(c, node);
        if (seen[static_cast<std::size_t>(next)]) continue;
        seen[static_cast<std::size_t>(next)] = 1;
        parent_edge[static_cast<std::size_t>(next)] = static_cast<std::ptrdiff_t>(k);
        if (potentials) {
          if (next >= n) {
            v[next - n] = cost(c.row, c.col) - u[c.row];
          } else {
            u[next] = cost(c.row, c.col) - v[c.col];
          }
        }
        queue.push_back(next);
      }
    }
  };

  TransportPlan result;
  const std::size_t max_pivots = 100000 + 50 * static_cast<std::size_t>(n * m);
  std::size_t degenerate_run = 0;
  bool bland = false;
  while (true) {
    rebuild_adjacency();
    bfs(0, true);

    Eigen::Index ei = -1, ej = -1;
    double best = -tol;
    for (Eigen::Index i = 0; i < n && !(bland && ei >= 0); ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        const double rc = cost(i, j) - u[i] - v[j];
        if (rc < best) {
          ei = i;
          ej = j;
          if (bland) break;
          best = rc;
        }
      }
    }
    if (ei < 0) break;
    if (result.pivots >= max_pivots) {
      throw Error(ErrorCode::kInvalidArgument, "transport solver exceeded its pivot budget");
    }

    // Cycle: entering cell plus the tree path from column ej back to row ei.
    bfs(ei, false);
    std::vector<std::size_t> minus, plus;
    Eigen::Index node = n + ej;
    bool negative = true;
    while (node != ei) {
      const auto k = static_cast<std::size_t>(parent_edge[static_cast<std::size_t>(node)]);
      (negative ? minus : plus).push_back(k);
      negative = !negative;
      node = other_end(basis[k], node);
    }
    std::size_t leave = minus.front();
    for (std::size_t k : minus) {
      const double fk = basis[k].flow, fl = basis[leave].flow;
      if (fk < fl || (fk == fl && basis[k].row * m + basis[k].col <
                                      basis[leave].row * m + basis[leave].col)) {
        leave = k;
      }
    }
    const double theta = basis[leave].flow;
    for (std::size_t k : minus) basis[k].flow = std::max(0.0, basis[k].flow - theta);
    for (std::size_t k : plus) basis[k].flow += theta;
    basis[leave] = {ei, ej, theta};
    ++result.pivots;
    degenerate_run = theta == 0.0 ? degenerate_run + 1 : 0;
    if (degenerate_run > static_cast<std::size_t>(n + m)) bland = true;
  }

  result.plan = Eigen::MatrixXd::Zero(n, m);
  for (const Cell& c : basis) {
    result.plan(c.row, c.col) += c.flow;
    result.cost += c.flow * cost(c.row, c.col);
  }
  return result;
}

double wasserstein_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (mu.points.cols() != nu.points.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "measures differ in ambient dimension");
  }
  mu.validate();
  nu.validate();
  const TransportPlan p =
      solve_transport(mu.weights, nu.weights, squared_distance_matrix(mu.points, nu.points));
  return std::sqrt(std::max(0.0, p.cost));
}

namespace {

void check_barycenter_inputs(const std::vector<DiscreteMeasure>& measures,
                             const std::vector<double>& lambdas, Eigen::Index dim) {
  if (measures.empty()) throw Error(ErrorCode::kInvalidArgument, "barycenter of no measures");
  if (lambdas.size() != measures.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one lambda per measure required");
  }
  double total = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw Error(ErrorCode::kInvalidArgument, "lambdas must be non-negative");
    }
    total += l;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "lambdas must sum to 1");
  for (const auto& m : measures) {
    if (m.points.cols() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "measure dimension differs from the support");
    }
    m.validate();
  }
}

}  // namespace

BarycenterResult barycenter(const std::vector<DiscreteMeasure>& measures,
                            const std::vector<double>& lambdas, const Eigen::MatrixXd& support) {
  const Eigen::Index k = support.rows();
  if (k == 0) throw Error(ErrorCode::kEmptySupport, "barycenter support is empty");
  check_barycenter_inputs(measures, lambdas, support.cols());

  // Single-atom inputs transport everything from one point, so their cost
  // is linear in the barycenter weights and needs no plan variables.
  std::vector<DiscreteMeasure> spread;
  std::vector<double> spread_lambda;
  Eigen::VectorXd linear = Eigen::VectorXd::Zero(k);
  for (std::size_t i = 0; i < measures.size(); ++i) {
    const DiscreteMeasure m = compact(measures[i], 0.0);
    const Eigen::MatrixXd c = squared_distance_matrix(m.points, support);
    if (m.atoms() == 1) {
      linear += lambdas[i] * c.row(0).transpose();
    } else if (lambdas[i] > 0.0) {
      spread.push_back(m);
      spread_lambda.push_back(lambdas[i]);
    }
  }

  Eigen::Index vars = k, rows = 1;
  for (const auto& m : spread) {
    vars += static_cast<Eigen::Index>(m.atoms()) * k;
    rows += static_cast<Eigen::Index>(m.atoms()) + k;
  }
  LinearProgram lp;
  lp.a = Eigen::MatrixXd::Zero(rows, vars);
  lp.b = Eigen::VectorXd::Zero(rows);
  lp.c = Eigen::VectorXd::Zero(vars);
  lp.c.head(k) = linear;
  lp.a.row(0).head(k).setOnes();
  lp.b[0] = 1.0;
  Eigen::Index row = 1, offset = k;
  for (std::size_t i = 0; i < spread.size(); ++i) {
    const DiscreteMeasure& m = spread[i];
    const auto n = static_cast<Eigen::Index>(m.atoms());
    const Eigen::MatrixXd c = squared_distance_matrix(m.points, support);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index s = 0; s < k; ++s) {
        const Eigen::Index var = offset + r * k + s;
        lp.c[var] = spread_lambda[i] * c(r, s);
        lp.a(row + r, var) = 1.0;       // row marginal
        lp.a(row + n + s, var) = 1.0;   // column marginal
      }
      lp.b[row + r] = m.weights[r];
    }
    for (Eigen::Index s = 0; s < k; ++s) lp.a(row + n + s, s) = -1.0;
    row += n + k;
    offset += n * k;
  }

  const LpSolution sol = solve_lp(lp);
  if (sol.status != LpStatus::kOptimal) {
    throw Error(ErrorCode::kInvalidArgument, "barycenter linear program did not reach optimality");
  }
  BarycenterResult out;
  out.measure.points = support;
  out.measure.weights = sol.x.head(k).cwiseMax(0.0);
  out.measure.weights /= out.measure.weights.sum();
  out.objective = std::max(0.0, sol.objective);
  out.objective_trace = sol.objective_trace;
  return out;
}

double barycenter_objective(const std::vector<DiscreteMeasure>& measures,
                            const std::vector<double>& lambdas, const DiscreteMeasure& candidate) {
  check_barycenter_inputs(measures, lambdas, candidate.points.cols());
  candidate.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < measures.size(); ++i) {
    const TransportPlan p =
        solve_transport(measures[i].weights, candidate.weights,
                        squared_distance_matrix(measures[i].points, candidate.points));
    total += lambdas[i] * p.cost;
  }
  return total;
}

}  // namespace failscape
