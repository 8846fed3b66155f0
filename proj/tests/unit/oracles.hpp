#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Deliberately naive: nested loops, integer arithmetic, no shared code
// with the library beyond its value types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace failscape::testing {

// Deterministic integer reward in [0, 9] for (flat combination, state).
inline std::int64_t hashed_reward(std::uint64_t salt, std::size_t flat, std::size_t state) {
  std::uint64_t z = salt * 0x9e3779b97f4a7c15ULL + flat * 1315423911ULL + state * 2654435761ULL;
  z = (z ^ (z >> 31)) * 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 29;
  return static_cast<std::int64_t>(z % 10);
}

struct BruteForceScreening {
  std::vector<std::vector<std::int64_t>> sums;  // [dim][value]
  std::vector<std::vector<std::size_t>> kept;   // kept value indices per dim
  std::vector<bool> fallback;
};

// Three-dimensional main-effects screening by nested loops with exact integer
// arithmetic. `global` selects one mean over every value of every dimension.
template <typename RewardFn>
BruteForceScreening brute_force_screening(std::size_t n0, std::size_t n1, std::size_t n2,
                                          std::size_t n_states, bool global, RewardFn&& reward) {
  BruteForceScreening out;
  out.sums = {std::vector<std::int64_t>(n0, 0), std::vector<std::int64_t>(n1, 0),
              std::vector<std::int64_t>(n2, 0)};
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n0; ++a) {
      for (std::size_t b = 0; b < n1; ++b) {
        for (std::size_t c = 0; c < n2; ++c) {
          const std::int64_t r = reward((a * n1 + b) * n2 + c, s);
          out.sums[0][a] += r;
          out.sums[1][b] += r;
          out.sums[2][c] += r;
        }
      }
    }
  }
  std::int64_t all_total = 0;
  std::int64_t all_count = 0;
  for (const auto& d : out.sums) {
    for (auto v : d) all_total += v;
    all_count += static_cast<std::int64_t>(d.size());
  }
  for (const auto& d : out.sums) {
    std::int64_t total = 0;
    for (auto v : d) total += v;
    const std::int64_t count = static_cast<std::int64_t>(d.size());
    std::vector<std::size_t> kept;
    for (std::size_t v = 0; v < d.size(); ++v) {
      // sum >= total / count, compared without division
      const bool keep = global ? d[v] * all_count >= all_total : d[v] * count >= total;
      if (keep) kept.push_back(v);
    }
    bool fb = false;
    if (kept.empty()) {
      fb = true;
      std::int64_t best = d[0];
      for (auto v : d) best = v > best ? v : best;
      for (std::size_t v = 0; v < d.size(); ++v) {
        if (d[v] == best) kept.push_back(v);
      }
    }
    out.kept.push_back(kept);
    out.fallback.push_back(fb);
  }
  return out;
}

// Value iteration for a finite MDP with rewards r[s][a] and transition
// probabilities p[s][a][s'].
inline std::vector<std::vector<double>> value_iteration_q(
    const std::vector<std::vector<double>>& r,
    const std::vector<std::vector<std::vector<double>>>& p, double gamma, int iterations = 2000) {
  const std::size_t ns = r.size();
  std::vector<std::vector<double>> q(ns, std::vector<double>(r[0].size(), 0.0));
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> v(ns, 0.0);
    for (std::size_t s = 0; s < ns; ++s) {
      double best = q[s][0];
      for (double x : q[s]) best = x > best ? x : best;
      v[s] = best;
    }
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t a = 0; a < r[s].size(); ++a) {
        double next = 0.0;
        for (std::size_t t = 0; t < ns; ++t) next += p[s][a][t] * v[t];
        q[s][a] = r[s][a] + gamma * next;
      }
    }
  }
  return q;
}

// Central finite differences of f at x.
inline std::vector<double> numerical_gradient(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace failscape::testing
