#include "failscape/screening.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "failscape/errors.hpp"
#include "failscape/rng.hpp"

namespace failscape {

namespace {

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::vector<std::size_t> choose_combinations(std::size_t total,
                                             const ScreeningOptions& options) {
  std::vector<std::size_t> all(total);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (!options.budget || *options.budget >= total) return all;
  if (*options.budget == 0) {
    throw Error(ErrorCode::kInvalidArgument, "screening budget must be positive");
  }
  Rng rng = make_rng(options.seed, "screening");
  std::vector<std::size_t> picked;
  picked.reserve(*options.budget);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), *options.budget, rng);
  return picked;
}

}  // namespace

ScreeningResult screen_actions(const ConceptSpace& space, std::span<const PromptTemplate> states,
                               const ScreeningRewardFn& reward_fn,
                               const ScreeningOptions& options) {
  if (states.empty()) throw Error(ErrorCode::kEmptyTemplateSet, "screening needs at least one state");
  const std::vector<std::size_t> combos = choose_combinations(space.size(), options);

  // Evaluate everything first; accumulation order is then fixed.
  const std::size_t n_eval = states.size() * combos.size();
  std::vector<std::optional<double>> rewards(n_eval);
  auto evaluate = [&](std::size_t k) {
    const auto& state = states[k / combos.size()];
    rewards[k] = reward_fn(combo_from_flat(combos[k % combos.size()], space), state);
  };
  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  if (workers == 1) {
    for (std::size_t k = 0; k < n_eval; ++k) evaluate(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < n_eval; k = next++) {
            try {
              evaluate(k);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
              next = n_eval;
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  ScreeningReport report;
  report.mode = options.mode;
  report.evaluated_combinations = combos.size();
  for (const auto& s : states) report.states.push_back(s.id);

  std::vector<std::vector<CompensatedSum>> sums(space.rank());
  for (std::size_t d = 0; d < space.rank(); ++d) {
    sums[d].resize(space.dimensions()[d].values.size());
  }
  for (std::size_t k = 0; k < n_eval; ++k) {
    if (!rewards[k]) {
      ++report.null_rewards;
      continue;
    }
    ++report.evaluations;
    const ActionCombo combo = combo_from_flat(combos[k % combos.size()], space);
    for (std::size_t d = 0; d < space.rank(); ++d) sums[d][combo.indices[d]].add(*rewards[k]);
  }

  report.dimensions.resize(space.rank());
  CompensatedSum all_values;
  std::size_t value_count = 0;
  for (std::size_t d = 0; d < space.rank(); ++d) {
    auto& dim = report.dimensions[d];
    dim.name = space.dimensions()[d].name;
    dim.values = space.dimensions()[d].values;
    CompensatedSum total;
    for (const auto& s : sums[d]) {
      dim.reward_sums.push_back(s.value());
      total.add(s.value());
      all_values.add(s.value());
    }
    value_count += dim.values.size();
    dim.mean = total.value() / static_cast<double>(dim.values.size());
  }
  if (options.mode == ScreeningMode::kGlobalMean) {
    report.global_mean = all_values.value() / static_cast<double>(value_count);
    for (auto& dim : report.dimensions) dim.mean = *report.global_mean;
  }

  std::vector<ConceptDimension> pruned;
  for (auto& dim : report.dimensions) {
    for (std::size_t v = 0; v < dim.values.size(); ++v) {
      if (dim.reward_sums[v] >= dim.mean) dim.kept.push_back(dim.values[v]);
    }
    if (dim.kept.empty()) {
      // Only reachable with the global mean.
      dim.fallback_to_max = true;
      const double best = *std::max_element(dim.reward_sums.begin(), dim.reward_sums.end());
      for (std::size_t v = 0; v < dim.values.size(); ++v) {
        if (dim.reward_sums[v] == best) dim.kept.push_back(dim.values[v]);
      }
    }
    pruned.push_back({dim.name, dim.kept});
  }
  return {ConceptSpace(std::move(pruned)), std::move(report)};
}

std::string to_string(ScreeningMode mode) {
  return mode == ScreeningMode::kPerDimension ? "per-dimension" : "global-mean";
}

ScreeningMode screening_mode_from_string(const std::string& s) {
  if (s == "per-dimension") return ScreeningMode::kPerDimension;
  if (s == "global-mean" || s == "global") return ScreeningMode::kGlobalMean;
  throw Error(ErrorCode::kInvalidArgument, "unknown screening mode '" + s + "'");
}

nlohmann::json to_json(const ScreeningReport& report) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : report.dimensions) {
    nlohmann::json sums = nlohmann::json::object();
    for (std::size_t v = 0; v < d.values.size(); ++v) sums[d.values[v]] = d.reward_sums[v];
    dims.push_back({{"name", d.name},
                    {"values", d.values},
                    {"reward_sums", sums},
                    {"mean", d.mean},
                    {"kept", d.kept},
                    {"fallback_to_max", d.fallback_to_max}});
  }
  nlohmann::json j = {{"schema_version", "1.0"},
                      {"mode", to_string(report.mode)},
                      {"dimensions", dims},
                      {"evaluated_combinations", report.evaluated_combinations},
                      {"evaluations", report.evaluations},
                      {"null_rewards", report.null_rewards},
                      {"states", report.states}};
  if (report.global_mean) j["global_mean"] = *report.global_mean;
  return j;
}

}  // namespace failscape
