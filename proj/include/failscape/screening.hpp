#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/concept_space.hpp"

namespace failscape {

// Which mean the per-value reward sums are compared against.
enum class ScreeningMode {
  kPerDimension,  // each dimension against its own mean (default)
  kGlobalMean,    // every value against one mean over all values of all dimensions
};

struct ScreeningOptions {
  ScreeningMode mode = ScreeningMode::kPerDimension;
  // When set and smaller than the number of combinations, that many
  // combinations are sampled uniformly without replacement (shared by all
  // states). Otherwise every combination is evaluated.
  std::optional<std::size_t> budget;
  std::uint64_t seed = 0;
  // Reward evaluations issued concurrently. Sums are accumulated afterwards
  // in a fixed order, so the report does not depend on this.
  std::size_t workers = 1;
};

// Reward of a combination under a state; nullopt means the backend could not
// score it and the evaluation is skipped.
using ScreeningRewardFn =
    std::function<std::optional<double>(const ActionCombo&, const PromptTemplate&)>;

struct DimensionScreening {
  std::string name;
  std::vector<std::string> values;
  std::vector<double> reward_sums;  // per value, in value order
  double mean = 0.0;                // threshold the sums were compared against
  std::vector<std::string> kept;    // original relative order
  bool fallback_to_max = false;     // global mode only: nothing reached the mean
};

struct ScreeningReport {
  ScreeningMode mode = ScreeningMode::kPerDimension;
  std::vector<DimensionScreening> dimensions;
  std::size_t evaluated_combinations = 0;
  std::size_t evaluations = 0;
  std::size_t null_rewards = 0;
  std::vector<std::string> states;  // template ids
  std::optional<double> global_mean;
};

struct ScreeningResult {
  ConceptSpace pruned;
  ScreeningReport report;
};

// Main-effects screening: every evaluated (state, combination) reward is added
// to the running sum of each value taking part in the combination; values
// whose sum falls below the mean are dropped (ties are kept).
//
// In global-mean mode a dimension can end up with no value at or above the
// mean; it then keeps its maximal-sum value(s) and the report flags it.
ScreeningResult screen_actions(const ConceptSpace& space, std::span<const PromptTemplate> states,
                               const ScreeningRewardFn& reward_fn,
                               const ScreeningOptions& options = {});

nlohmann::json to_json(const ScreeningReport& report);
std::string to_string(ScreeningMode mode);
ScreeningMode screening_mode_from_string(const std::string& s);

}  // namespace failscape
