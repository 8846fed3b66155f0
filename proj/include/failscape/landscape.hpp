#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/concept_space.hpp"
#include "failscape/transition.hpp"
#include "failscape/transport.hpp"

namespace failscape {

inline constexpr const char* kReportSchemaVersion = "1.0";

// Confidence reported when the sample standard deviation is zero (n == 1 or
// identical rewards): 1 / (0 + 1e-6).
inline constexpr double kConfidenceCap = 1e6;

// Per-action aggregate over scored (non-null) rewards.
struct LandscapeCell {
  std::size_t flat = 0;
  ActionCombo combo;
  std::size_t n = 0;           // scored rewards
  std::size_t null_count = 0;  // visits without a reward
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 when n == 1
  double confidence = 0.0;

  bool operator==(const LandscapeCell&) const = default;
};

double confidence_from_std(double std);

// Streaming mean / variance (Welford).
class RunningStats {
 public:
  void add(double x);
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double sample_variance() const;
  double sample_std() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// One cell per action with at least one scored reward, ordered by flat index.
// Throws kIndexOutOfRange for actions outside the space.
std::vector<LandscapeCell> aggregate(std::span<const Transition> transitions,
                                     const ConceptSpace& space);

struct MarginalCell {
  std::vector<std::size_t> coords;  // indices of the kept dimensions, in `keep` order
  std::size_t n = 0;
  double mean = 0.0;  // n-weighted mean of the grouped cell means

  bool operator==(const MarginalCell&) const = default;
};

// Groups cells by their coordinates on `keep` (distinct dimension indices).
// Ordered lexicographically by coords. Throws kInvalidArgument for an empty
// or invalid keep set.
std::vector<MarginalCell> marginalize(std::span<const LandscapeCell> cells,
                                      const std::vector<std::size_t>& keep, std::size_t rank);

// Linearly interpolated quantile of the cell means.
double mean_quantile(std::span<const LandscapeCell> cells, double q);

struct RegionQuery {
  ActionCombo center;
  std::size_t radius = 0;  // L1 on index coordinates

  bool operator==(const RegionQuery&) const = default;
};

// Failure measure: Diracs at the cells (inside the query ball when given)
// with weights proportional to (mean - base)+. nullopt marks an empty region
// (no cell above base), never a uniform fallback.
std::optional<DiscreteMeasure> failure_measure(std::span<const LandscapeCell> cells, double base,
                                               const std::optional<RegionQuery>& region = std::nullopt);

struct RegionalBarycenter {
  RegionQuery query;
  bool empty = false;
  std::vector<std::size_t> support;  // flat indices of every combo inside the ball
  std::vector<double> weights;       // barycenter weights over `support`
  double objective = 0.0;

  bool operator==(const RegionalBarycenter&) const = default;
};

// Barycenter, on the integer grid inside the ball, of the failure measure's
// atoms weighted by their mass.
RegionalBarycenter regional_barycenter(std::span<const LandscapeCell> cells,
                                       const ConceptSpace& space, const RegionQuery& query,
                                       double base);

struct SummaryOptions {
  std::size_t top_k = 5;
  std::vector<RegionQuery> regions;
  double base_quantile = 0.5;
  nlohmann::json metadata = nlohmann::json::object();
};

struct SummaryReport {
  std::string schema_version = kReportSchemaVersion;
  std::optional<ConceptSpace> space;
  std::vector<LandscapeCell> cells;
  std::size_t transitions = 0;
  std::size_t null_rewards = 0;
  std::vector<std::size_t> visit_counts;  // per flat action, null rewards included
  std::size_t max_count = 0;              // max of visit_counts
  std::size_t max_count_action = 0;       // lowest index attaining it
  double sum_reward = 0.0;                // scored rewards, transition order
  double entropy = 0.0;                   // nats, of visit_counts
  std::vector<std::size_t> top_k;         // flats by mean desc, n desc, flat asc
  double base_quantile = 0.5;
  double base_value = 0.0;
  std::vector<RegionalBarycenter> barycenters;
  nlohmann::json metadata = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved

  bool operator==(const SummaryReport&) const = default;
};

// Throws kInvalidArgument for an empty transition list.
SummaryReport build_summary(std::span<const Transition> transitions, const ConceptSpace& space,
                            const SummaryOptions& options = {});

// Top-k ordering used by reports.
std::vector<std::size_t> top_k_cells(std::span<const LandscapeCell> cells, std::size_t k);

nlohmann::json to_json(const LandscapeCell& cell);
nlohmann::json to_json(const SummaryReport& report);
// Accepts any 1.x version; unknown fields land in `extra`.
// Throws kSchemaVersionUnsupported for other majors and kJsonParse otherwise.
SummaryReport summary_report_from_json(const nlohmann::json& j);

// Points for the UI and the static plot: coordinates, words, mean,
// confidence and count per cell.
nlohmann::json plot_data(const SummaryReport& report);

// Shared "major.minor" check: throws kSchemaVersionUnsupported unless the
// major part equals `supported_major`.
void check_schema_version(const nlohmann::json& j, int supported_major, const std::string& what);

}  // namespace failscape
