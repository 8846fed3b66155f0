#include "failscape/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "failscape/agents.hpp"
#include "failscape/environment.hpp"
#include "failscape/errors.hpp"

namespace failscape {

double confidence_from_std(double std) { return std > 0.0 ? 1.0 / std : kConfidenceCap; }

void RunningStats::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

double RunningStats::sample_variance() const {
  return n_ > 1 ? std::max(0.0, m2_ / static_cast<double>(n_ - 1)) : 0.0;
}

double RunningStats::sample_std() const { return std::sqrt(sample_variance()); }

std::vector<LandscapeCell> aggregate(std::span<const Transition> transitions,
                                     const ConceptSpace& space) {
  std::map<std::size_t, std::pair<RunningStats, std::size_t>> acc;
  for (const auto& t : transitions) {
    if (t.action >= space.size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "transition action " + std::to_string(t.action) + " outside the space");
    }
    auto& [stats, nulls] = acc[t.action];
    if (t.reward) {
      stats.add(*t.reward);
    } else {
      ++nulls;
    }
  }
  std::vector<LandscapeCell> cells;
  for (const auto& [flat, entry] : acc) {
    const auto& [stats, nulls] = entry;
    if (stats.count() == 0) continue;
    LandscapeCell c;
    c.flat = flat;
    c.combo = combo_from_flat(flat, space);
    c.n = stats.count();
    c.null_count = nulls;
    c.mean = stats.mean();
    c.std = stats.sample_std();
    c.confidence = confidence_from_std(c.std);
    cells.push_back(std::move(c));
  }
  return cells;
}

std::vector<MarginalCell> marginalize(std::span<const LandscapeCell> cells,
                                      const std::vector<std::size_t>& keep, std::size_t rank) {
  if (keep.empty()) throw Error(ErrorCode::kInvalidArgument, "marginalize: keep set is empty");
  std::set<std::size_t> unique(keep.begin(), keep.end());
  if (unique.size() != keep.size() || *unique.rbegin() >= rank) {
    throw Error(ErrorCode::kInvalidArgument, "marginalize: keep must list distinct dimensions");
  }
  std::map<std::vector<std::size_t>, std::pair<std::size_t, double>> groups;
  for (const auto& c : cells) {
    if (c.combo.indices.size() != rank) {
      throw Error(ErrorCode::kDimensionMismatch, "marginalize: cell rank differs");
    }
    std::vector<std::size_t> key;
    for (auto d : keep) key.push_back(c.combo.indices[d]);
    auto& [n, weighted] = groups[key];
    n += c.n;
    weighted += static_cast<double>(c.n) * c.mean;
  }
  std::vector<MarginalCell> out;
  for (const auto& [key, g] : groups) {
    out.push_back({key, g.first, g.first > 0 ? g.second / static_cast<double>(g.first) : 0.0});
  }
  return out;
}

double mean_quantile(std::span<const LandscapeCell> cells, double q) {
  if (cells.empty()) throw Error(ErrorCode::kInvalidArgument, "quantile of an empty landscape");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "quantile must be in [0, 1]");
  std::vector<double> means;
  for (const auto& c : cells) means.push_back(c.mean);
  std::sort(means.begin(), means.end());
  const double pos = q * static_cast<double>(means.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, means.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return means[lo] + frac * (means[hi] - means[lo]);
}

namespace {

Eigen::RowVectorXd coords_of(const ActionCombo& combo) {
  Eigen::RowVectorXd p(static_cast<Eigen::Index>(combo.indices.size()));
  for (std::size_t d = 0; d < combo.indices.size(); ++d) {
    p[static_cast<Eigen::Index>(d)] = static_cast<double>(combo.indices[d]);
  }
  return p;
}

}  // namespace

std::optional<DiscreteMeasure> failure_measure(std::span<const LandscapeCell> cells, double base,
                                               const std::optional<RegionQuery>& region) {
  std::vector<const LandscapeCell*> atoms;
  std::vector<double> mass;
  for (const auto& c : cells) {
    if (region && l1_distance(c.combo, region->center) > region->radius) continue;
    const double excess = c.mean - base;
    if (excess > 0.0) {
      atoms.push_back(&c);
      mass.push_back(excess);
    }
  }
  if (atoms.empty()) return std::nullopt;
  double total = 0.0;
  for (double m : mass) total += m;
  DiscreteMeasure out;
  out.points.resize(static_cast<Eigen::Index>(atoms.size()),
                    static_cast<Eigen::Index>(atoms.front()->combo.indices.size()));
  out.weights.resize(static_cast<Eigen::Index>(atoms.size()));
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = coords_of(atoms[i]->combo);
    out.weights[static_cast<Eigen::Index>(i)] = mass[i] / total;
  }
  return out;
}

RegionalBarycenter regional_barycenter(std::span<const LandscapeCell> cells,
                                       const ConceptSpace& space, const RegionQuery& query,
                                       double base) {
  space.check(query.center);
  RegionalBarycenter out;
  out.query = query;
  for (std::size_t f = 0; f < space.size(); ++f) {
    if (l1_distance(combo_from_flat(f, space), query.center) <= query.radius) out.support.push_back(f);
  }
  const auto measure = failure_measure(cells, base, query);
  if (!measure) {
    out.empty = true;
    return out;
  }
  std::vector<DiscreteMeasure> inputs;
  std::vector<double> lambdas;
  for (Eigen::Index i = 0; i < measure->points.rows(); ++i) {
    inputs.push_back(dirac(measure->points.row(i).transpose()));
    lambdas.push_back(measure->weights[i]);
  }
  // Guard the lambda sum against round-off in the normalization above.
  double total = 0.0;
  for (double l : lambdas) total += l;
  for (double& l : lambdas) l /= total;
  Eigen::MatrixXd support(static_cast<Eigen::Index>(out.support.size()),
                          static_cast<Eigen::Index>(space.rank()));
  for (std::size_t k = 0; k < out.support.size(); ++k) {
    support.row(static_cast<Eigen::Index>(k)) = coords_of(combo_from_flat(out.support[k], space));
  }
  const BarycenterResult r = barycenter(inputs, lambdas, support);
  out.weights.assign(r.measure.weights.data(), r.measure.weights.data() + r.measure.weights.size());
  out.objective = r.objective;
  return out;
}

std::vector<std::size_t> top_k_cells(std::span<const LandscapeCell> cells, std::size_t k) {
  std::vector<const LandscapeCell*> order;
  for (const auto& c : cells) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const LandscapeCell* a, const LandscapeCell* b) {
    if (a->mean != b->mean) return a->mean > b->mean;
    if (a->n != b->n) return a->n > b->n;
    return a->flat < b->flat;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) out.push_back(order[i]->flat);
  return out;
}

SummaryReport build_summary(std::span<const Transition> transitions, const ConceptSpace& space,
                            const SummaryOptions& options) {
  if (transitions.empty()) throw Error(ErrorCode::kInvalidArgument, "summary of an empty run");
  SummaryReport r;
  r.space = space;
  r.cells = aggregate(transitions, space);
  r.transitions = transitions.size();
  r.visit_counts.assign(space.size(), 0);
  for (const auto& t : transitions) {
    ++r.visit_counts[t.action];
    if (t.reward) {
      r.sum_reward += *t.reward;
    } else {
      ++r.null_rewards;
    }
  }
  const auto it = std::max_element(r.visit_counts.begin(), r.visit_counts.end());
  r.max_count = *it;
  r.max_count_action = static_cast<std::size_t>(it - r.visit_counts.begin());
  r.entropy = entropy_of_counts(r.visit_counts);
  r.top_k = top_k_cells(r.cells, options.top_k);
  r.base_quantile = options.base_quantile;
  r.base_value = r.cells.empty() ? 0.0 : mean_quantile(r.cells, options.base_quantile);
  for (const auto& q : options.regions) {
    r.barycenters.push_back(regional_barycenter(r.cells, space, q, r.base_value));
  }
  r.metadata = options.metadata;
  return r;
}

void check_schema_version(const nlohmann::json& j, int supported_major, const std::string& what) {
  if (!j.is_object() || !j.contains("schema_version") || !j.at("schema_version").is_string()) {
    throw Error(ErrorCode::kJsonParse, what + ": missing schema_version");
  }
  const std::string v = j.at("schema_version").get<std::string>();
  int major = -1;
  try {
    major = std::stoi(v.substr(0, v.find('.')));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kJsonParse, what + ": malformed schema_version '" + v + "'");
  }
  if (major != supported_major) {
    throw Error(ErrorCode::kSchemaVersionUnsupported,
                what + ": schema_version " + v + " is not supported (expected " +
                    std::to_string(supported_major) + ".x)");
  }
}

nlohmann::json to_json(const LandscapeCell& c) {
  return {{"flat", c.flat},       {"combo", to_json(c.combo)}, {"n", c.n},
          {"null_count", c.null_count}, {"mean", c.mean},     {"std", c.std},
          {"confidence", c.confidence}};
}

namespace {

nlohmann::json to_json(const RegionalBarycenter& b) {
  return {{"center", failscape::to_json(b.query.center)},
          {"radius", b.query.radius},
          {"empty", b.empty},
          {"support", b.support},
          {"weights", b.weights},
          {"objective", b.objective}};
}

const std::set<std::string>& report_fields() {
  static const std::set<std::string> fields = {
      "schema_version", "dimensions", "cells",  "transitions", "null_rewards",
      "visit_counts",   "max_count",  "max_count_action", "sum_reward", "entropy",
      "top_k",          "base_quantile", "base_value", "barycenters", "metadata"};
  return fields;
}

}  // namespace

nlohmann::json to_json(const SummaryReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  nlohmann::json bary = nlohmann::json::array();
  for (const auto& b : r.barycenters) bary.push_back(to_json(b));
  nlohmann::json j = r.extra.is_object() ? r.extra : nlohmann::json::object();
  j["schema_version"] = r.schema_version;
  j["dimensions"] = r.space ? to_json(*r.space) : nlohmann::json::array();
  j["cells"] = cells;
  j["transitions"] = r.transitions;
  j["null_rewards"] = r.null_rewards;
  j["visit_counts"] = r.visit_counts;
  j["max_count"] = r.max_count;
  j["max_count_action"] = r.max_count_action;
  j["sum_reward"] = r.sum_reward;
  j["entropy"] = r.entropy;
  j["top_k"] = r.top_k;
  j["base_quantile"] = r.base_quantile;
  j["base_value"] = r.base_value;
  j["barycenters"] = bary;
  j["metadata"] = r.metadata;
  return j;
}

SummaryReport summary_report_from_json(const nlohmann::json& j) {
  check_schema_version(j, 1, "summary report");
  try {
    SummaryReport r;
    r.schema_version = j.at("schema_version").get<std::string>();
    r.space = concept_space_from_json(j.at("dimensions"));
    for (const auto& c : j.at("cells")) {
      LandscapeCell cell;
      cell.flat = c.at("flat").get<std::size_t>();
      cell.combo = combo_from_json(c.at("combo"));
      cell.n = c.at("n").get<std::size_t>();
      cell.null_count = c.at("null_count").get<std::size_t>();
      cell.mean = c.at("mean").get<double>();
      cell.std = c.at("std").get<double>();
      cell.confidence = c.at("confidence").get<double>();
      r.cells.push_back(std::move(cell));
    }
    r.transitions = j.at("transitions").get<std::size_t>();
    r.null_rewards = j.at("null_rewards").get<std::size_t>();
    r.visit_counts = j.at("visit_counts").get<std::vector<std::size_t>>();
    r.max_count = j.at("max_count").get<std::size_t>();
    r.max_count_action = j.at("max_count_action").get<std::size_t>();
    r.sum_reward = j.at("sum_reward").get<double>();
    r.entropy = j.at("entropy").get<double>();
    r.top_k = j.at("top_k").get<std::vector<std::size_t>>();
    r.base_quantile = j.at("base_quantile").get<double>();
    r.base_value = j.at("base_value").get<double>();
    for (const auto& b : j.at("barycenters")) {
      RegionalBarycenter rb;
      rb.query.center = combo_from_json(b.at("center"));
      rb.query.radius = b.at("radius").get<std::size_t>();
      rb.empty = b.at("empty").get<bool>();
      rb.support = b.at("support").get<std::vector<std::size_t>>();
      rb.weights = b.at("weights").get<std::vector<double>>();
      rb.objective = b.at("objective").get<double>();
      r.barycenters.push_back(std::move(rb));
    }
    r.metadata = j.value("metadata", nlohmann::json::object());
    for (const auto& [key, value] : j.items()) {
      if (!report_fields().contains(key)) r.extra[key] = value;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("summary report: ") + e.what());
  }
}

nlohmann::json plot_data(const SummaryReport& r) {
  nlohmann::json dims = nlohmann::json::array();
  if (r.space) {
    for (const auto& d : r.space->dimensions()) dims.push_back(d.name);
  }
  nlohmann::json points = nlohmann::json::array();
  for (const auto& c : r.cells) {
    points.push_back({{"flat", c.flat},
                      {"coords", to_json(c.combo)},
                      {"words", r.space ? r.space->words(c.combo) : std::vector<std::string>{}},
                      {"mean", c.mean},
                      {"std", c.std},
                      {"confidence", c.confidence},
                      {"count", c.n},
                      {"null_count", c.null_count}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"dimensions", dims},
          {"points", points},
          {"top_k", r.top_k},
          {"max_count", r.max_count},
          {"entropy", r.entropy},
          {"sum_reward", r.sum_reward}};
}

}  // namespace failscape
