#include "failscape/environment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "failscape/errors.hpp"

namespace failscape {

FailureVerdict failure_check(double model_score, double human_score, double epsilon) {
  if (!std::isfinite(model_score) || !std::isfinite(human_score)) {
    throw Error(ErrorCode::kNonFiniteScore, "failure_check: scores must be finite");
  }
  if (!(epsilon >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "failure_check: epsilon must be non-negative");
  }
  const double delta = human_score - model_score;
  return {delta, epsilon, delta > epsilon};
}

void PlantedLandscape::validate(const ConceptSpace* space) const {
  if (!std::isfinite(base_reward)) {
    throw Error(ErrorCode::kInvalidArgument, "base_reward must be finite");
  }
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) {
    throw Error(ErrorCode::kInvalidArgument, "noise_sd must be a non-negative number");
  }
  double min_gap = std::numeric_limits<double>::infinity();
  for (const auto& m : modes) {
    if (!(m.peak > base_reward) || !std::isfinite(m.peak)) {
      throw Error(ErrorCode::kInvalidArgument, "every mode peak must exceed base_reward");
    }
    min_gap = std::min(min_gap, m.peak - base_reward);
    if (space) space->check(m.combo);
  }
  if (!modes.empty() && !(noise_sd < min_gap / 4.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "noise_sd must be below (min peak - base_reward) / 4 for modes to be detectable");
  }
}

std::size_t l1_distance(const ActionCombo& a, const ActionCombo& b) {
  if (a.indices.size() != b.indices.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "l1_distance: combos differ in rank");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.indices.size(); ++i) {
    d += a.indices[i] > b.indices[i] ? a.indices[i] - b.indices[i] : b.indices[i] - a.indices[i];
  }
  return d;
}

double planted_mean(const PlantedLandscape& landscape, const ActionCombo& action) {
  double value = landscape.base_reward;
  for (const auto& m : landscape.modes) {
    if (l1_distance(action, m.combo) <= m.radius) value = std::max(value, m.peak);
  }
  return value;
}

double synthetic_reward(const PlantedLandscape& landscape, const ActionCombo& action, Rng& rng) {
  const double mean = planted_mean(landscape, action);
  if (landscape.noise_sd == 0.0) return mean;
  std::normal_distribution<double> noise(0.0, landscape.noise_sd);
  return mean + noise(rng);
}

nlohmann::json to_json(const PlantedLandscape& landscape) {
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& m : landscape.modes) {
    modes.push_back({{"combo", to_json(m.combo)}, {"peak", m.peak}, {"radius", m.radius}});
  }
  return {{"base_reward", landscape.base_reward},
          {"modes", modes},
          {"noise_sd", landscape.noise_sd}};
}

PlantedLandscape planted_landscape_from_json(const nlohmann::json& j) {
  try {
    PlantedLandscape out;
    out.base_reward = j.at("base_reward").get<double>();
    out.noise_sd = j.value("noise_sd", 0.0);
    for (const auto& m : j.at("modes")) {
      out.modes.push_back({combo_from_json(m.at("combo")), m.at("peak").get<double>(),
                           m.value("radius", std::size_t{0})});
    }
    out.validate();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("landscape: ") + e.what());
  }
}

SyntheticBackend::SyntheticBackend(PlantedLandscape landscape, std::uint64_t seed)
    : landscape_(std::move(landscape)), rng_(derive_seed(seed, "reward")) {
  landscape_.validate();
}

RewardOutcome SyntheticBackend::evaluate(const RewardQuery& query) {
  return {synthetic_reward(landscape_, query.combo, rng_), std::nullopt, "ok"};
}

nlohmann::json SyntheticBackend::fingerprint() const {
  return {{"kind", "synthetic"}, {"landscape", to_json(landscape_)}};
}

Environment::Environment(EnvConfig config, std::shared_ptr<RewardBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)),
      rng_(derive_seed(config_.seed, "env")) {
  if (config_.templates.empty()) {
    throw Error(ErrorCode::kEmptyTemplateSet, "environment needs at least one template");
  }
  if (config_.episode_length == 0) {
    throw Error(ErrorCode::kInvalidArgument, "episode_length must be >= 1");
  }
  if (!backend_) throw Error(ErrorCode::kInvalidArgument, "environment needs a reward backend");
  for (const auto& t : config_.templates) validate_template(t, config_.space);
}

Observation Environment::make_observation(std::size_t template_index) const {
  Observation obs;
  obs.template_index = template_index;
  obs.template_id = config_.templates.at(template_index).id;
  obs.encoding = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config_.templates.size()));
  obs.encoding[static_cast<Eigen::Index>(template_index)] = 1.0;
  return obs;
}

Observation Environment::sample_observation() {
  std::uniform_int_distribution<std::size_t> pick(0, config_.templates.size() - 1);
  return make_observation(pick(rng_));
}

Observation Environment::reset() {
  if (started_) ++episode_;
  started_ = true;
  step_in_episode_ = 0;
  current_ = sample_observation();
  return current_;
}

StepResult Environment::step(std::size_t flat_action) {
  return step(combo_from_flat(flat_action, config_.space));
}

StepResult Environment::step(const ActionCombo& action) {
  config_.space.check(action);
  if (!started_ || step_in_episode_ >= config_.episode_length) reset();

  const auto& tmpl = config_.templates[current_.template_index];
  StepResult result;
  result.template_index = current_.template_index;
  result.rendered_prompt = render_prompt(tmpl, action, config_.space);
  const std::uint64_t sample_seed = derive_seed(config_.seed ^ global_step_, "sample");
  RewardOutcome outcome =
      backend_->evaluate(RewardQuery{tmpl, action, result.rendered_prompt, sample_seed});
  if (outcome.reward && !std::isfinite(*outcome.reward)) {
    outcome.reward.reset();
    outcome.status = "non_finite";
  }
  ++global_step_;
  ++step_in_episode_;
  result.reward = outcome.reward;
  result.artifact_ref = std::move(outcome.artifact_ref);
  result.status = std::move(outcome.status);
  result.episode = episode_;
  result.step = step_in_episode_;
  result.done = step_in_episode_ == config_.episode_length;
  current_ = sample_observation();
  result.observation = current_;
  return result;
}

}  // namespace failscape
