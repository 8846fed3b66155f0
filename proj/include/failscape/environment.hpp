#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "failscape/concept_space.hpp"
#include "failscape/rng.hpp"

namespace failscape {

// ---------------------------------------------------------------------------
// Failure criterion

struct FailureVerdict {
  double delta = 0.0;
  double epsilon = 0.0;
  bool failed = false;
};

// delta = human_score - model_score; failed iff delta > epsilon.
// Throws kNonFiniteScore for NaN/inf scores, kInvalidArgument for epsilon < 0.
FailureVerdict failure_check(double model_score, double human_score, double epsilon);

// ---------------------------------------------------------------------------
// Synthetic oracle with planted failure modes

struct PlantedMode {
  ActionCombo combo;
  double peak = 0.0;
  std::size_t radius = 0;  // L1 ball on index coordinates
};

struct PlantedLandscape {
  double base_reward = 1.0;
  std::vector<PlantedMode> modes;
  double noise_sd = 0.0;

  // peak > base_reward for each mode, noise_sd >= 0 and
  // noise_sd < (min peak - base_reward) / 4. When `space` is given, every mode
  // combo must belong to it. Throws Error(kInvalidArgument).
  void validate(const ConceptSpace* space = nullptr) const;
};

std::size_t l1_distance(const ActionCombo& a, const ActionCombo& b);

// Noise-free reward: the highest peak whose ball covers the action, else base.
double planted_mean(const PlantedLandscape& landscape, const ActionCombo& action);

// planted_mean plus N(0, noise_sd). No draw is taken when noise_sd == 0.
double synthetic_reward(const PlantedLandscape& landscape, const ActionCombo& action, Rng& rng);

nlohmann::json to_json(const PlantedLandscape& landscape);
PlantedLandscape planted_landscape_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Reward backends

struct RewardQuery {
  const PromptTemplate& prompt_template;
  const ActionCombo& combo;
  const std::string& prompt;
  std::uint64_t sample_seed = 0;
};

struct RewardOutcome {
  std::optional<double> reward;
  std::optional<std::string> artifact_ref;
  std::string status = "ok";
};

class RewardBackend {
 public:
  virtual ~RewardBackend() = default;
  virtual RewardOutcome evaluate(const RewardQuery& query) = 0;
  // Identifies the backend configuration in run manifests.
  virtual nlohmann::json fingerprint() const = 0;
};

class SyntheticBackend final : public RewardBackend {
 public:
  SyntheticBackend(PlantedLandscape landscape, std::uint64_t seed);

  RewardOutcome evaluate(const RewardQuery& query) override;
  nlohmann::json fingerprint() const override;

  const PlantedLandscape& landscape() const { return landscape_; }

 private:
  PlantedLandscape landscape_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Environment

struct EnvConfig {
  ConceptSpace space;
  std::vector<PromptTemplate> templates;
  std::size_t episode_length = 8;
  std::uint64_t seed = 0;
};

// One-hot over templates.
struct Observation {
  std::size_t template_index = 0;
  std::string template_id;
  Eigen::VectorXd encoding;
};

struct StepResult {
  Observation observation;  // next observation
  std::optional<double> reward;
  bool done = false;
  std::string rendered_prompt;
  std::optional<std::string> artifact_ref;
  std::string status = "ok";
  std::size_t episode = 0;
  std::size_t step = 0;  // 1-based step within the episode that just ran
  std::size_t template_index = 0;  // template the action was applied to
};

// The auditing MDP: the state is a prompt template, an action fills every
// placeholder, and the backend scores the rendered prompt. Templates are
// resampled uniformly after every step; episodes have fixed length.
class Environment {
 public:
  // Throws kEmptyTemplateSet when there are no templates and
  // kInvalidArgument when episode_length == 0.
  Environment(EnvConfig config, std::shared_ptr<RewardBackend> backend);

  Observation reset();
  StepResult step(const ActionCombo& action);
  StepResult step(std::size_t flat_action);

  const EnvConfig& config() const { return config_; }
  const ConceptSpace& space() const { return config_.space; }
  std::size_t observation_size() const { return config_.templates.size(); }
  std::size_t action_count() const { return config_.space.size(); }
  const Observation& observation() const { return current_; }
  std::size_t episode() const { return episode_; }
  RewardBackend& backend() { return *backend_; }

  Observation make_observation(std::size_t template_index) const;

 private:
  Observation sample_observation();

  EnvConfig config_;
  std::shared_ptr<RewardBackend> backend_;
  Rng rng_;
  Observation current_;
  std::size_t episode_ = 0;
  std::size_t step_in_episode_ = 0;
  std::uint64_t global_step_ = 0;
  bool started_ = false;
};

}  // namespace failscape
