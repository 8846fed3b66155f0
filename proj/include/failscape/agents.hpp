#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "failscape/mlp.hpp"
#include "failscape/replay_buffer.hpp"
#include "failscape/rng.hpp"

namespace failscape {

enum class AgentKind { kDqn, kPpo, kA2c };

std::string to_string(AgentKind kind);
AgentKind agent_kind_from_string(const std::string& s);

// Linear decay from `start` to `end` over `decay_steps` steps, then flat.
// decay_steps == 0 means decay_fraction * total_steps.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  double decay_fraction = 0.5;
  std::size_t decay_steps = 0;

  double value(std::size_t step, std::size_t total_steps) const;
};

struct AgentConfig {
  double gamma = 0.99;
  double learning_rate = 3e-4;
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::kTanh;
  double max_grad_norm = 0.0;  // 0 disables clipping

  // DQN
  EpsilonSchedule epsilon;
  std::size_t target_sync = 500;  // in gradient updates
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 64;
  std::size_t learning_starts = 0;  // 0 means batch_size
  std::size_t train_every = 1;

  // PPO
  double clip_ratio = 0.2;
  std::size_t rollout = 1024;
  std::size_t epochs = 4;
  std::size_t minibatch = 64;
  double gae_lambda = 0.95;
  bool normalize_advantages = true;

  // A2C
  std::size_t n_step = 5;
  // Segments per update: the synchronous workers of A2C. Templates are
  // resampled independently every step, so consecutive segments of one
  // environment are equivalent to segments from parallel copies.
  std::size_t a2c_segments = 8;

  // PPO and A2C
  double entropy_coef = 0.01;
  double value_coef = 0.5;

  std::uint64_t seed = 0;

  // Throws Error(kInvalidArgument) on out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const AgentConfig& config);
// Missing fields keep their defaults; unknown fields are rejected.
AgentConfig agent_config_from_json(const nlohmann::json& j);

// Visit counts and reward sums per flat action. Null-reward visits count
// as visits but add nothing to the reward sum.
class VisitHistogram {
 public:
  explicit VisitHistogram(std::size_t action_count = 0);

  void record(std::size_t action, std::optional<double> reward);

  std::size_t action_count() const { return counts_.size(); }
  const std::vector<std::size_t>& counts() const { return counts_; }
  const std::vector<double>& reward_sums() const { return reward_sums_; }
  std::size_t total() const { return total_; }
  std::size_t null_rewards() const { return null_rewards_; }
  double reward_sum() const;
  std::size_t max_count() const;
  // Lowest index among the most visited actions.
  std::size_t argmax() const;

  bool operator==(const VisitHistogram&) const = default;

 private:
  std::vector<std::size_t> counts_;
  std::vector<double> reward_sums_;
  std::size_t total_ = 0;
  std::size_t null_rewards_ = 0;
};

// Shannon entropy (nats) of the normalized counts. Throws kEmptyHistogram
// when every count is zero.
double entropy_of_counts(std::span<const std::size_t> counts);
double histogram_entropy(const VisitHistogram& histogram);

nlohmann::json to_json(const VisitHistogram& histogram);

// ---------------------------------------------------------------------------
// Action selection

// Lowest index among the maxima.
std::size_t argmax_lowest(const Eigen::VectorXd& values);

// Epsilon-greedy: a uniform action with probability epsilon, else the
// greedy action under Q(obs, .).
std::size_t select_action_dqn(const Mlp& qnet, const Eigen::VectorXd& observation, double epsilon,
                              Rng& rng);

struct PolicySample {
  std::size_t action = 0;
  double log_prob = 0.0;
};

// Samples from softmax(policy(obs)).
PolicySample select_action_policy(const Mlp& policy, const Eigen::VectorXd& observation, Rng& rng);

// ---------------------------------------------------------------------------
// DQN

struct DqnBatch {
  Eigen::MatrixXd observations;       // obs_dim x B
  Eigen::MatrixXd next_observations;  // obs_dim x B
  std::vector<std::size_t> actions;
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;  // 1.0 terminal, 0.0 otherwise
};

struct DqnLoss {
  double loss = 0.0;
  MlpGradients grads;  // w.r.t. qnet; the target network is held fixed
};

// Mean of 0.5 * (r + gamma * (1 - done) * max_a' Q_target(s', a') - Q(s, a))^2.
DqnLoss dqn_loss(const Mlp& qnet, const Mlp& target, const DqnBatch& batch, double gamma);

// One optimizer step on the TD loss; returns the loss before the step.
double dqn_update(Mlp& qnet, const Mlp& target, Adam& optimizer, const DqnBatch& batch,
                  const AgentConfig& config);

// ---------------------------------------------------------------------------
// Policy-gradient losses (PPO, A2C)

struct PolicyBatch {
  Eigen::MatrixXd observations;  // obs_dim x B
  std::vector<std::size_t> actions;
  Eigen::VectorXd old_log_probs;  // PPO only
  Eigen::VectorXd advantages;     // PPO only; A2C derives them from returns
  Eigen::VectorXd returns;
};

struct PolicyLoss {
  double total = 0.0;      // the minimized loss
  double surrogate = 0.0;  // PPO: mean clipped objective; A2C: mean log-prob * advantage
  double value_loss = 0.0;  // mean squared error of the value head
  double entropy = 0.0;     // mean policy entropy
  double clip_fraction = 0.0;
  MlpGradients policy_grads;
  MlpGradients value_grads;
};

// min(ratio * A, clip(ratio, 1 - c, 1 + c) * A).
double clipped_surrogate(double ratio, double advantage, double clip);

// total = -surrogate + value_coef * value_loss - entropy_coef * entropy.
PolicyLoss ppo_loss(const Mlp& policy, const Mlp& value, const PolicyBatch& batch,
                    const AgentConfig& config);

// Advantages are returns - V(s) with V treated as a constant in the policy term.
// total = -mean(log pi(a|s) * A) + value_coef * value_loss - entropy_coef * entropy.
PolicyLoss a2c_loss(const Mlp& policy, const Mlp& value, const PolicyBatch& batch,
                    const AgentConfig& config);

// `epochs` passes of shuffled minibatches over the rollout. Returns the loss
// of the last minibatch.
PolicyLoss ppo_update(Mlp& policy, Mlp& value, Adam& policy_opt, Adam& value_opt,
                      const PolicyBatch& rollout, const AgentConfig& config, Rng& rng);

// A single gradient step on the whole segment.
PolicyLoss a2c_update(Mlp& policy, Mlp& value, Adam& policy_opt, Adam& value_opt,
                      const PolicyBatch& rollout, const AgentConfig& config);

// Generalized advantage estimation. `continues[t]` is false when step t+1 is
// not the successor of step t (episode end or a skipped step); bootstrapping
// then stops at t and uses next_values[t] only if not done.
void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const double> next_values, std::span<const bool> dones,
                 std::span<const bool> continues, double gamma, double lambda,
                 Eigen::VectorXd& advantages, Eigen::VectorXd& returns);

// ---------------------------------------------------------------------------
// Agents

class Agent {
 public:
  virtual ~Agent() = default;

  virtual AgentKind kind() const = 0;
  virtual std::size_t act(const Eigen::VectorXd& observation) = 0;
  // Outcome of the most recent act(). A null reward is not learned from.
  virtual void observe(const Eigen::VectorXd& observation, std::size_t action,
                       std::optional<double> reward, const Eigen::VectorXd& next_observation,
                       bool done) = 0;
  // Q-values (DQN) or action probabilities (PPO, A2C).
  virtual Eigen::VectorXd action_preferences(const Eigen::VectorXd& observation) const = 0;

  virtual nlohmann::json checkpoint() const = 0;
  virtual void load_checkpoint(const nlohmann::json& j) = 0;

  std::size_t updates() const { return updates_; }

 protected:
  std::size_t updates_ = 0;
};

std::unique_ptr<Agent> make_agent(AgentKind kind, std::size_t observation_size,
                                  std::size_t action_count, const AgentConfig& config,
                                  std::size_t total_steps);

}  // namespace failscape
