#include "failscape/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "failscape/errors.hpp"

namespace failscape {

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kDqn: return "dqn";
    case AgentKind::kPpo: return "ppo";
    case AgentKind::kA2c: return "a2c";
  }
  return "unknown";
}

AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "dqn") return AgentKind::kDqn;
  if (s == "ppo") return AgentKind::kPpo;
  if (s == "a2c") return AgentKind::kA2c;
  throw Error(ErrorCode::kInvalidArgument, "unknown agent kind '" + s + "' (dqn|ppo|a2c)");
}

double EpsilonSchedule::value(std::size_t step, std::size_t total_steps) const {
  const double horizon = decay_steps > 0
                             ? static_cast<double>(decay_steps)
                             : decay_fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0) return end;
  const double frac = std::min(1.0, static_cast<double>(step) / horizon);
  return start + (end - start) * frac;
}

void AgentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(epsilon.start >= 0.0 && epsilon.start <= 1.0 && epsilon.end >= 0.0 && epsilon.end <= 1.0)) {
    fail("epsilon schedule must stay within [0, 1]");
  }
  if (!(epsilon.decay_fraction >= 0.0)) fail("epsilon decay_fraction must be non-negative");
  if (!(clip_ratio > 0.0)) fail("clip_ratio must be positive");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
  if (target_sync == 0 || replay_capacity == 0 || batch_size == 0 || rollout == 0 || epochs == 0 ||
      minibatch == 0 || n_step == 0 || a2c_segments == 0 || train_every == 0) {
    fail("sizes and periods must be positive");
  }
  if (batch_size > replay_capacity) fail("batch_size exceeds replay_capacity");
  for (auto h : hidden) {
    if (h == 0) fail("hidden layer sizes must be positive");
  }
  if (entropy_coef < 0.0 || value_coef < 0.0 || max_grad_norm < 0.0) {
    fail("coefficients must be non-negative");
  }
}

nlohmann::json to_json(const AgentConfig& c) {
  return {{"gamma", c.gamma},
          {"learning_rate", c.learning_rate},
          {"hidden", c.hidden},
          {"activation", to_string(c.activation)},
          {"max_grad_norm", c.max_grad_norm},
          {"epsilon",
           {{"start", c.epsilon.start},
            {"end", c.epsilon.end},
            {"decay_fraction", c.epsilon.decay_fraction},
            {"decay_steps", c.epsilon.decay_steps}}},
          {"target_sync", c.target_sync},
          {"replay_capacity", c.replay_capacity},
          {"batch_size", c.batch_size},
          {"learning_starts", c.learning_starts},
          {"train_every", c.train_every},
          {"clip_ratio", c.clip_ratio},
          {"rollout", c.rollout},
          {"epochs", c.epochs},
          {"minibatch", c.minibatch},
          {"gae_lambda", c.gae_lambda},
          {"normalize_advantages", c.normalize_advantages},
          {"n_step", c.n_step},
          {"a2c_segments", c.a2c_segments},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"seed", c.seed}};
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) {
      throw Error(ErrorCode::kInvalidArgument, "unknown agent config field '" + key + "'");
    }
  }
  try {
    c.gamma = j.value("gamma", c.gamma);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.hidden = j.value("hidden", c.hidden);
    c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    if (j.contains("epsilon")) {
      const auto& e = j.at("epsilon");
      c.epsilon.start = e.value("start", c.epsilon.start);
      c.epsilon.end = e.value("end", c.epsilon.end);
      c.epsilon.decay_fraction = e.value("decay_fraction", c.epsilon.decay_fraction);
      c.epsilon.decay_steps = e.value("decay_steps", c.epsilon.decay_steps);
    }
    c.target_sync = j.value("target_sync", c.target_sync);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_starts = j.value("learning_starts", c.learning_starts);
    c.train_every = j.value("train_every", c.train_every);
    c.clip_ratio = j.value("clip_ratio", c.clip_ratio);
    c.rollout = j.value("rollout", c.rollout);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
    c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
    c.n_step = j.value("n_step", c.n_step);
    c.a2c_segments = j.value("a2c_segments", c.a2c_segments);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("agent config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

VisitHistogram::VisitHistogram(std::size_t action_count)
    : counts_(action_count, 0), reward_sums_(action_count, 0.0) {}

void VisitHistogram::record(std::size_t action, std::optional<double> reward) {
  if (action >= counts_.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "histogram action index out of range");
  }
  ++counts_[action];
  ++total_;
  if (reward) {
    reward_sums_[action] += *reward;
  } else {
    ++null_rewards_;
  }
}

double VisitHistogram::reward_sum() const {
  return std::accumulate(reward_sums_.begin(), reward_sums_.end(), 0.0);
}

std::size_t VisitHistogram::max_count() const {
  return counts_.empty() ? 0 : *std::max_element(counts_.begin(), counts_.end());
}

std::size_t VisitHistogram::argmax() const {
  if (counts_.empty()) throw Error(ErrorCode::kEmptyHistogram, "histogram has no actions");
  return static_cast<std::size_t>(std::max_element(counts_.begin(), counts_.end()) - counts_.begin());
}

double entropy_of_counts(std::span<const std::size_t> counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw Error(ErrorCode::kEmptyHistogram, "entropy of an empty histogram");
  double h = 0.0;
  const double n = static_cast<double>(total);
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double histogram_entropy(const VisitHistogram& histogram) {
  return entropy_of_counts(histogram.counts());
}

nlohmann::json to_json(const VisitHistogram& h) {
  return {{"counts", h.counts()},
          {"reward_sums", h.reward_sums()},
          {"total", h.total()},
          {"null_rewards", h.null_rewards()}};
}

// ---------------------------------------------------------------------------

std::size_t argmax_lowest(const Eigen::VectorXd& values) {
  if (values.size() == 0) throw Error(ErrorCode::kShapeMismatch, "argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

std::size_t select_action_dqn(const Mlp& qnet, const Eigen::VectorXd& observation, double epsilon,
                              Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must lie in [0, 1]");
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, qnet.output_size() - 1);
    return pick(rng);
  }
  return argmax_lowest(qnet.forward(observation));
}

PolicySample select_action_policy(const Mlp& policy, const Eigen::VectorXd& observation, Rng& rng) {
  const Eigen::VectorXd logp = log_softmax(policy.forward(observation));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const double u = coin(rng);
  double cumulative = 0.0;
  Eigen::Index chosen = logp.size() - 1;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    cumulative += std::exp(logp[i]);
    if (u < cumulative) {
      chosen = i;
      break;
    }
  }
  // Guard against rounding leaving u past the last partial sum on a zero-probability tail.
  while (chosen > 0 && std::exp(logp[chosen]) == 0.0) --chosen;
  return {static_cast<std::size_t>(chosen), logp[chosen]};
}

// ---------------------------------------------------------------------------

DqnLoss dqn_loss(const Mlp& qnet, const Mlp& target, const DqnBatch& batch, double gamma) {
  const auto n = static_cast<Eigen::Index>(batch.actions.size());
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "dqn_loss: empty batch");
  if (batch.observations.cols() != n || batch.next_observations.cols() != n ||
      batch.rewards.size() != n || batch.dones.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "dqn_loss: batch fields disagree in length");
  }
  ForwardTape tape;
  const Eigen::MatrixXd q = qnet.forward(batch.observations, tape);
  const Eigen::RowVectorXd next_max = target.forward(batch.next_observations).colwise().maxCoeff();

  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(q.rows(), n);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto a = static_cast<Eigen::Index>(batch.actions[static_cast<std::size_t>(b)]);
    const double y = batch.rewards[b] + gamma * (1.0 - batch.dones[b]) * next_max[b];
    const double td = y - q(a, b);
    loss += 0.5 * td * td;
    upstream(a, b) = -td / static_cast<double>(n);
  }
  return {loss / static_cast<double>(n), qnet.backward(tape, upstream)};
}

double dqn_update(Mlp& qnet, const Mlp& target, Adam& optimizer, const DqnBatch& batch,
                  const AgentConfig& config) {
  DqnLoss result = dqn_loss(qnet, target, batch, config.gamma);
  clip_gradients(result.grads, config.max_grad_norm);
  optimizer.step(qnet, result.grads);
  return result.loss;
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

struct PolicyForward {
  ForwardTape policy_tape;
  ForwardTape value_tape;
  Eigen::MatrixXd probs;
  Eigen::MatrixXd log_probs;
  Eigen::RowVectorXd values;
};

PolicyForward policy_forward(const Mlp& policy, const Mlp& value, const PolicyBatch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.actions.size());
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "policy loss: empty batch");
  if (batch.observations.cols() != n || batch.returns.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "policy loss: batch fields disagree in length");
  }
  PolicyForward f;
  const Eigen::MatrixXd logits = policy.forward(batch.observations, f.policy_tape);
  f.log_probs.resize(logits.rows(), n);
  for (Eigen::Index b = 0; b < n; ++b) f.log_probs.col(b) = log_softmax(logits.col(b));
  f.probs = f.log_probs.array().exp().matrix();
  f.values = value.forward(batch.observations, f.value_tape).row(0);
  return f;
}

// Adds the entropy-bonus and value-loss terms shared by PPO and A2C.
void finish_policy_loss(const Mlp& policy, const Mlp& value, const PolicyBatch& batch,
                        const AgentConfig& config, PolicyForward& f, Eigen::MatrixXd& upstream,
                        PolicyLoss& out) {
  const auto n = static_cast<Eigen::Index>(batch.actions.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  double entropy = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    // 0 * log 0 -> 0
    const Eigen::ArrayXd plogp = (f.probs.col(b).array() > 0.0)
                                     .select(f.probs.col(b).array() * f.log_probs.col(b).array(), 0.0);
    const double h = -plogp.sum();
    entropy += h;
    // dH/dz_j = -p_j (log p_j + H)
    const Eigen::ArrayXd dh = (f.probs.col(b).array() > 0.0)
                                  .select(-f.probs.col(b).array() * (f.log_probs.col(b).array() + h), 0.0);
    upstream.col(b).array() -= config.entropy_coef * inv_n * dh;
  }
  out.entropy = entropy * inv_n;

  Eigen::MatrixXd value_upstream(1, n);
  double vloss = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const double err = f.values[b] - batch.returns[b];
    vloss += err * err;
    value_upstream(0, b) = config.value_coef * 2.0 * err * inv_n;
  }
  out.value_loss = vloss * inv_n;
  out.total = -out.surrogate + config.value_coef * out.value_loss - config.entropy_coef * out.entropy;
  out.policy_grads = policy.backward(f.policy_tape, upstream);
  out.value_grads = value.backward(f.value_tape, value_upstream);
}

}  // namespace

PolicyLoss ppo_loss(const Mlp& policy, const Mlp& value, const PolicyBatch& batch,
                    const AgentConfig& config) {
  PolicyForward f = policy_forward(policy, value, batch);
  const auto n = static_cast<Eigen::Index>(batch.actions.size());
  if (batch.old_log_probs.size() != n || batch.advantages.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "ppo_loss: batch fields disagree in length");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  PolicyLoss out;
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(f.probs.rows(), n);
  double surrogate = 0.0;
  std::size_t clipped = 0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto a = static_cast<Eigen::Index>(batch.actions[static_cast<std::size_t>(b)]);
    const double ratio = std::exp(f.log_probs(a, b) - batch.old_log_probs[b]);
    const double adv = batch.advantages[b];
    const double unclipped_term = ratio * adv;
    const double clipped_term = std::clamp(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio) * adv;
    surrogate += std::min(unclipped_term, clipped_term);
    if (std::abs(ratio - 1.0) > config.clip_ratio) ++clipped;
    if (unclipped_term <= clipped_term) {
      // d(ratio * A)/dz = ratio * A * (onehot(a) - p)
      const double g = -inv_n * ratio * adv;
      upstream.col(b) -= g * f.probs.col(b);
      upstream(a, b) += g;
    }
  }
  out.surrogate = surrogate * inv_n;
  out.clip_fraction = static_cast<double>(clipped) * inv_n;
  finish_policy_loss(policy, value, batch, config, f, upstream, out);
  return out;
}

PolicyLoss a2c_loss(const Mlp& policy, const Mlp& value, const PolicyBatch& batch,
                    const AgentConfig& config) {
  PolicyForward f = policy_forward(policy, value, batch);
  const auto n = static_cast<Eigen::Index>(batch.actions.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  PolicyLoss out;
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(f.probs.rows(), n);
  double surrogate = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto a = static_cast<Eigen::Index>(batch.actions[static_cast<std::size_t>(b)]);
    const double adv = batch.returns[b] - f.values[b];
    surrogate += f.log_probs(a, b) * adv;
    const double g = -inv_n * adv;
    upstream.col(b) -= g * f.probs.col(b);
    upstream(a, b) += g;
  }
  out.surrogate = surrogate * inv_n;
  finish_policy_loss(policy, value, batch, config, f, upstream, out);
  return out;
}

namespace {

PolicyBatch slice(const PolicyBatch& full, std::span<const std::size_t> idx) {
  PolicyBatch out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.observations.resize(full.observations.rows(), n);
  out.old_log_probs.resize(n);
  out.advantages.resize(n);
  out.returns.resize(n);
  out.actions.resize(idx.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]);
    out.observations.col(k) = full.observations.col(i);
    out.actions[static_cast<std::size_t>(k)] = full.actions[static_cast<std::size_t>(i)];
    out.old_log_probs[k] = full.old_log_probs[i];
    out.advantages[k] = full.advantages[i];
    out.returns[k] = full.returns[i];
  }
  return out;
}

void apply(Mlp& policy, Mlp& value, Adam& popt, Adam& vopt, PolicyLoss& loss,
           const AgentConfig& config) {
  clip_gradients(loss.policy_grads, config.max_grad_norm);
  clip_gradients(loss.value_grads, config.max_grad_norm);
  popt.step(policy, loss.policy_grads);
  vopt.step(value, loss.value_grads);
}

}  // namespace

PolicyLoss ppo_update(Mlp& policy, Mlp& value, Adam& policy_opt, Adam& value_opt,
                      const PolicyBatch& rollout, const AgentConfig& config, Rng& rng) {
  const std::size_t n = rollout.actions.size();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "ppo_update: empty rollout");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  PolicyLoss last;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.minibatch) {
      const std::size_t end = std::min(n, start + config.minibatch);
      const PolicyBatch mb = slice(rollout, std::span(order).subspan(start, end - start));
      last = ppo_loss(policy, value, mb, config);
      apply(policy, value, policy_opt, value_opt, last, config);
    }
  }
  return last;
}

PolicyLoss a2c_update(Mlp& policy, Mlp& value, Adam& policy_opt, Adam& value_opt,
                      const PolicyBatch& rollout, const AgentConfig& config) {
  PolicyLoss loss = a2c_loss(policy, value, rollout, config);
  apply(policy, value, policy_opt, value_opt, loss, config);
  return loss;
}

void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const double> next_values, std::span<const bool> dones,
                 std::span<const bool> continues, double gamma, double lambda,
                 Eigen::VectorXd& advantages, Eigen::VectorXd& returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || dones.size() != n || continues.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "compute_gae: inputs disagree in length");
  }
  advantages.resize(static_cast<Eigen::Index>(n));
  returns.resize(static_cast<Eigen::Index>(n));
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double bootstrap = dones[t] ? 0.0 : next_values[t];
    const double delta = rewards[t] + gamma * bootstrap - values[t];
    const bool chain = continues[t] && !dones[t];
    const double adv = delta + (chain ? gamma * lambda * next_adv : 0.0);
    advantages[static_cast<Eigen::Index>(t)] = adv;
    returns[static_cast<Eigen::Index>(t)] = adv + values[t];
    next_adv = adv;
  }
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden,
                                     std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

Eigen::MatrixXd stack(const std::vector<Eigen::VectorXd>& cols) {
  Eigen::MatrixXd m(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = cols[i];
  return m;
}

class DqnAgent final : public Agent {
 public:
  DqnAgent(std::size_t obs_size, std::size_t actions, const AgentConfig& config,
           std::size_t total_steps)
      : config_(config), total_steps_(total_steps), rng_(make_rng(config.seed, "agent")),
        buffer_rng_(make_rng(config.seed, "buffer")), buffer_(config.replay_capacity) {
    Rng init = make_rng(config.seed, "init");
    qnet_ = Mlp(layer_sizes(obs_size, config.hidden, actions), config.activation, init);
    target_ = qnet_;
    opt_ = Adam(qnet_, config.learning_rate);
    learning_starts_ = std::max(config.batch_size, config.learning_starts);
  }

  AgentKind kind() const override { return AgentKind::kDqn; }

  std::size_t act(const Eigen::VectorXd& observation) override {
    const double eps = config_.epsilon.value(steps_, total_steps_);
    ++steps_;
    return select_action_dqn(qnet_, observation, eps, rng_);
  }

  void observe(const Eigen::VectorXd& observation, std::size_t action, std::optional<double> reward,
               const Eigen::VectorXd& next_observation, bool done) override {
    if (!reward) return;
    buffer_.add({observation, action, *reward, next_observation, done});
    ++observed_;
    if (buffer_.size() < learning_starts_ || observed_ % config_.train_every != 0) return;

    const auto idx = buffer_.sample_indices(config_.batch_size, buffer_rng_);
    const auto n = static_cast<Eigen::Index>(idx.size());
    DqnBatch batch;
    batch.observations.resize(observation.size(), n);
    batch.next_observations.resize(observation.size(), n);
    batch.rewards.resize(n);
    batch.dones.resize(n);
    batch.actions.resize(idx.size());
    for (Eigen::Index k = 0; k < n; ++k) {
      const Experience& e = buffer_.at(idx[static_cast<std::size_t>(k)]);
      batch.observations.col(k) = e.observation;
      batch.next_observations.col(k) = e.next_observation;
      batch.rewards[k] = e.reward;
      batch.dones[k] = e.done ? 1.0 : 0.0;
      batch.actions[static_cast<std::size_t>(k)] = e.action;
    }
    dqn_update(qnet_, target_, opt_, batch, config_);
    ++updates_;
    if (updates_ % config_.target_sync == 0) target_ = qnet_;
  }

  Eigen::VectorXd action_preferences(const Eigen::VectorXd& observation) const override {
    return qnet_.forward(observation);
  }

  nlohmann::json checkpoint() const override {
    return {{"format", "failscape.agent"},
            {"version", 1},
            {"kind", "dqn"},
            {"config", to_json(config_)},
            {"updates", updates_},
            {"steps", steps_},
            {"networks", {{"q", to_json(qnet_)}, {"target", to_json(target_)}}}};
  }

  void load_checkpoint(const nlohmann::json& j) override {
    if (j.at("kind") != "dqn") throw Error(ErrorCode::kInvalidArgument, "checkpoint is not a DQN agent");
    qnet_ = mlp_from_json(j.at("networks").at("q"));
    target_ = mlp_from_json(j.at("networks").at("target"));
    updates_ = j.at("updates").get<std::size_t>();
    steps_ = j.at("steps").get<std::size_t>();
    opt_ = Adam(qnet_, config_.learning_rate);
  }

 private:
  AgentConfig config_;
  std::size_t total_steps_;
  Rng rng_;
  Rng buffer_rng_;
  ReplayBuffer buffer_;
  Mlp qnet_, target_;
  Adam opt_;
  std::size_t learning_starts_ = 0;
  std::size_t steps_ = 0;
  std::size_t observed_ = 0;
};

// Shared by PPO and A2C: separate policy and value networks.
class ActorCriticBase : public Agent {
 public:
  ActorCriticBase(std::size_t obs_size, std::size_t actions, const AgentConfig& config)
      : config_(config), rng_(make_rng(config.seed, "agent")) {
    Rng init = make_rng(config.seed, "init");
    policy_ = Mlp(layer_sizes(obs_size, config.hidden, actions), config.activation, init, 0.01);
    value_ = Mlp(layer_sizes(obs_size, config.hidden, 1), config.activation, init);
    policy_opt_ = Adam(policy_, config.learning_rate);
    value_opt_ = Adam(value_, config.learning_rate);
  }

  std::size_t act(const Eigen::VectorXd& observation) override {
    return select_action_policy(policy_, observation, rng_).action;
  }

  Eigen::VectorXd action_preferences(const Eigen::VectorXd& observation) const override {
    return softmax_columns(policy_.forward(Eigen::MatrixXd(observation))).col(0);
  }

  nlohmann::json checkpoint() const override {
    return {{"format", "failscape.agent"},
            {"version", 1},
            {"kind", to_string(kind())},
            {"config", to_json(config_)},
            {"updates", updates_},
            {"networks", {{"policy", to_json(policy_)}, {"value", to_json(value_)}}}};
  }

  void load_checkpoint(const nlohmann::json& j) override {
    if (j.at("kind") != to_string(kind())) {
      throw Error(ErrorCode::kInvalidArgument, "checkpoint agent kind mismatch");
    }
    policy_ = mlp_from_json(j.at("networks").at("policy"));
    value_ = mlp_from_json(j.at("networks").at("value"));
    updates_ = j.at("updates").get<std::size_t>();
    policy_opt_ = Adam(policy_, config_.learning_rate);
    value_opt_ = Adam(value_, config_.learning_rate);
  }

 protected:
  struct Step {
    Eigen::VectorXd observation;
    std::size_t action;
    double reward;
    Eigen::VectorXd next_observation;
    bool done;
    std::size_t index;  // global step counter, detects gaps from skipped steps
  };

  AgentConfig config_;
  Rng rng_;
  Mlp policy_, value_;
  Adam policy_opt_, value_opt_;
  std::vector<Step> steps_;
  std::size_t step_counter_ = 0;
};

class PpoAgent final : public ActorCriticBase {
 public:
  using ActorCriticBase::ActorCriticBase;

  AgentKind kind() const override { return AgentKind::kPpo; }

  void observe(const Eigen::VectorXd& observation, std::size_t action, std::optional<double> reward,
               const Eigen::VectorXd& next_observation, bool done) override {
    const std::size_t index = step_counter_++;
    if (!reward) return;
    steps_.push_back({observation, action, *reward, next_observation, done, index});
    if (steps_.size() >= config_.rollout) update();
  }

 private:
  void update() {
    const std::size_t n = steps_.size();
    std::vector<Eigen::VectorXd> obs, next;
    std::vector<double> rewards(n);
    std::vector<char> dones_c(n), cont_c(n);
    PolicyBatch batch;
    batch.actions.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      obs.push_back(steps_[t].observation);
      next.push_back(steps_[t].next_observation);
      rewards[t] = steps_[t].reward;
      dones_c[t] = steps_[t].done;
      cont_c[t] = t + 1 < n && steps_[t + 1].index == steps_[t].index + 1;
      batch.actions[t] = steps_[t].action;
    }
    batch.observations = stack(obs);
    const Eigen::MatrixXd next_m = stack(next);
    const Eigen::MatrixXd logits = policy_.forward(batch.observations);
    batch.old_log_probs.resize(static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < n; ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      batch.old_log_probs[col] =
          log_softmax(logits.col(col))[static_cast<Eigen::Index>(batch.actions[t])];
    }
    const Eigen::RowVectorXd v = value_.forward(batch.observations).row(0);
    const Eigen::RowVectorXd nv = value_.forward(next_m).row(0);
    std::vector<double> values(v.data(), v.data() + v.size());
    std::vector<double> next_values(nv.data(), nv.data() + nv.size());
    std::vector<bool> dones(dones_c.begin(), dones_c.end()), cont(cont_c.begin(), cont_c.end());
    std::unique_ptr<bool[]> d(new bool[n]), c(new bool[n]);
    for (std::size_t t = 0; t < n; ++t) {
      d[t] = dones[t];
      c[t] = cont[t];
    }
    compute_gae(rewards, values, next_values, std::span<const bool>(d.get(), n),
                std::span<const bool>(c.get(), n), config_.gamma, config_.gae_lambda,
                batch.advantages, batch.returns);
    if (config_.normalize_advantages && n > 1) {
      const double mean = batch.advantages.mean();
      const double sd = std::sqrt((batch.advantages.array() - mean).square().sum() /
                                  static_cast<double>(n));
      batch.advantages = ((batch.advantages.array() - mean) / (sd + 1e-8)).matrix();
    }
    ppo_update(policy_, value_, policy_opt_, value_opt_, batch, config_, rng_);
    ++updates_;
    steps_.clear();
  }
};

class A2cAgent final : public ActorCriticBase {
 public:
  using ActorCriticBase::ActorCriticBase;

  AgentKind kind() const override { return AgentKind::kA2c; }

  void observe(const Eigen::VectorXd& observation, std::size_t action, std::optional<double> reward,
               const Eigen::VectorXd& next_observation, bool done) override {
    const std::size_t index = step_counter_++;
    if (!reward) {
      // The segment cannot bootstrap across a gap.
      if (!steps_.empty()) close_segment();
      return;
    }
    steps_.push_back({observation, action, *reward, next_observation, done, index});
    if (done || steps_.size() >= config_.n_step) close_segment();
  }

 private:
  // n-step returns of the open segment, bootstrapped from V(next) unless the
  // episode ended. The critic is unchanged until the batch is applied, as in
  // synchronous workers.
  void close_segment() {
    const Step& last = steps_.back();
    double ret = last.done ? 0.0 : value_.forward(last.next_observation)[0];
    std::vector<double> returns(steps_.size());
    for (std::size_t t = steps_.size(); t-- > 0;) {
      ret = steps_[t].reward + config_.gamma * (steps_[t].done ? 0.0 : ret);
      returns[t] = ret;
    }
    for (std::size_t t = 0; t < steps_.size(); ++t) {
      pending_obs_.push_back(steps_[t].observation);
      pending_actions_.push_back(steps_[t].action);
      pending_returns_.push_back(returns[t]);
    }
    steps_.clear();
    if (++segments_ >= config_.a2c_segments) update();
  }

  void update() {
    PolicyBatch batch;
    batch.observations = stack(pending_obs_);
    batch.actions = pending_actions_;
    batch.returns = Eigen::Map<const Eigen::VectorXd>(pending_returns_.data(),
                                                      static_cast<Eigen::Index>(pending_returns_.size()));
    a2c_update(policy_, value_, policy_opt_, value_opt_, batch, config_);
    ++updates_;
    pending_obs_.clear();
    pending_actions_.clear();
    pending_returns_.clear();
    segments_ = 0;
  }

  std::vector<Eigen::VectorXd> pending_obs_;
  std::vector<std::size_t> pending_actions_;
  std::vector<double> pending_returns_;
  std::size_t segments_ = 0;
};

}  // namespace

std::unique_ptr<Agent> make_agent(AgentKind kind, std::size_t observation_size,
                                  std::size_t action_count, const AgentConfig& config,
                                  std::size_t total_steps) {
  config.validate();
  if (observation_size == 0 || action_count == 0) {
    throw Error(ErrorCode::kShapeMismatch, "agent needs non-empty observation and action spaces");
  }
  switch (kind) {
    case AgentKind::kDqn:
      return std::make_unique<DqnAgent>(observation_size, action_count, config, total_steps);
    case AgentKind::kPpo:
      return std::make_unique<PpoAgent>(observation_size, action_count, config);
    case AgentKind::kA2c:
      return std::make_unique<A2cAgent>(observation_size, action_count, config);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown agent kind");
}

}  // namespace failscape
