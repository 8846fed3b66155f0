#pragma once

// Finite-difference checks of the analytic gradients, shared by the unit and
// acceptance tests. Each instance draws a random network and batch and returns
// the relative error between backprop and central differences.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "failscape/agents.hpp"
#include "failscape/mlp.hpp"
#include "oracles.hpp"

namespace failscape::testing {

enum class GradCase { kMlp, kDqn, kPpo, kA2c };

inline std::vector<double> as_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
inline Eigen::VectorXd as_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Default initialization zeroes the biases, which can put a ReLU
// pre-activation exactly on its kink (e.g. a sample whose whole previous layer
// is dead); finite differences are meaningless there, so draw them too.
inline Mlp random_mlp(std::vector<std::size_t> sizes, Activation act, Rng& rng) {
  Mlp net(std::move(sizes), act, rng);
  Eigen::VectorXd p = net.parameters();
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += jitter(rng);
  net.set_parameters(p);
  return net;
}

inline double grad_check_instance(GradCase kind, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 5);
  const std::size_t in = dim(rng), hidden = dim(rng) + 2, out = dim(rng), batch = dim(rng) + 3;
  const Activation act = seed % 2 == 0 ? Activation::kTanh : Activation::kRelu;
  std::uniform_int_distribution<std::size_t> pick_action(0, out - 1);
  const auto n = static_cast<Eigen::Index>(batch);

  if (kind == GradCase::kMlp) {
    const Mlp net = random_mlp({in, hidden, hidden, out}, act, rng);
    const Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(in), n, rng);
    const Eigen::MatrixXd up = random_matrix(static_cast<Eigen::Index>(out), n, rng);
    ForwardTape tape;
    net.forward(x, tape);
    const auto analytic = as_std(net.backward(tape, up).flatten());
    const auto fd = numerical_gradient(
        [&](const std::vector<double>& p) {
          Mlp m = net;
          m.set_parameters(as_eigen(p));
          return (m.forward(x).array() * up.array()).sum();
        },
        as_std(net.parameters()));
    return relative_error(analytic, fd);
  }

  if (kind == GradCase::kDqn) {
    const Mlp q = random_mlp({in, hidden, out}, act, rng);
    const Mlp target = random_mlp({in, hidden, out}, act, rng);
    DqnBatch b;
    b.observations = random_matrix(static_cast<Eigen::Index>(in), n, rng);
    b.next_observations = random_matrix(static_cast<Eigen::Index>(in), n, rng);
    b.rewards = random_matrix(n, 1, rng).col(0);
    b.dones = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; i += 3) b.dones[i] = 1.0;
    for (std::size_t i = 0; i < batch; ++i) b.actions.push_back(pick_action(rng));
    const double gamma = 0.9;
    const auto analytic = as_std(dqn_loss(q, target, b, gamma).grads.flatten());
    const auto fd = numerical_gradient(
        [&](const std::vector<double>& p) {
          Mlp m = q;
          m.set_parameters(as_eigen(p));
          return dqn_loss(m, target, b, gamma).loss;
        },
        as_std(q.parameters()));
    return relative_error(analytic, fd);
  }

  const Mlp policy = random_mlp({in, hidden, out}, act, rng);
  const Mlp value = random_mlp({in, hidden, 1}, act, rng);
  AgentConfig cfg;
  cfg.entropy_coef = 0.05;
  cfg.value_coef = 0.5;
  cfg.clip_ratio = 0.2;
  PolicyBatch b;
  b.observations = random_matrix(static_cast<Eigen::Index>(in), n, rng);
  for (std::size_t i = 0; i < batch; ++i) b.actions.push_back(pick_action(rng));
  b.returns = random_matrix(n, 1, rng).col(0);
  b.advantages = random_matrix(n, 1, rng).col(0);
  // Old log-probs put the ratios at fixed distances from the clip boundaries
  // so central differences never straddle a kink.
  const Eigen::MatrixXd logits = policy.forward(b.observations);
  const double ratios[] = {0.5, 0.9, 1.0, 1.1, 1.5};
  b.old_log_probs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = static_cast<Eigen::Index>(b.actions[static_cast<std::size_t>(i)]);
    b.old_log_probs[i] = log_softmax(logits.col(i))[a] - std::log(ratios[i % 5]);
  }
  auto loss_of = [&](const Mlp& p, const Mlp& v) {
    return kind == GradCase::kPpo ? ppo_loss(p, v, b, cfg) : a2c_loss(p, v, b, cfg);
  };
  const PolicyLoss base = loss_of(policy, value);
  auto policy_analytic = as_std(base.policy_grads.flatten());
  auto value_analytic = as_std(base.value_grads.flatten());
  // Policy parameters: gradient of the full loss.
  const auto policy_fd = numerical_gradient(
      [&](const std::vector<double>& p) {
        Mlp m = policy;
        m.set_parameters(as_eigen(p));
        return loss_of(m, value).total;
      },
      as_std(policy.parameters()));
  // Value parameters: only the value term (A2C's advantages stop the
  // gradient into the baseline).
  const auto value_fd = numerical_gradient(
      [&](const std::vector<double>& p) {
        Mlp m = value;
        m.set_parameters(as_eigen(p));
        return cfg.value_coef * loss_of(policy, m).value_loss;
      },
      as_std(value.parameters()));
  return std::max(relative_error(policy_analytic, policy_fd), relative_error(value_analytic, value_fd));
}

}  // namespace failscape::testing
