#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "failscape/environment.hpp"
#include "failscape/errors.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::simple_templates;
using failscape::testing::small_space;

namespace {

// Backend returning a fixed sequence, for threading checks.
class FixedBackend final : public RewardBackend {
 public:
  explicit FixedBackend(std::optional<double> r) : r_(r) {}
  RewardOutcome evaluate(const RewardQuery& q) override {
    last_prompt = q.prompt;
    RewardOutcome out;
    out.reward = r_;
    if (!r_) out.status = "parse_failure";
    return out;
  }
  nlohmann::json fingerprint() const override { return {{"kind", "fixed"}}; }
  std::string last_prompt;

 private:
  std::optional<double> r_;
};

PlantedLandscape one_mode(double noise) {
  PlantedLandscape l;
  l.base_reward = 1.0;
  l.noise_sd = noise;
  l.modes.push_back({ActionCombo{{1, 1, 1}}, 9.0, 0});
  return l;
}

}  // namespace

TEST(FailureCheck, SweepAgainstThreshold) {
  // Human score 10, epsilon 2: fails exactly when the model scores below 8.
  for (int tenth = 0; tenth <= 100; ++tenth) {
    const double score = tenth / 10.0;
    const FailureVerdict v = failure_check(score, 10.0, 2.0);
    EXPECT_EQ(v.failed, score < 8.0 - 1e-12) << score;
    EXPECT_NEAR(v.delta, 10.0 - score, 1e-12);
  }
  EXPECT_FALSE(failure_check(8.0, 10.0, 2.0).failed);
}

TEST(FailureCheck, RejectsBadInputs) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(failure_check(nan, 1.0, 0.0), Error);
  EXPECT_THROW(failure_check(1.0, inf, 0.0), Error);
  try {
    failure_check(1.0, 1.0, -1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  try {
    failure_check(nan, 1.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteScore);
  }
}

TEST(Landscape, NoiseFreeMeanInsideAndOutsideBalls) {
  PlantedLandscape l;
  l.base_reward = 1.0;
  l.modes.push_back({ActionCombo{{2, 2, 2}}, 9.0, 1});
  EXPECT_EQ(planted_mean(l, ActionCombo{{2, 2, 2}}), 9.0);
  EXPECT_EQ(planted_mean(l, ActionCombo{{2, 3, 2}}), 9.0);
  EXPECT_EQ(planted_mean(l, ActionCombo{{2, 3, 3}}), 1.0);
  EXPECT_EQ(l1_distance(ActionCombo{{0, 0, 0}}, ActionCombo{{1, 2, 3}}), 6u);
}

TEST(Landscape, OverlappingPeaksTakeTheHighest) {
  PlantedLandscape l;
  l.base_reward = 1.0;
  l.modes.push_back({ActionCombo{{1, 1, 1}}, 5.0, 2});
  l.modes.push_back({ActionCombo{{1, 1, 2}}, 9.0, 2});
  EXPECT_EQ(planted_mean(l, ActionCombo{{1, 1, 1}}), 9.0);
  EXPECT_EQ(planted_mean(l, ActionCombo{{1, 0, 0}}), 5.0);  // only inside the first ball
}

TEST(Landscape, NoiseMeanConverges) {
  PlantedLandscape l = one_mode(0.1);
  Rng rng(7);
  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) sum += synthetic_reward(l, ActionCombo{{1, 1, 1}}, rng);
  EXPECT_NEAR(sum / 1000.0, 9.0, 0.01);
}

TEST(Landscape, ZeroNoiseIsExact) {
  PlantedLandscape l = one_mode(0.0);
  Rng rng(1);
  const Rng before = rng;
  EXPECT_EQ(synthetic_reward(l, ActionCombo{{0, 0, 0}}, rng), 1.0);
  EXPECT_TRUE(rng == before);  // no draw
}

TEST(Landscape, Validation) {
  PlantedLandscape l = one_mode(0.0);
  EXPECT_NO_THROW(l.validate());
  PlantedLandscape low = l;
  low.modes[0].peak = 1.0;
  EXPECT_THROW(low.validate(), Error);
  PlantedLandscape noisy = l;
  noisy.noise_sd = 2.0;  // (9 - 1) / 4 = 2 is not strictly below
  EXPECT_THROW(noisy.validate(), Error);
  const ConceptSpace tiny = small_space(1, 1, 1);
  EXPECT_THROW(l.validate(&tiny), Error);
  const PlantedLandscape back = planted_landscape_from_json(to_json(l));
  EXPECT_EQ(back.modes.size(), 1u);
  EXPECT_EQ(back.modes[0].combo, l.modes[0].combo);
  EXPECT_EQ(back.modes[0].peak, 9.0);
}

TEST(Environment, ConstructionErrors) {
  auto backend = std::make_shared<FixedBackend>(1.0);
  try {
    Environment env(EnvConfig{small_space(2, 2, 2), {}, 8, 0}, backend);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTemplateSet);
  }
  try {
    Environment env(EnvConfig{small_space(2, 2, 2), simple_templates(1), 0, 0}, backend);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(Environment, ResetIsUniformOverTemplates) {
  Environment env(EnvConfig{small_space(2, 2, 2), simple_templates(4), 8, 11},
                  std::make_shared<FixedBackend>(1.0));
  std::vector<int> counts(4, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[env.reset().template_index];
  const double expected = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) EXPECT_LE(std::abs(c - expected), 3.0 * sigma) << c;
}

TEST(Environment, ObservationIsOneHot) {
  Environment env(EnvConfig{small_space(2, 2, 2), simple_templates(5), 8, 3},
                  std::make_shared<FixedBackend>(1.0));
  const Observation obs = env.reset();
  EXPECT_EQ(obs.encoding.size(), 5);
  EXPECT_EQ(obs.encoding.sum(), 1.0);
  EXPECT_EQ(obs.encoding[static_cast<Eigen::Index>(obs.template_index)], 1.0);
  EXPECT_EQ(obs.template_id, "t" + std::to_string(obs.template_index));
}

TEST(Environment, EpisodesHaveFixedLength) {
  Environment env(EnvConfig{small_space(2, 2, 2), simple_templates(3), 3, 5},
                  std::make_shared<FixedBackend>(2.5));
  env.reset();
  for (std::size_t ep = 0; ep < 3; ++ep) {
    for (std::size_t s = 1; s <= 3; ++s) {
      const StepResult r = env.step(std::size_t{0});
      EXPECT_EQ(r.episode, ep);
      EXPECT_EQ(r.step, s);
      EXPECT_EQ(r.done, s == 3);
      ASSERT_TRUE(r.reward);
      EXPECT_EQ(*r.reward, 2.5);
    }
  }
}

TEST(Environment, StepRendersTheCurrentTemplate) {
  auto backend = std::make_shared<FixedBackend>(1.0);
  Environment env(EnvConfig{small_space(2, 3, 4), simple_templates(3), 8, 9}, backend);
  const Observation obs = env.reset();
  const StepResult r = env.step(ActionCombo{{1, 2, 3}});
  EXPECT_EQ(r.template_index, obs.template_index);
  const std::string expected = "Template " + std::to_string(obs.template_index) +
                               ": a attribute1 profession2 in a place3";
  EXPECT_EQ(r.rendered_prompt, expected);
  EXPECT_EQ(backend->last_prompt, expected);
  EXPECT_THROW(env.step(ActionCombo{{2, 0, 0}}), Error);
}

TEST(Environment, NullRewardsPassThrough) {
  Environment env(EnvConfig{small_space(2, 2, 2), simple_templates(2), 8, 1},
                  std::make_shared<FixedBackend>(std::nullopt));
  env.reset();
  const StepResult r = env.step(std::size_t{3});
  EXPECT_FALSE(r.reward.has_value());
  EXPECT_EQ(r.status, "parse_failure");
}

TEST(Environment, NonFiniteRewardsBecomeNull) {
  Environment env(EnvConfig{small_space(2, 2, 2), simple_templates(2), 8, 1},
                  std::make_shared<FixedBackend>(std::numeric_limits<double>::infinity()));
  env.reset();
  const StepResult r = env.step(std::size_t{3});
  EXPECT_FALSE(r.reward.has_value());
  EXPECT_EQ(r.status, "non_finite");
}

TEST(Environment, SameSeedSameTrajectory) {
  auto run = [](std::uint64_t seed) {
    Environment env(EnvConfig{small_space(3, 3, 3), simple_templates(4), 4, seed},
                    std::make_shared<SyntheticBackend>(one_mode(0.5), seed));
    env.reset();
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < 50; ++i) {
      const StepResult r = env.step(i % 27);
      out.emplace_back(r.template_index, *r.reward);
    }
    return out;
  };
  EXPECT_EQ(run(4), run(4));
  EXPECT_NE(run(4), run(5));
}
