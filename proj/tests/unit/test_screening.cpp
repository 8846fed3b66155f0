#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "failscape/errors.hpp"
#include "failscape/screening.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::simple_templates;
using failscape::testing::small_space;

namespace {

std::size_t state_index(const PromptTemplate& t) { return std::stoul(t.id.substr(1)); }

ScreeningRewardFn hashed(const ConceptSpace& space, std::uint64_t salt) {
  return [&space, salt](const ActionCombo& c, const PromptTemplate& t) -> std::optional<double> {
    return static_cast<double>(
        failscape::testing::hashed_reward(salt, flat_index(c, space), state_index(t)));
  };
}

void expect_matches_oracle(const ScreeningResult& got, const failscape::testing::BruteForceScreening& want,
                           const ConceptSpace& space) {
  for (std::size_t d = 0; d < 3; ++d) {
    const auto& dim = got.report.dimensions[d];
    ASSERT_EQ(dim.reward_sums.size(), want.sums[d].size());
    for (std::size_t v = 0; v < want.sums[d].size(); ++v) {
      EXPECT_EQ(dim.reward_sums[v], static_cast<double>(want.sums[d][v]));
    }
    std::vector<std::string> kept;
    for (auto v : want.kept[d]) kept.push_back(space.dimensions()[d].values[v]);
    EXPECT_EQ(dim.kept, kept);
    EXPECT_EQ(got.pruned.dimensions()[d].values, kept);
    EXPECT_EQ(dim.fallback_to_max, static_cast<bool>(want.fallback[d]));
  }
}

}  // namespace

TEST(Screening, MatchesBruteForceOnRandomSpaces) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(1, 5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n0 = size(rng), n1 = size(rng), n2 = size(rng), ns = size(rng);
    const ConceptSpace space = small_space(n0, n1, n2);
    const auto states = simple_templates(ns);
    for (bool global : {false, true}) {
      ScreeningOptions opts;
      opts.mode = global ? ScreeningMode::kGlobalMean : ScreeningMode::kPerDimension;
      const auto got = screen_actions(space, states, hashed(space, trial), opts);
      const auto want = failscape::testing::brute_force_screening(
          n0, n1, n2, ns, global,
          [&](std::size_t f, std::size_t s) { return failscape::testing::hashed_reward(trial, f, s); });
      expect_matches_oracle(got, want, space);
      EXPECT_EQ(got.report.evaluations, n0 * n1 * n2 * ns);
    }
  }
}

TEST(Screening, DominantValueIsTheOnlyOneKept) {
  const ConceptSpace space = small_space(3, 2, 2);
  const auto states = simple_templates(2);
  auto reward = [](const ActionCombo& c, const PromptTemplate&) -> std::optional<double> {
    return c.indices[0] == 1 ? 5.0 : 1.0;
  };
  const auto r = screen_actions(space, states, reward);
  EXPECT_EQ(r.pruned.dimensions()[0].values, (std::vector<std::string>{"attribute1"}));
  // Flat dimensions tie at their mean and are kept whole.
  EXPECT_EQ(r.pruned.dimensions()[1].values.size(), 2u);
  EXPECT_EQ(r.pruned.dimensions()[2].values.size(), 2u);
}

TEST(Screening, GlobalMeanFallsBackToMaximum) {
  // Dimension sizes 1, 4, 4: the single attribute value collects every reward,
  // so the four-valued dimensions all fall below the global mean.
  const ConceptSpace space = small_space(1, 4, 4);
  const auto states = simple_templates(1);
  auto reward = [](const ActionCombo& c, const PromptTemplate&) -> std::optional<double> {
    return 1.0 + 0.25 * static_cast<double>(c.indices[1] == 2);
  };
  ScreeningOptions opts;
  opts.mode = ScreeningMode::kGlobalMean;
  const auto r = screen_actions(space, states, reward, opts);
  EXPECT_FALSE(r.report.dimensions[0].fallback_to_max);
  EXPECT_TRUE(r.report.dimensions[1].fallback_to_max);
  EXPECT_EQ(r.pruned.dimensions()[1].values, (std::vector<std::string>{"profession2"}));
  EXPECT_TRUE(r.report.dimensions[2].fallback_to_max);
  EXPECT_EQ(r.pruned.dimensions()[2].values.size(), 4u);
  ASSERT_TRUE(r.report.global_mean);
}

TEST(Screening, StateOrderDoesNotMatter) {
  const ConceptSpace space = small_space(4, 3, 5);
  auto states = simple_templates(5);
  const auto a = screen_actions(space, states, hashed(space, 9));
  std::reverse(states.begin(), states.end());
  const auto b = screen_actions(space, states, hashed(space, 9));
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(a.report.dimensions[d].kept, b.report.dimensions[d].kept);
    EXPECT_EQ(a.report.dimensions[d].reward_sums, b.report.dimensions[d].reward_sums);
  }
}

TEST(Screening, WorkersDoNotChangeTheReport) {
  const ConceptSpace space = small_space(5, 5, 5);
  const auto states = simple_templates(3);
  ScreeningOptions one;
  ScreeningOptions four;
  four.workers = 4;
  const auto a = screen_actions(space, states, hashed(space, 3), one);
  const auto b = screen_actions(space, states, hashed(space, 3), four);
  EXPECT_EQ(to_json(a.report), to_json(b.report));
}

TEST(Screening, NullRewardsAreSkipped) {
  const ConceptSpace space = small_space(2, 2, 2);
  const auto states = simple_templates(1);
  auto reward = [&](const ActionCombo& c, const PromptTemplate&) -> std::optional<double> {
    if (c.indices[2] == 1) return std::nullopt;
    return 1.0;
  };
  const auto r = screen_actions(space, states, reward);
  EXPECT_EQ(r.report.null_rewards, 4u);
  EXPECT_EQ(r.report.evaluations, 4u);
  EXPECT_EQ(r.report.dimensions[2].reward_sums, (std::vector<double>{4.0, 0.0}));
}

TEST(Screening, BudgetSamplesWithoutReplacement) {
  const ConceptSpace space = small_space(5, 5, 5);
  const auto states = simple_templates(2);
  std::set<std::size_t> seen;
  auto reward = [&](const ActionCombo& c, const PromptTemplate& t) -> std::optional<double> {
    if (t.id == "t0") {
      EXPECT_TRUE(seen.insert(flat_index(c, space)).second);
    }
    return 1.0;
  };
  ScreeningOptions opts;
  opts.budget = 30;
  opts.seed = 5;
  const auto r = screen_actions(space, states, reward, opts);
  EXPECT_EQ(r.report.evaluated_combinations, 30u);
  EXPECT_EQ(seen.size(), 30u);
  EXPECT_EQ(r.report.evaluations, 60u);
  opts.budget = 0;
  EXPECT_THROW(screen_actions(space, states, reward, opts), Error);
}

TEST(Screening, EmptyStatesRejected) {
  const ConceptSpace space = small_space(2, 2, 2);
  try {
    screen_actions(space, {}, hashed(space, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTemplateSet);
  }
}

TEST(Screening, ReportJson) {
  const ConceptSpace space = small_space(2, 2, 2);
  const auto states = simple_templates(1);
  const auto r = screen_actions(space, states, hashed(space, 1));
  const auto j = to_json(r.report);
  EXPECT_EQ(j.at("mode"), "per-dimension");
  EXPECT_EQ(j.at("dimensions").size(), 3u);
  EXPECT_EQ(screening_mode_from_string(to_string(ScreeningMode::kGlobalMean)), ScreeningMode::kGlobalMean);
}
