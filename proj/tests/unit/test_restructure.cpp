#include <gtest/gtest.h>

#include <random>
#include <set>

#include "failscape/errors.hpp"
#include "failscape/restructure.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::ScriptedTransport;
using failscape::testing::simple_templates;
using failscape::testing::small_space;
using failscape::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kIo;
}

PreferenceSelection select(std::vector<ActionCombo> combos) {
  PreferenceSelection s;
  s.combos = std::move(combos);
  s.selector = "tester";
  return s;
}

Transition tr(std::size_t action, double reward) {
  Transition t;
  t.action = action;
  t.reward = reward;
  t.template_id = "t0";
  t.prompt = "p";
  return t;
}

std::vector<GenderLabel> labels(std::size_t m, std::size_t f, std::size_t a) {
  std::vector<GenderLabel> out(m, GenderLabel::kMale);
  out.insert(out.end(), f, GenderLabel::kFemale);
  out.insert(out.end(), a, GenderLabel::kAmbiguous);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Selection and mitigation spec

TEST(Selection, Validation) {
  const ConceptSpace space = small_space(3, 3, 3);
  EXPECT_NO_THROW(validate_selection(select({ActionCombo{{1, 1, 1}}}), space));
  EXPECT_EQ(code_of([&] { validate_selection(select({}), space); }), ErrorCode::kEmptySelection);
  EXPECT_EQ(code_of([&] { validate_selection(select({ActionCombo{{3, 0, 0}}}), space); }),
            ErrorCode::kInvalidSelection);
  EXPECT_EQ(code_of([&] {
              validate_selection(select({ActionCombo{{0, 0, 0}}, ActionCombo{{0, 0, 0}}}), space);
            }),
            ErrorCode::kInvalidSelection);
  std::vector<ActionCombo> five;
  for (std::size_t i = 0; i < 5; ++i) five.push_back(combo_from_flat(i, space));
  EXPECT_EQ(code_of([&] { validate_selection(select(five), space); }), ErrorCode::kInvalidSelection);
  EXPECT_NO_THROW(validate_selection(select(five), space, 5));
  const PreferenceSelection s = select({ActionCombo{{2, 1, 0}}});
  EXPECT_EQ(preference_selection_from_json(to_json(s)), s);
}

TEST(Mitigation, OneComboTimesEveryTemplate) {
  const ConceptSpace space = small_space(3, 3, 3);
  const auto templates = simple_templates(21);
  const auto spec = build_mitigation_spec(select({ActionCombo{{2, 1, 0}}}), space, templates);
  ASSERT_EQ(spec.prompts.size(), 21u);
  EXPECT_EQ(spec.target_samples, 21u);
  for (std::size_t i = 0; i < 21; ++i) {
    EXPECT_EQ(spec.prompts[i].template_id, templates[i].id);
    EXPECT_EQ(spec.prompts[i].prompt, render_prompt(templates[i], ActionCombo{{2, 1, 0}}, space));
    EXPECT_EQ(spec.prompts[i].flat, 21u);
  }
  EXPECT_EQ(mitigation_spec_from_json(to_json(spec)), spec);
}

TEST(Mitigation, EqualGenderSplitsTheTarget) {
  const ConceptSpace space = small_space(2, 2, 2);
  MitigationOptions opts;
  opts.equal_gender = true;
  opts.target_samples = 40;
  const auto spec =
      build_mitigation_spec(select({ActionCombo{{0, 1, 0}}}), space, simple_templates(3), opts);
  EXPECT_EQ(spec.target_samples, 40u);
  EXPECT_EQ(spec.balance.at("equal_gender").at("male"), 20);
  EXPECT_EQ(spec.balance.at("equal_gender").at("female"), 20);
  opts.target_samples = 41;
  EXPECT_EQ(code_of([&] {
              build_mitigation_spec(select({ActionCombo{{0, 1, 0}}}), space, simple_templates(3), opts);
            }),
            ErrorCode::kInvalidArgument);
}

TEST(Mitigation, DeduplicationMatchesNestedLoops) {
  const ConceptSpace space = small_space(3, 3, 3);
  auto templates = simple_templates(4);
  templates.push_back({"dup-of-t1", templates[1].text});
  templates.push_back({"dup-of-t3", templates[3].text});
  const PreferenceSelection sel =
      select({ActionCombo{{0, 0, 0}}, ActionCombo{{1, 2, 0}}, ActionCombo{{2, 2, 2}}});
  const auto spec = build_mitigation_spec(sel, space, templates);

  // Oracle: template-major nested loops, keep a prompt only if no earlier
  // kept prompt has the same text.
  std::vector<std::pair<std::string, std::string>> want;  // (template id, prompt)
  for (const auto& t : templates) {
    for (const auto& c : sel.combos) {
      const std::string p = render_prompt(t, c, space);
      bool seen = false;
      for (const auto& w : want) seen = seen || w.second == p;
      if (!seen) want.emplace_back(t.id, p);
    }
  }
  // Order may differ by loop nesting; compare as sets and sizes.
  ASSERT_EQ(spec.prompts.size(), want.size());
  std::set<std::pair<std::string, std::string>> got_set, want_set(want.begin(), want.end());
  for (const auto& p : spec.prompts) got_set.insert({p.template_id, p.prompt});
  EXPECT_EQ(got_set, want_set);
  EXPECT_EQ(spec.prompts.size(), 12u);
}

// ---------------------------------------------------------------------------
// Hook

TEST(Hook, ParseEndpointLine) {
  EXPECT_EQ(parse_endpoint_line("log\nENDPOINT=a\nmore\nENDPOINT=b\n"), "b");
  EXPECT_FALSE(parse_endpoint_line("no endpoint here").has_value());
}

TEST(Hook, CommandEchoesTheEndpoint) {
  TempDir dir;
  const auto spec = dir / "spec.json";
  write_file_atomic(spec, "{}");
  HookConfig hook;
  hook.command = {"sh", "-c", "echo training on \"$1\"; echo ENDPOINT=http://tuned:8000", "sh", "{spec}"};
  const HookResult r = invoke_finetune_hook(spec, hook);
  EXPECT_EQ(r.endpoint, "http://tuned:8000");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.stdout_text.find(spec.string()), std::string::npos);

  // Without "{spec}" the path is appended as the last argument.
  HookConfig appended;
  appended.command = {"sh", "-c", "echo ENDPOINT=\"$0\""};
  EXPECT_EQ(invoke_finetune_hook(spec, appended).endpoint, spec.string());
}

TEST(Hook, FailureCarriesStderr) {
  TempDir dir;
  const auto spec = dir / "spec.json";
  write_file_atomic(spec, "{}");
  HookConfig hook;
  hook.command = {"sh", "-c", "echo out of GPU memory >&2; exit 1"};
  try {
    invoke_finetune_hook(spec, hook);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kHookFailed);
    EXPECT_NE(std::string(e.what()).find("out of GPU memory"), std::string::npos);
  }
  HookConfig silent;
  silent.command = {"sh", "-c", "echo done"};
  EXPECT_EQ(code_of([&] { invoke_finetune_hook(spec, silent); }), ErrorCode::kHookFailed);
  HookConfig slow;
  slow.command = {"sh", "-c", "sleep 5"};
  slow.timeout_s = 0.3;
  EXPECT_EQ(code_of([&] { invoke_finetune_hook(spec, slow); }), ErrorCode::kHookTimeout);
}

TEST(Hook, UrlFormPostsTheSpec) {
  TempDir dir;
  const auto spec = dir / "spec.json";
  write_file_atomic(spec, R"({"x": 1})");
  auto t = std::make_shared<ScriptedTransport>();
  t->push_reply(200, R"({"endpoint": "http://tuned"})");
  t->push_reply(200, "queued\nENDPOINT=http://tuned-2\n", "text/plain");
  HookConfig hook;
  hook.url = "http://hooks.invalid/finetune";
  EXPECT_EQ(invoke_finetune_hook(spec, hook, t).endpoint, "http://tuned");
  EXPECT_EQ(invoke_finetune_hook(spec, hook, t).endpoint, "http://tuned-2");
  const auto body = nlohmann::json::parse(t->requests()[0].body);
  EXPECT_EQ(body.at("spec").at("x"), 1);
  EXPECT_EQ(body.at("spec_path"), spec.string());
  EXPECT_THROW(hook_config_from_json({{"command", {"x"}}, {"url", "http://y"}}), Error);
}

TEST(Hook, SuppressModesRemovesCoveringModes) {
  PlantedLandscape l;
  l.modes.push_back({ActionCombo{{0, 0, 0}}, 9.0, 1});
  l.modes.push_back({ActionCombo{{3, 3, 3}}, 8.0, 0});
  const auto out = suppress_modes(l, {ActionCombo{{1, 0, 0}}});
  ASSERT_EQ(out.modes.size(), 1u);
  EXPECT_EQ(out.modes[0].combo, (ActionCombo{{3, 3, 3}}));
}

// ---------------------------------------------------------------------------
// Reduction verdict

TEST(Reduction, SimpleCases) {
  const std::vector<double> before = {5, 5}, after = {3, 3};
  const auto v = reduced_failures_check(before, after);
  EXPECT_TRUE(v.reduced);
  EXPECT_DOUBLE_EQ(v.difference, -2.0);
  EXPECT_DOUBLE_EQ(v.ci_low, -2.0);
  EXPECT_DOUBLE_EQ(v.ci_high, -2.0);
  const auto same = reduced_failures_check(before, before);
  EXPECT_FALSE(same.reduced);
  EXPECT_EQ(same.difference, 0.0);
  EXPECT_EQ(code_of([&] { reduced_failures_check({}, after); }), ErrorCode::kEmptySamples);
  EXPECT_EQ(reduction_verdict_from_json(to_json(v)), v);
}

TEST(Reduction, Antisymmetric) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> a(5.0, 2.0), b(4.0, 1.0);
  std::vector<double> x(50), y(70);
  for (auto& v : x) v = a(rng);
  for (auto& v : y) v = b(rng);
  const auto fwd = reduced_failures_check(x, y, 2000, 9);
  const auto rev = reduced_failures_check(y, x, 2000, 9);
  EXPECT_NEAR(fwd.difference, -rev.difference, 1e-12);
  EXPECT_NE(fwd.reduced, rev.reduced);
  EXPECT_NEAR(fwd.ci_low, -rev.ci_high, 0.25);
  EXPECT_NEAR(fwd.ci_high, -rev.ci_low, 0.25);
}

TEST(Reduction, IntervalExcludesZeroForARealShift) {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> before(6.0, 1.0), after(4.0, 1.0);
  int excluded = 0;
  const int repeats = 100;
  for (int r = 0; r < repeats; ++r) {
    std::vector<double> x(200), y(200);
    for (auto& v : x) v = before(rng);
    for (auto& v : y) v = after(rng);
    const auto verdict = reduced_failures_check(x, y, 1000, static_cast<std::uint64_t>(r));
    excluded += verdict.ci_high < 0.0;
  }
  EXPECT_GE(excluded, 95);
}

TEST(Reduction, IntervalCoversTheTrueDifference) {
  // Coverage of the bootstrap interval for a known difference of -1.
  std::mt19937_64 rng(321);
  std::normal_distribution<double> before(5.0, 1.0), after(4.0, 1.0);
  int covered = 0;
  const int repeats = 200;
  for (int r = 0; r < repeats; ++r) {
    std::vector<double> x(100), y(100);
    for (auto& v : x) v = before(rng);
    for (auto& v : y) v = after(rng);
    const auto verdict = reduced_failures_check(x, y, 1000, static_cast<std::uint64_t>(r));
    covered += verdict.ci_low <= -1.0 && -1.0 <= verdict.ci_high;
  }
  EXPECT_GE(covered, 176);  // nominal 190, lower 3-sigma bound
}

// ---------------------------------------------------------------------------
// Bias ratio

TEST(Bias, Ratios) {
  const auto b = bias_ratio(labels(33, 20, 7));
  ASSERT_TRUE(b.ratio);
  EXPECT_NEAR(*b.ratio, 1.65, 1e-12);
  EXPECT_NEAR(b.ambiguous_rate, 7.0 / 60.0, 1e-12);
  EXPECT_EQ(*bias_ratio(labels(10, 10, 0)).ratio, 1.0);
  const auto undefined = bias_ratio(labels(0, 0, 5));
  EXPECT_TRUE(undefined.undefined);
  EXPECT_FALSE(undefined.ratio);
  EXPECT_EQ(undefined.ambiguous_rate, 1.0);
  const auto inf = bias_ratio(labels(3, 0, 0));
  EXPECT_TRUE(inf.infinite);
  EXPECT_FALSE(inf.ratio);
  EXPECT_EQ(code_of([] { bias_ratio({}); }), ErrorCode::kEmptySamples);
}

// ---------------------------------------------------------------------------
// Shift report

TEST(Shift, IdenticalRunsHaveZeroDistance) {
  const ConceptSpace space = small_space(3, 3, 3);
  std::vector<Transition> ts;
  for (std::size_t i = 0; i < 200; ++i) ts.push_back(tr(i % 27, i % 27 == 13 ? 9.0 : 1.0 + (i % 3)));
  ShiftInputs in;
  in.before_space = &space;
  in.after_space = &space;
  in.before = ts;
  in.after = ts;
  const auto r = shift_report(in, select({ActionCombo{{1, 1, 1}}}), "a", "b");
  EXPECT_NEAR(r.shift_distance, 0.0, 1e-9);
  EXPECT_FALSE(r.verdict.reduced);
  EXPECT_EQ(r.sample_source, "transitions");
  EXPECT_EQ(r.before_argmax, r.after_argmax);
  EXPECT_EQ(shift_report_from_json(to_json(r)), r);
}

TEST(Shift, MovedModeIsReducedAndDistant) {
  const ConceptSpace space = small_space(3, 3, 3);
  std::vector<Transition> before, after;
  for (std::size_t i = 0; i < 270; ++i) {
    const std::size_t a = i % 27;
    before.push_back(tr(a, a == 0 ? 9.0 : 1.0 + 0.01 * static_cast<double>(i % 5)));
    after.push_back(tr(a, a == 26 ? 9.0 : 1.0 + 0.01 * static_cast<double>(i % 5)));
  }
  ShiftInputs in;
  in.before_space = &space;
  in.after_space = &space;
  in.before = before;
  in.after = after;
  const auto r = shift_report(in, select({ActionCombo{{0, 0, 0}}}));
  EXPECT_TRUE(r.verdict.reduced);
  EXPECT_NEAR(r.verdict.difference, -8.0 + 0.0, 0.05);
  EXPECT_GT(r.shift_distance, 0.0);
  ASSERT_EQ(r.combos.size(), 1u);
  EXPECT_EQ(r.combos[0].before_visits, 10u);

  in.before_samples = std::vector<double>{5.0, 5.0};
  in.after_samples = std::vector<double>{3.0, 3.0};
  const auto probed = shift_report(in, select({ActionCombo{{0, 0, 0}}}));
  EXPECT_EQ(probed.sample_source, "probe");
  EXPECT_DOUBLE_EQ(probed.verdict.difference, -2.0);
}

TEST(Shift, SpacesMustMatch) {
  const ConceptSpace a = small_space(3, 3, 3), b = small_space(3, 3, 2);
  const std::vector<Transition> ts = {tr(0, 1.0)};
  ShiftInputs in;
  in.before_space = &a;
  in.after_space = &b;
  in.before = ts;
  in.after = ts;
  EXPECT_EQ(code_of([&] { shift_report(in, select({ActionCombo{{0, 0, 0}}})); }), ErrorCode::kSpaceMismatch);
}
