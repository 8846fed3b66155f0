#include <gtest/gtest.h>

#include "failscape/errors.hpp"
#include "failscape/pipeline.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::chat_reply;
using failscape::testing::ScriptedTransport;
using failscape::testing::simple_templates;
using failscape::testing::small_space;
using failscape::testing::source_path;
using failscape::testing::TempDir;

namespace {

ConceptFile small_concepts() { return ConceptFile{small_space(3, 3, 3), simple_templates(4)}; }

nlohmann::json synthetic(std::size_t a, std::size_t b, std::size_t c, double noise = 0.5) {
  PlantedLandscape l;
  l.base_reward = 1.0;
  l.noise_sd = noise;
  l.modes.push_back({ActionCombo{{a, b, c}}, 9.0, 0});
  return {{"kind", "synthetic"}, {"landscape", to_json(l)}};
}

ExploreOptions explore_options(const std::string& id, std::size_t steps = 600) {
  ExploreOptions o;
  o.agent = AgentKind::kDqn;
  o.steps = steps;
  o.seed = 11;
  o.backend = synthetic(2, 1, 0);
  o.run_id = id;
  return o;
}

// Generator returns bytes derived from the prompt; the judge scores by a
// hash of the request so distinct prompts get distinct scores.
std::shared_ptr<ScriptedTransport> fake_models() {
  return std::make_shared<ScriptedTransport>([](const HttpRequest& r) {
    if (r.base_url == "http://gen.invalid") {
      const auto j = nlohmann::json::parse(r.body);
      const std::string prompt = j.at("prompt");
      return HttpResponse{200, "image/png", "PNG:" + prompt};
    }
    const std::size_t h = std::hash<std::string>{}(r.body);
    return HttpResponse{200, "application/json", chat_reply("{\"score\": " + std::to_string(h % 11) + "}")};
  });
}

nlohmann::json external_backend() {
  return {{"kind", "external"},
          {"generator", {{"base_url", "http://gen.invalid"}, {"model", "img"}, {"backoff_initial_s", 0.0}}},
          {"judge", {{"base_url", "http://judge.invalid"}, {"model", "judge"}, {"backoff_initial_s", 0.0}}}};
}

}  // namespace

TEST(Pipeline, ExploreIsByteIdenticalAcrossRuns) {
  TempDir dir;
  RunStore store(dir.path());
  explore(store, small_concepts(), explore_options("a"));
  explore(store, small_concepts(), explore_options("b"));
  const std::string a = read_file(store.run_dir("a") / "transitions.jsonl");
  EXPECT_EQ(a, read_file(store.run_dir("b") / "transitions.jsonl"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 600);
  EXPECT_EQ(store.load_manifest("a").status, kRunComplete);
  EXPECT_EQ(store.load_manifest("a").details.at("clock"), "logical");
}

TEST(Pipeline, StoredReportsAreReproducibleFromTransitions) {
  TempDir dir;
  RunStore store(dir.path());
  ExploreOptions o = explore_options("r");
  o.summary.regions.push_back({ActionCombo{{2, 1, 0}}, 1});
  explore(store, small_concepts(), o);
  const RunManifest m = store.load_manifest("r");
  const auto ts = store.read_transitions("r");
  SummaryReport rebuilt = build_summary(ts, concepts_of(m).space, summary_options_of(m));
  rebuilt.metadata["run_id"] = "r";  // added when the report is saved
  const SummaryReport stored = summary_report_from_json(store.load_report("r", "summary"));
  EXPECT_EQ(to_json(rebuilt), to_json(stored));
  EXPECT_EQ(summarize(store, "r", false).cells, stored.cells);
  EXPECT_EQ(plot_data(stored), store.load_report("r", "plot"));
}

TEST(Pipeline, ResumeCompletesATornRun) {
  TempDir dir;
  RunStore store(dir.path());
  explore(store, small_concepts(), explore_options("full"));
  explore(store, small_concepts(), explore_options("torn"));
  // Simulate a crash: 250 records acknowledged plus half a line.
  const auto log = store.run_dir("torn") / "transitions.jsonl";
  const std::string full = read_file(log);
  std::size_t cut = 0;
  for (int i = 0; i < 250; ++i) cut = full.find('\n', cut) + 1;
  write_file_atomic(log, full.substr(0, cut + 30));
  RunManifest m = store.load_manifest("torn");
  m.status = kRunRunning;
  store.save_manifest(m);

  resume(store, "torn");
  EXPECT_EQ(read_file(log), full);
  EXPECT_EQ(store.load_manifest("torn").status, kRunComplete);
  const SummaryReport a = summary_report_from_json(store.load_report("torn", "summary"));
  const SummaryReport b = summary_report_from_json(store.load_report("full", "summary"));
  EXPECT_EQ(a.cells, b.cells);
  EXPECT_EQ(a.visit_counts, b.visit_counts);
  EXPECT_THROW(resume(store, "torn"), Error);  // no longer running
}

TEST(Pipeline, ReplayOfAnExternalRunMakesNoNetworkCalls) {
  TempDir dir;
  RunStore store(dir.path());
  auto models = fake_models();
  ExploreOptions o;
  o.agent = AgentKind::kPpo;
  o.steps = 40;
  o.seed = 3;
  o.backend = external_backend();
  o.backend_options.cache_dir = dir / "cache";
  o.backend_options.transport = models;
  o.run_id = "ext";
  const ExploreResult first = explore(store, small_concepts(), o);
  // One generator call per step; identical judge requests hit the cache.
  EXPECT_EQ(first.network_calls, models->calls());
  EXPECT_GT(first.network_calls, 40u);
  EXPECT_EQ(store.load_manifest("ext").details.at("clock"), "wall");
  const auto ts = store.read_transitions("ext");
  ASSERT_EQ(ts.size(), 40u);
  ASSERT_TRUE(ts[0].artifact_ref);
  EXPECT_EQ(store.get_artifact("ext", *ts[0].artifact_ref), "PNG:" + ts[0].prompt);

  const std::size_t calls_before = models->calls();
  BackendOptions replay_opts;
  replay_opts.cache_dir = dir / "cache";
  const ReplayResult r = replay(store, "ext", replay_opts);
  EXPECT_TRUE(r.identical);
  EXPECT_EQ(r.compared, 40u);
  EXPECT_EQ(r.network_calls, 0u);
  EXPECT_EQ(models->calls(), calls_before);
  EXPECT_EQ(store.load_manifest(r.run_id).parent_run_id, "ext");

  // An empty cache cannot answer: the replay fails instead of calling out.
  BackendOptions cold;
  cold.cache_dir = dir / "empty-cache";
  try {
    replay(store, "ext", cold);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kReplayMiss);
  }
}

TEST(Pipeline, ScreeningKeepsTheModeValues) {
  ScreeningOptions opts;
  opts.seed = 2;
  const ScreeningResult r = screen(small_concepts(), synthetic(2, 1, 0, 0.1), opts);
  EXPECT_EQ(r.pruned.dimensions()[0].values, (std::vector<std::string>{"attribute2"}));
  EXPECT_EQ(r.pruned.dimensions()[1].values, (std::vector<std::string>{"profession1"}));
  EXPECT_EQ(r.pruned.dimensions()[2].values, (std::vector<std::string>{"place0"}));
}

TEST(Pipeline, BackendConfigErrors) {
  EXPECT_THROW(make_backend({{"kind", "quantum"}}, 0), Error);
  EXPECT_THROW(make_backend({{"kind", "synthetic"}}, 0), Error);
  const BackendHandle h = make_backend(
      {{"kind", "synthetic"}, {"landscape_path", "data/landscapes/one_mode_4x4x4.json"}}, 0,
      BackendOptions{source_path(""), {}, CacheMode::kReadWrite, nullptr, {}});
  EXPECT_TRUE(h.synthetic());
  EXPECT_TRUE(h.resolved_config.at("landscape").is_object());
}

TEST(Pipeline, RestructureSuppressesTheSelectedMode) {
  TempDir dir;
  RunStore store(dir.path());
  ExploreOptions o = explore_options("parent", 3000);
  explore(store, small_concepts(), o);
  const SummaryReport before = summary_report_from_json(store.load_report("parent", "summary"));
  EXPECT_EQ(before.max_count_action, 21u);  // [2, 1, 0]

  RestructureOptions ro;
  ro.selection.combos = {ActionCombo{{2, 1, 0}}};
  ro.selection.selector = "tester";
  ro.probe_samples = 100;
  std::vector<std::string> stages;
  ro.progress = [&](const std::string& s) { stages.push_back(s); };
  const RestructureResult r = restructure(store, "parent", ro);
  EXPECT_TRUE(r.shift.verdict.reduced);
  EXPECT_GT(r.shift.shift_distance, 0.0);
  EXPECT_EQ(r.shift.sample_source, "probe");
  EXPECT_LT(r.shift.verdict.ci_high, 0.0);
  EXPECT_FALSE(stages.empty());
  EXPECT_TRUE(std::filesystem::exists(r.spec_path));

  const RunManifest child = store.load_manifest(r.child_run_id);
  EXPECT_EQ(child.parent_run_id, "parent");
  EXPECT_TRUE(child.details.contains("restructure"));
  EXPECT_TRUE(store.has_report("parent", "preferences"));
  EXPECT_TRUE(store.has_report(r.child_run_id, "shift"));
  EXPECT_TRUE(store.has_report("parent", "shift-" + r.child_run_id));

  const ShiftReport compared = compare_runs(store, "parent", r.child_run_id);
  EXPECT_EQ(compared, r.shift);
  const ShiftReport recomputed = compare_runs(store, "parent", r.child_run_id, ro.selection);
  EXPECT_TRUE(recomputed.verdict.reduced);
  EXPECT_EQ(recomputed.sample_source, "transitions");
}

TEST(Pipeline, RestructureRejectsBadSelections) {
  TempDir dir;
  RunStore store(dir.path());
  explore(store, small_concepts(), explore_options("p", 100));
  RestructureOptions ro;
  try {
    restructure(store, "p", ro);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySelection);
  }
  ro.selection.combos = {ActionCombo{{5, 0, 0}}};
  try {
    restructure(store, "p", ro);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidSelection);
  }
  try {
    restructure(store, "missing", ro);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRunNotFound);
  }
}

TEST(Pipeline, SyntheticHookWritesASuppressedLandscape) {
  TempDir dir;
  PlantedLandscape l;
  l.modes.push_back({ActionCombo{{1, 1, 1}}, 9.0, 0});
  l.modes.push_back({ActionCombo{{0, 0, 0}}, 7.0, 0});
  write_file_atomic(dir / "model.json", to_json(l).dump());
  MitigationDatasetSpec spec = build_mitigation_spec(
      PreferenceSelection{{ActionCombo{{1, 1, 1}}}, "t", "", ""}, small_space(2, 2, 2), simple_templates(2));
  spec.model_ref = (dir / "model.json").string();
  write_file_atomic(dir / "spec.json", to_json(spec).dump());
  const auto out = run_synthetic_hook(dir / "spec.json");
  EXPECT_TRUE(out.is_absolute());
  const PlantedLandscape tuned = planted_landscape_from_json(read_json_file(out));
  ASSERT_EQ(tuned.modes.size(), 1u);
  EXPECT_EQ(tuned.modes[0].combo, (ActionCombo{{0, 0, 0}}));
}
