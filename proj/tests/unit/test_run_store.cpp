#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "failscape/errors.hpp"
#include "failscape/run_store.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::TempDir;

namespace {

RunManifest manifest(const std::string& id) {
  RunManifest m;
  m.run_id = id;
  m.space = nlohmann::json::array({{{"name", "a"}, {"values", {"x", "y"}}}});
  m.templates = nlohmann::json::array({{{"id", "t0"}, {"text", "<a>"}}});
  m.agent_kind = "dqn";
  m.seed = 3;
  m.total_steps = 10;
  m.episode_length = 8;
  return m;
}

Transition transition(std::size_t i) {
  Transition t;
  t.episode = i / 8;
  t.step = i % 8 + 1;
  t.template_id = "t0";
  t.action = i % 2;
  t.prompt = i % 2 ? "y" : "x";
  if (i % 5 == 4) {
    t.status = "refusal";
  } else {
    t.reward = 0.1 * static_cast<double>(i);
  }
  if (i % 7 == 0) t.artifact_ref = "artifacts/abc.txt";
  t.timestamp_ms = static_cast<std::int64_t>(i);
  return t;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kIo;
}

}  // namespace

TEST(RunStore, AppendThenStreamIsByteIdentical) {
  TempDir dir;
  RunStore store(dir.path());
  {
    RunWriter w = store.create_run(manifest("r1"));
    for (std::size_t i = 0; i < 50; ++i) w.append(transition(i));
  }
  std::string expected;
  for (std::size_t i = 0; i < 50; ++i) expected += to_json(transition(i)).dump() + "\n";
  EXPECT_EQ(read_file(store.run_dir("r1") / "transitions.jsonl"), expected);
  const auto back = store.read_transitions("r1");
  ASSERT_EQ(back.size(), 50u);
  std::string again;
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i], transition(i));
    again += to_json(back[i]).dump() + "\n";
  }
  EXPECT_EQ(again, expected);
}

TEST(RunStore, TenThousandAppendsStreamInOrder) {
  TempDir dir;
  RunStore store(dir.path());
  {
    RunWriter w = store.create_run(manifest("big"));
    for (std::size_t i = 0; i < 10000; ++i) w.append(transition(i));
    EXPECT_EQ(w.appended(), 10000u);
  }
  std::size_t next = 0;
  const StreamStats s = store.stream_transitions("big", [&](const Transition& t) {
    EXPECT_EQ(t.episode, next / 8);
    EXPECT_EQ(t.step, next % 8 + 1);
    ++next;
  });
  EXPECT_EQ(next, 10000u);
  EXPECT_EQ(s.yielded, 10000u);
}

TEST(RunStore, TruncatedFinalLineIsCorrupt) {
  TempDir dir;
  RunStore store(dir.path());
  {
    RunWriter w = store.create_run(manifest("r"));
    for (std::size_t i = 0; i < 3; ++i) w.append(transition(i));
  }
  const auto log = store.run_dir("r") / "transitions.jsonl";
  const std::string full = read_file(log);
  std::filesystem::resize_file(log, full.size() - 10);
  EXPECT_EQ(code_of([&] { store.read_transitions("r"); }), ErrorCode::kCorruptRecord);
  StreamOptions skip;
  skip.skip_corrupt = true;
  std::size_t n = 0;
  const StreamStats s = store.stream_transitions("r", [&](const Transition&) { ++n; }, skip);
  EXPECT_EQ(n, 2u);
  EXPECT_EQ(s.corrupt_lines, (std::vector<std::size_t>{3}));
}

TEST(RunStore, FilterSelectsTransitions) {
  TempDir dir;
  RunStore store(dir.path());
  {
    RunWriter w = store.create_run(manifest("r"));
    for (std::size_t i = 0; i < 20; ++i) w.append(transition(i));
  }
  StreamOptions opts;
  opts.filter = [](const Transition& t) { return t.action == 1; };
  EXPECT_EQ(store.read_transitions("r", opts).size(), 10u);
}

TEST(RunStore, ClosedWriterRejectsAppends) {
  TempDir dir;
  RunStore store(dir.path());
  RunWriter w = store.create_run(manifest("r"));
  w.close();
  EXPECT_TRUE(w.closed());
  EXPECT_EQ(code_of([&] { w.append(transition(0)); }), ErrorCode::kRunClosed);
  RunWriter again = store.reopen_run("r");
  again.append(transition(0));
  EXPECT_EQ(store.read_transitions("r").size(), 1u);
}

TEST(RunStore, ManifestRoundTripPreservesUnknownFields) {
  TempDir dir;
  RunStore store(dir.path());
  RunManifest m = manifest("r");
  m.details = {{"note", "x"}};
  store.create_run(m);
  const auto path = store.run_dir("r") / "manifest.json";
  nlohmann::json j = read_json_file(path);
  j["added_later"] = {1, 2, 3};
  j["schema_version"] = "1.4";
  write_file_atomic(path, j.dump(2));
  const RunManifest back = store.load_manifest("r");
  EXPECT_EQ(back.details, m.details);
  EXPECT_EQ(back.extra.at("added_later"), j["added_later"]);
  store.save_manifest(back);
  EXPECT_EQ(read_json_file(path).at("added_later"), j["added_later"]);

  j["schema_version"] = "2.0";
  write_file_atomic(path, j.dump());
  EXPECT_EQ(code_of([&] { store.load_manifest("r"); }), ErrorCode::kSchemaVersionUnsupported);
}

TEST(RunStore, CorruptJsonNamesThePath) {
  TempDir dir;
  RunStore store(dir.path());
  store.create_run(manifest("r"));
  const auto path = store.run_dir("r") / "manifest.json";
  write_file_atomic(path, "{\"run_id\": ");
  try {
    store.load_manifest("r");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kJsonParse);
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos) << e.what();
  }
}

TEST(RunStore, MissingRunsAndParents) {
  TempDir dir;
  RunStore store(dir.path());
  EXPECT_EQ(code_of([&] { store.load_manifest("nope"); }), ErrorCode::kRunNotFound);
  RunManifest child = manifest("child");
  child.parent_run_id = "nope";
  EXPECT_EQ(code_of([&] { store.create_run(child); }), ErrorCode::kRunNotFound);
  store.create_run(manifest("dup"));
  EXPECT_EQ(code_of([&] { store.create_run(manifest("dup")); }), ErrorCode::kInvalidArgument);
}

TEST(RunStore, ListRunsSortedById) {
  TempDir dir;
  RunStore store(dir.path());
  store.create_run(manifest("b"));
  store.create_run(manifest("a"));
  store.create_run(manifest("c"));
  const auto runs = store.list_runs();
  ASSERT_EQ(runs.size(), 3u);
  EXPECT_EQ(runs[0].run_id, "a");
  EXPECT_EQ(runs[2].run_id, "c");
}

TEST(RunStore, ReportsAndArtifacts) {
  TempDir dir;
  RunStore store(dir.path());
  store.create_run(manifest("r"));
  EXPECT_FALSE(store.has_report("r", "summary"));
  store.save_report("r", "summary", {{"x", 1}});
  EXPECT_TRUE(store.has_report("r", "summary"));
  EXPECT_EQ(store.load_report("r", "summary").at("x"), 1);
  const std::string ref = store.put_artifact("r", "bytes", "txt");
  EXPECT_EQ(ref.rfind("artifacts/", 0), 0u);
  EXPECT_EQ(store.put_artifact("r", "bytes", "txt"), ref);  // content-addressed
  EXPECT_EQ(store.get_artifact("r", ref), "bytes");
  EXPECT_EQ(code_of([&] { store.get_artifact("r", "../manifest.json"); }), ErrorCode::kInvalidArgument);
}

TEST(RunIds, SortByTimeAndAreUnique) {
  const std::string a = make_run_id(1000, 0, 0);
  const std::string b = make_run_id(1001, 0, 0);
  EXPECT_EQ(a.size(), 26u);
  EXPECT_LT(a, b);
  std::set<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.insert(new_run_id());
  EXPECT_EQ(ids.size(), 1000u);
}

TEST(Transitions, NullRewardSerializesAsNull) {
  Transition t = transition(4);
  const auto j = to_json(t);
  EXPECT_TRUE(j.at("reward").is_null());
  EXPECT_EQ(transition_from_json(j), t);
  nlohmann::json bad = j;
  bad.erase("action");
  EXPECT_EQ(code_of([&] { transition_from_json(bad); }), ErrorCode::kJsonParse);
}

TEST(Files, AtomicWriteToABareFileName) {
  TempDir dir;
  const auto cwd = std::filesystem::current_path();
  std::filesystem::current_path(dir.path());
  write_file_atomic("bare.json", "{}");
  EXPECT_EQ(read_file("bare.json"), "{}");
  std::filesystem::current_path(cwd);
}
