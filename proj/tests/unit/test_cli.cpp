#include <gtest/gtest.h>

#include <array>
#include <cstdio>

#include "failscape/concept_space.hpp"
#include "failscape/run_store.hpp"
#include "test_support.hpp"

using namespace failscape;
using failscape::testing::TempDir;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FAILSCAPE_CLI) + " " + args + " 2>/dev/null";
  CommandResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

nlohmann::json run_json(const std::string& args) {
  const CommandResult r = run_cli(args);
  EXPECT_EQ(r.exit_code, 0) << args << "\n" << r.out;
  return nlohmann::json::parse(r.out);
}

// A store plus a 4x4x4 concept file and the one-mode planted landscape.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    concepts_ = dir_ / "concepts.json";
    write_file_atomic(concepts_, to_json(ConceptFile{failscape::testing::small_space(4, 4, 4),
                                                     failscape::testing::simple_templates(3)})
                                     .dump());
    store_ = dir_ / "store";
  }

  std::string explore_args(const std::string& run_id, std::size_t steps) const {
    return "--store " + store_.string() + " explore --concepts " + concepts_.string() + " --landscape " +
           std::string(FAILSCAPE_SOURCE_DIR) + "/data/landscapes/one_mode_4x4x4.json --steps " +
           std::to_string(steps) + " --seed 3 --run-id " + run_id;
  }

  TempDir dir_;
  std::filesystem::path concepts_;
  std::filesystem::path store_;
};

}  // namespace

TEST_F(CliTest, ExploreIsDeterministic) {
  const auto a = run_json(explore_args("a", 400));
  const auto b = run_json(explore_args("b", 400));
  EXPECT_EQ(a.at("transitions"), 400);
  EXPECT_EQ(a.at("entropy"), b.at("entropy"));
  RunStore store(store_);
  EXPECT_EQ(read_file(store.run_dir("a") / "transitions.jsonl"), read_file(store.run_dir("b") / "transitions.jsonl"));
}

TEST_F(CliTest, SummaryOfASingleTransitionHasZeroEntropy) {
  run_json(explore_args("one", 1));
  const auto s = run_json("--store " + store_.string() + " summarize one --html " + (dir_ / "p.html").string());
  EXPECT_EQ(s.at("transitions"), 1);
  EXPECT_DOUBLE_EQ(s.at("entropy").get<double>(), 0.0);
  EXPECT_TRUE(std::filesystem::exists(dir_ / "p.html"));
}

TEST_F(CliTest, RestructureThenCompare) {
  run_json(explore_args("parent", 3000));
  const auto r = run_json("--store " + store_.string() +
                          " restructure parent --combo 2,1,3 --probe-samples 100 --hook-cmd " +
                          std::string(FAILSCAPE_CLI) + " synthetic-hook {spec}");
  const std::string child = r.at("child_run_id");
  EXPECT_TRUE(r.at("shift").at("reduced").get<bool>());
  const auto c = run_json("--store " + store_.string() + " compare parent " + child);
  EXPECT_TRUE(c.at("reduced").get<bool>());
  EXPECT_EQ(c.at("shift_distance"), r.at("shift").at("shift_distance"));
}

TEST_F(CliTest, ErrorsExitNonZero) {
  EXPECT_EQ(run_cli("--store " + store_.string() + " summarize missing").exit_code, 1);
  EXPECT_EQ(run_cli("--store " + store_.string() + " replay missing").exit_code, 1);
  EXPECT_NE(run_cli("--store " + store_.string() + " explore --concepts " + concepts_.string()).exit_code, 0);
}

TEST_F(CliTest, SyntheticHookPrintsEndpoint) {
  run_json(explore_args("p", 200));
  const auto r = run_json("--store " + store_.string() +
                          " restructure p --combo 0,0,0 --probe-samples 10 --steps 100 --hook-cmd " +
                          std::string(FAILSCAPE_CLI) + " synthetic-hook {spec}");
  const std::string spec = r.at("spec_path");
  const CommandResult h = run_cli("synthetic-hook " + spec);
  EXPECT_EQ(h.exit_code, 0);
  EXPECT_EQ(h.out.rfind("ENDPOINT=", 0), 0u) << h.out;
}
