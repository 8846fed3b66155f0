#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/agents.hpp"
#include "failscape/concept_space.hpp"
#include "failscape/environment.hpp"
#include "failscape/external_backend.hpp"
#include "failscape/gateway.hpp"
#include "failscape/landscape.hpp"
#include "failscape/response_cache.hpp"
#include "failscape/restructure.hpp"
#include "failscape/run_store.hpp"
#include "failscape/screening.hpp"

namespace failscape {

// ---------------------------------------------------------------------------
// Backends from configuration
//
//   {"kind": "synthetic", "landscape": {...}}            planted landscape inline
//   {"kind": "synthetic", "landscape_path": "l.json"}    or from a file
//   {"kind": "external", "artifact": "image", "generator": {...}, "judge": {...},
//    "embedding": {...}, "use_embeddings": false, "rubric_id": "alignment-v1"}

struct BackendOptions {
  std::filesystem::path base_dir;   // resolves relative landscape paths
  std::filesystem::path cache_dir;  // reply cache of external backends
  CacheMode cache_mode = CacheMode::kReadWrite;
  std::shared_ptr<HttpTransport> transport;  // defaults to HttplibTransport
  Sleeper sleeper;
};

struct BackendHandle {
  std::shared_ptr<RewardBackend> backend;
  std::shared_ptr<ExternalBackend> external;  // null for synthetic backends
  std::shared_ptr<ResponseCache> cache;       // null for synthetic backends
  // The configuration with file references inlined; stored in manifests so
  // a run can be re-executed without the original files.
  nlohmann::json resolved_config;
  bool synthetic() const { return external == nullptr; }
};

// Throws kInvalidArgument for an unknown kind or malformed configuration.
BackendHandle make_backend(const nlohmann::json& config, std::uint64_t seed,
                           const BackendOptions& options = {});

// Action screening against a configured backend. Each (state, combination)
// evaluation gets a sample seed derived from the options seed, the flat index
// and the template id. Synthetic backends are evaluated on one worker.
ScreeningResult screen(const ConceptFile& concepts, const nlohmann::json& backend,
                       const ScreeningOptions& options, const BackendOptions& backend_options = {});

// ---------------------------------------------------------------------------
// Discover and summarize

struct ExploreOptions {
  AgentKind agent = AgentKind::kDqn;
  AgentConfig agent_config;  // its seed is replaced by `seed`
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t episode_length = 8;
  nlohmann::json backend;
  BackendOptions backend_options;
  std::optional<std::string> run_id;  // defaults to a fresh id
  std::optional<std::string> parent_run_id;
  nlohmann::json details = nlohmann::json::object();
  // Timestamps: wall clock or the step index. Defaults to the step index for
  // synthetic backends (byte-identical logs) and the wall clock otherwise.
  std::optional<bool> wall_clock;
  SummaryOptions summary;
};

struct ExploreResult {
  std::string run_id;
  SummaryReport summary;
  std::size_t network_calls = 0;
};

// Creates a run, streams every transition into it, then saves the "summary"
// and "plot" reports and marks the run complete (failed on error).
ExploreResult explore(RunStore& store, const ConceptFile& concepts, const ExploreOptions& options);

// Continues a run whose manifest still says "running": re-executes it from
// its manifest, checks the logged prefix matches and appends the rest. A torn
// final line (unacknowledged write) is dropped first.
ExploreResult resume(RunStore& store, const std::string& run_id,
                     const BackendOptions& backend_options = {});

// Space and templates recorded in a run manifest.
ConceptFile concepts_of(const RunManifest& manifest);
SummaryOptions summary_options_of(const RunManifest& manifest);

// Rebuilds the summary of a run from its transitions; optionally stores it
// as the "summary" and "plot" reports.
SummaryReport summarize(const RunStore& store, const std::string& run_id, bool save = true);

// ---------------------------------------------------------------------------
// Replay

struct ReplayResult {
  std::string run_id;  // the new run
  bool identical = false;
  std::size_t compared = 0;
  std::optional<std::size_t> first_mismatch;  // 0-based transition index
  std::size_t network_calls = 0;
};

// Re-executes a run into a new run with the reply cache in replay mode, so
// any request not answered by the cache fails instead of reaching the
// network. Transitions are compared ignoring timestamps.
ReplayResult replay(RunStore& store, const std::string& run_id,
                    const BackendOptions& backend_options = {});

// ---------------------------------------------------------------------------
// Restructure

struct RestructureOptions {
  PreferenceSelection selection;
  std::size_t max_selection = kDefaultMaxSelection;
  MitigationOptions mitigation;
  // Without a command or URL, synthetic runs use the built-in landscape hook.
  std::optional<HookConfig> hook;
  std::shared_ptr<HttpTransport> hook_transport;
  std::optional<std::size_t> steps;  // re-exploration budget; parent's by default
  std::optional<std::uint64_t> seed;  // parent's by default
  // Direct evaluations of the selected combos under each model, used for the
  // reduction verdict. 0 falls back to the transitions on the selection.
  std::size_t probe_samples = 200;
  // Classify probe images with the judge and report the bias ratio.
  bool gender_bias = false;
  BackendOptions backend_options;
  std::function<void(const std::string& stage)> progress;
};

struct RestructureResult {
  std::string child_run_id;
  std::filesystem::path spec_path;
  HookResult hook;
  ShiftReport shift;
};

// Persists the selection, writes the mitigation spec, invokes the fine-tune
// hook, re-explores against the returned model as a child run and stores the
// shift report on both runs ("shift" on the child, "shift-<child>" on the
// parent).
RestructureResult restructure(RunStore& store, const std::string& run_id,
                              const RestructureOptions& options);

// The built-in synthetic fine-tune hook: reads the landscape named by the
// spec's model_ref, suppresses every mode covering a selected combo, writes
// the result next to the spec and returns its path.
std::filesystem::path run_synthetic_hook(const std::filesystem::path& spec_path);

// Stored shift report of two runs when one exists, otherwise one computed
// from their transitions. The selection defaults to the one recorded for the
// restructure that produced `after`, else the before run's "preferences".
ShiftReport compare_runs(const RunStore& store, const std::string& before, const std::string& after,
                         const std::optional<PreferenceSelection>& selection = std::nullopt);

}  // namespace failscape
