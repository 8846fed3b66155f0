#include "failscape/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <set>

#include "failscape/discovery.hpp"
#include "failscape/errors.hpp"
#include "failscape/hashing.hpp"
#include "failscape/rng.hpp"

namespace failscape {

namespace fs = std::filesystem;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

// Split "http://host:port/some/path" into base URL and path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

nlohmann::json regions_to_json(const std::vector<RegionQuery>& regions) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : regions) out.push_back({{"center", to_json(r.center)}, {"radius", r.radius}});
  return out;
}

nlohmann::json summary_options_json(const SummaryOptions& o) {
  return {{"top_k", o.top_k}, {"base_quantile", o.base_quantile}, {"regions", regions_to_json(o.regions)}};
}

bool same_except_time(const Transition& a, const Transition& b) {
  Transition x = a;
  x.timestamp_ms = b.timestamp_ms;
  return x == b;
}

// Drops an unterminated trailing line left by an interrupted append.
void drop_torn_tail(const fs::path& log) {
  if (!fs::exists(log)) return;
  const std::string text = read_file(log);
  if (text.empty() || text.back() == '\n') return;
  const auto last_newline = text.rfind('\n');
  fs::resize_file(log, last_newline == std::string::npos ? 0 : last_newline + 1);
}

SummaryReport summarize_and_save(const RunStore& store, const std::string& run_id,
                                 const std::vector<Transition>& transitions, const ConceptSpace& space,
                                 SummaryOptions options) {
  options.metadata = {{"run_id", run_id}};
  SummaryReport report = build_summary(transitions, space, options);
  store.save_report(run_id, "summary", to_json(report));
  store.save_report(run_id, "plot", plot_data(report));
  return report;
}

struct Execution {
  std::size_t network_calls = 0;
  std::vector<Transition> transitions;
};

// Runs discovery for a manifest. `sink` receives every transition.
Execution execute(const RunStore& store, const RunManifest& m, const BackendOptions& backend_options,
                  const TransitionSink& sink) {
  const ConceptFile concepts = concepts_of(m);
  if (!m.details.contains("backend_config")) {
    throw Error(ErrorCode::kInvalidArgument, "run '" + m.run_id + "' records no backend configuration");
  }
  BackendHandle handle = make_backend(m.details.at("backend_config"), m.seed, backend_options);
  if (handle.external) {
    const std::string run_id = m.run_id;
    handle.external->set_artifact_sink([&store, run_id](const std::string& bytes, const std::string& ext) {
      return store.put_artifact(run_id, bytes, ext);
    });
  }
  AgentConfig agent_config = agent_config_from_json(m.agent_config);
  agent_config.seed = m.seed;
  EnvConfig env_config{concepts.space, concepts.templates, m.episode_length, m.seed};
  Environment env(std::move(env_config), handle.backend);
  const bool wall = m.details.value("clock", std::string("logical")) == "wall";
  Execution ex;
  run_discovery(env, agent_kind_from_string(m.agent_kind), agent_config, m.total_steps,
                [&](const Transition& t) {
                  sink(t);
                  ex.transitions.push_back(t);
                },
                wall ? TransitionClock(wall_clock_ms) : TransitionClock(logical_clock));
  if (handle.external) ex.network_calls = handle.external->network_calls();
  return ex;
}

void finish(RunStore& store, RunManifest m, const std::string& status, const nlohmann::json& error = {}) {
  m.status = status;
  m.ended_ms = now_ms();
  if (!error.is_null()) m.details["error"] = error;
  store.save_manifest(m);
}

nlohmann::json error_json(const std::exception& e) {
  if (const auto* fe = dynamic_cast<const Error*>(&e)) {
    return {{"code", std::string(error_code_name(fe->code()))}, {"message", fe->what()}};
  }
  return {{"code", "internal"}, {"message", e.what()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Backends

BackendHandle make_backend(const nlohmann::json& config, std::uint64_t seed, const BackendOptions& options) {
  if (!config.is_object() || !config.contains("kind") || !config.at("kind").is_string()) {
    throw Error(ErrorCode::kInvalidArgument, "backend configuration needs a 'kind'");
  }
  const std::string kind = config.at("kind").get<std::string>();
  BackendHandle h;
  if (kind == "synthetic") {
    nlohmann::json landscape_json;
    if (config.contains("landscape")) {
      landscape_json = config.at("landscape");
    } else if (config.contains("landscape_path")) {
      landscape_json = read_json_file(
          resolve(options.base_dir, config.at("landscape_path").get<std::string>()));
    } else {
      throw Error(ErrorCode::kInvalidArgument, "synthetic backend needs 'landscape' or 'landscape_path'");
    }
    PlantedLandscape landscape = planted_landscape_from_json(landscape_json);
    h.resolved_config = {{"kind", "synthetic"}, {"landscape", to_json(landscape)}};
    h.backend = std::make_shared<SyntheticBackend>(std::move(landscape), seed);
    return h;
  }
  if (kind == "external") {
    nlohmann::json body = config;
    body.erase("kind");
    const ExternalBackendConfig cfg = external_backend_config_from_json(body);
    fs::path cache_dir = options.cache_dir;
    if (cache_dir.empty()) cache_dir = resolve(options.base_dir, "cache");
    h.cache = std::make_shared<ResponseCache>(cache_dir, options.cache_mode);
    h.external = std::make_shared<ExternalBackend>(cfg, h.cache, options.transport, ArtifactSink{},
                                                   options.sleeper);
    h.backend = h.external;
    h.resolved_config = to_json(cfg);
    h.resolved_config["kind"] = "external";
    return h;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown backend kind '" + kind + "'");
}

ScreeningResult screen(const ConceptFile& concepts, const nlohmann::json& backend,
                       const ScreeningOptions& options, const BackendOptions& backend_options) {
  BackendHandle h = make_backend(backend, derive_seed(options.seed, "screening-backend"), backend_options);
  const ScreeningRewardFn fn = [&](const ActionCombo& combo, const PromptTemplate& tmpl) {
    const std::string prompt = render_prompt(tmpl, combo, concepts.space);
    const std::uint64_t seed =
        derive_seed(options.seed ^ flat_index(combo, concepts.space), "screen:" + tmpl.id);
    return h.backend->evaluate({tmpl, combo, prompt, seed}).reward;
  };
  ScreeningOptions opts = options;
  // The synthetic noise stream is sequential; only external backends fan out.
  if (h.synthetic()) opts.workers = 1;
  return screen_actions(concepts.space, concepts.templates, fn, opts);
}

// ---------------------------------------------------------------------------
// Discover and summarize

ConceptFile concepts_of(const RunManifest& m) {
  return concept_file_from_json({{"dimensions", m.space}, {"templates", m.templates}});
}

SummaryOptions summary_options_of(const RunManifest& m) {
  SummaryOptions o;
  if (!m.details.contains("summary_options")) return o;
  const auto& j = m.details.at("summary_options");
  o.top_k = j.value("top_k", o.top_k);
  o.base_quantile = j.value("base_quantile", o.base_quantile);
  for (const auto& r : j.value("regions", nlohmann::json::array())) {
    o.regions.push_back({combo_from_json(r.at("center")), r.at("radius").get<std::size_t>()});
  }
  return o;
}

ExploreResult explore(RunStore& store, const ConceptFile& concepts, const ExploreOptions& options) {
  if (options.steps == 0) throw Error(ErrorCode::kInvalidArgument, "exploration needs steps > 0");
  AgentConfig agent_config = options.agent_config;
  agent_config.seed = options.seed;
  agent_config.validate();
  // Resolve the backend once up front so configuration errors surface
  // before a run directory exists.
  const BackendHandle probe = make_backend(options.backend, options.seed, options.backend_options);

  RunManifest m;
  m.run_id = options.run_id.value_or(new_run_id());
  m.parent_run_id = options.parent_run_id;
  m.space_fingerprint = concepts.space.fingerprint();
  m.space = to_json(concepts.space);
  nlohmann::json templates = nlohmann::json::array();
  for (const auto& t : concepts.templates) templates.push_back({{"id", t.id}, {"text", t.text}});
  m.templates = templates;
  m.agent_kind = to_string(options.agent);
  m.agent_config = to_json(agent_config);
  m.config_hash = sha256_hex(m.agent_config.dump());
  m.backend = probe.backend->fingerprint();
  m.seed = options.seed;
  m.total_steps = options.steps;
  m.episode_length = options.episode_length;
  m.started_ms = now_ms();
  m.details = options.details.is_object() ? options.details : nlohmann::json::object();
  m.details["backend_config"] = probe.resolved_config;
  m.details["clock"] = options.wall_clock.value_or(!probe.synthetic()) ? "wall" : "logical";
  m.details["summary_options"] = summary_options_json(options.summary);

  RunWriter writer = store.create_run(m);
  try {
    Execution ex = execute(store, m, options.backend_options,
                           [&](const Transition& t) { writer.append(t); });
    writer.close();
    ExploreResult result;
    result.run_id = m.run_id;
    result.network_calls = ex.network_calls;
    result.summary = summarize_and_save(store, m.run_id, ex.transitions, concepts.space, options.summary);
    finish(store, m, kRunComplete);
    return result;
  } catch (const std::exception& e) {
    writer.close();
    finish(store, m, kRunFailed, error_json(e));
    throw;
  }
}

ExploreResult resume(RunStore& store, const std::string& run_id, const BackendOptions& backend_options) {
  RunManifest m = store.load_manifest(run_id);
  if (m.status != kRunRunning) {
    throw Error(ErrorCode::kRunClosed, "run '" + run_id + "' has status " + m.status);
  }
  drop_torn_tail(store.run_dir(run_id) / "transitions.jsonl");
  const std::vector<Transition> logged = store.read_transitions(run_id);
  RunWriter writer = store.reopen_run(run_id);
  std::size_t index = 0;
  try {
    Execution ex = execute(store, m, backend_options, [&](const Transition& t) {
      if (index < logged.size()) {
        if (!same_except_time(logged[index], t)) {
          throw Error(ErrorCode::kCorruptRecord, "run '" + run_id + "' diverges from its log at record " +
                                                     std::to_string(index + 1));
        }
      } else {
        writer.append(t);
      }
      ++index;
    });
    writer.close();
    ExploreResult result;
    result.run_id = run_id;
    result.network_calls = ex.network_calls;
    // Keep the logged records (and their timestamps) as the source of truth.
    const std::vector<Transition> all = store.read_transitions(run_id);
    result.summary = summarize_and_save(store, run_id, all, concepts_of(m).space, summary_options_of(m));
    finish(store, m, kRunComplete);
    return result;
  } catch (const std::exception& e) {
    writer.close();
    finish(store, m, kRunFailed, error_json(e));
    throw;
  }
}

SummaryReport summarize(const RunStore& store, const std::string& run_id, bool save) {
  const RunManifest m = store.load_manifest(run_id);
  const std::vector<Transition> transitions = store.read_transitions(run_id);
  if (transitions.empty()) throw Error(ErrorCode::kInvalidArgument, "run '" + run_id + "' has no transitions");
  SummaryOptions options = summary_options_of(m);
  if (save) return summarize_and_save(store, run_id, transitions, concepts_of(m).space, options);
  options.metadata = {{"run_id", run_id}};
  return build_summary(transitions, concepts_of(m).space, options);
}

// ---------------------------------------------------------------------------
// Replay

namespace {

// Transport that refuses every request and counts the attempts.
class OfflineTransport final : public HttpTransport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    ++calls_;
    throw Error(ErrorCode::kReplayMiss, "network access during replay: " + request.base_url + request.path);
  }
  std::size_t calls() const { return calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

}  // namespace

ReplayResult replay(RunStore& store, const std::string& run_id, const BackendOptions& backend_options) {
  const RunManifest source = store.load_manifest(run_id);
  const std::vector<Transition> original = store.read_transitions(run_id);
  auto offline = std::make_shared<OfflineTransport>();
  BackendOptions opts = backend_options;
  opts.cache_mode = CacheMode::kReplayOnly;
  opts.transport = offline;

  RunManifest m = source;
  m.run_id = new_run_id();
  m.parent_run_id = run_id;
  m.status = kRunRunning;
  m.started_ms = now_ms();
  m.ended_ms.reset();
  m.details.erase("error");
  m.details["replay_of"] = run_id;

  ReplayResult result;
  result.run_id = m.run_id;
  RunWriter writer = store.create_run(m);
  try {
    std::size_t index = 0;
    Execution ex = execute(store, m, opts, [&](const Transition& t) {
      writer.append(t);
      if (!result.first_mismatch &&
          (index >= original.size() || !same_except_time(original[index], t))) {
        result.first_mismatch = index;
      }
      ++index;
    });
    writer.close();
    result.compared = index;
    if (!result.first_mismatch && index != original.size()) result.first_mismatch = index;
    result.identical = !result.first_mismatch.has_value();
    result.network_calls = offline->calls() + ex.network_calls;
    summarize_and_save(store, m.run_id, ex.transitions, concepts_of(m).space, summary_options_of(m));
    m.details["replay"] = {{"identical", result.identical}, {"network_calls", result.network_calls}};
    finish(store, m, kRunComplete);
    return result;
  } catch (const std::exception& e) {
    writer.close();
    finish(store, m, kRunFailed, error_json(e));
    throw;
  }
}

// ---------------------------------------------------------------------------
// Restructure

fs::path run_synthetic_hook(const fs::path& spec_path) {
  const MitigationDatasetSpec spec = mitigation_spec_from_json(read_json_file(spec_path));
  if (!spec.model_ref) throw Error(ErrorCode::kHookFailed, "mitigation spec names no model");
  const fs::path model = resolve(spec_path.parent_path(), *spec.model_ref);
  const PlantedLandscape before = planted_landscape_from_json(read_json_file(model));
  const PlantedLandscape after = suppress_modes(before, spec.selection.combos);
  const std::string text = to_json(after).dump(2) + "\n";
  const fs::path out = spec_path.parent_path() / ("landscape-" + sha256_hex(text).substr(0, 16) + ".json");
  write_file_atomic(out, text);
  return fs::absolute(out);
}

namespace {

struct ProbeResult {
  std::vector<double> rewards;
  std::vector<GenderLabel> genders;
};

ProbeResult probe(const RunStore& store, const std::string& run_id, const nlohmann::json& backend_config,
                  const ConceptFile& concepts, const std::vector<ActionCombo>& combos,
                  std::size_t samples, std::uint64_t seed, bool gender_bias,
                  const BackendOptions& backend_options) {
  ProbeResult out;
  BackendHandle h = make_backend(backend_config, derive_seed(seed, "probe-backend"), backend_options);
  if (h.external) {
    h.external->set_artifact_sink([&store, run_id](const std::string& bytes, const std::string& ext) {
      return store.put_artifact(run_id, bytes, ext);
    });
  }
  const std::uint64_t base = derive_seed(seed, "probe");
  for (std::size_t i = 0; i < samples; ++i) {
    const ActionCombo& combo = combos[i % combos.size()];
    const PromptTemplate& tmpl = concepts.templates[(i / combos.size()) % concepts.templates.size()];
    const std::string prompt = render_prompt(tmpl, combo, concepts.space);
    const RewardOutcome r = h.backend->evaluate({tmpl, combo, prompt, base ^ i});
    if (r.reward) out.rewards.push_back(*r.reward);
    if (gender_bias && h.external && r.artifact_ref) {
      const std::string ref = *r.artifact_ref;
      const std::string ext = ref.substr(ref.rfind('.') + 1);
      ImagePayload image{store.get_artifact(run_id, ref), ext == "jpg" ? "image/jpeg" : "image/" + ext};
      out.genders.push_back(classify_gender(h.external->judge(), image));
    }
  }
  return out;
}

}  // namespace

RestructureResult restructure(RunStore& store, const std::string& run_id, const RestructureOptions& options) {
  auto stage = [&](const std::string& s) {
    if (options.progress) options.progress(s);
  };
  RunManifest parent = store.load_manifest(run_id);
  if (parent.status != kRunComplete) {
    throw Error(ErrorCode::kInvalidArgument, "run '" + run_id + "' is not complete");
  }
  const ConceptFile concepts = concepts_of(parent);
  validate_selection(options.selection, concepts.space, options.max_selection);
  store.save_report(run_id, "preferences", to_json(options.selection));

  const nlohmann::json& before_backend = parent.details.at("backend_config");
  const bool synthetic = before_backend.at("kind") == "synthetic";
  const std::string child_id = new_run_id();
  const fs::path work = store.run_dir(run_id) / "restructure" / child_id;
  fs::create_directories(work);

  stage("spec");
  MitigationDatasetSpec spec =
      build_mitigation_spec(options.selection, concepts.space, concepts.templates, options.mitigation);
  if (synthetic) {
    write_file_atomic(work / "model_landscape.json", before_backend.at("landscape").dump(2) + "\n");
    spec.model_ref = "model_landscape.json";
  } else {
    const auto& gen = before_backend.at("generator");
    spec.model_ref = gen.at("base_url").get<std::string>() + gen.value("path", std::string());
  }
  RestructureResult result;
  result.child_run_id = child_id;
  result.spec_path = work / "mitigation_spec.json";
  write_file_atomic(result.spec_path, to_json(spec).dump(2) + "\n");

  stage("hook");
  const bool custom_hook = options.hook && (!options.hook->command.empty() || !options.hook->url.empty());
  if (custom_hook) {
    result.hook = invoke_finetune_hook(result.spec_path, *options.hook, options.hook_transport);
  } else if (synthetic) {
    const auto t0 = std::chrono::steady_clock::now();
    result.hook.endpoint = run_synthetic_hook(result.spec_path).string();
    result.hook.stdout_text = "ENDPOINT=" + result.hook.endpoint + "\n";
    result.hook.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } else {
    throw Error(ErrorCode::kInvalidArgument, "external runs need a fine-tune hook command or url");
  }

  nlohmann::json after_backend = before_backend;
  if (synthetic) {
    after_backend = {{"kind", "synthetic"},
                     {"landscape", read_json_file(resolve(work, result.hook.endpoint))}};
  } else {
    const auto [base, path] = split_url(result.hook.endpoint);
    after_backend["generator"]["base_url"] = base;
    if (!path.empty()) after_backend["generator"]["path"] = path;
  }

  stage("explore");
  ExploreOptions eo;
  eo.agent = agent_kind_from_string(parent.agent_kind);
  eo.agent_config = agent_config_from_json(parent.agent_config);
  eo.steps = options.steps.value_or(parent.total_steps);
  eo.seed = options.seed.value_or(parent.seed);
  eo.episode_length = parent.episode_length;
  eo.backend = after_backend;
  eo.backend_options = options.backend_options;
  eo.run_id = child_id;
  eo.parent_run_id = run_id;
  eo.wall_clock = parent.details.value("clock", std::string("logical")) == "wall";
  eo.summary = summary_options_of(parent);
  eo.details = {{"restructure",
                 {{"selection", to_json(options.selection)},
                  {"spec_path", fs::relative(result.spec_path, store.root()).string()},
                  {"hook", to_json(result.hook)},
                  {"probe_samples", options.probe_samples}}}};
  explore(store, concepts, eo);

  stage("verify");
  const std::vector<Transition> before = store.read_transitions(run_id);
  const std::vector<Transition> after = store.read_transitions(child_id);
  const ConceptSpace child_space = concepts_of(store.load_manifest(child_id)).space;
  ShiftInputs in;
  in.before_space = &concepts.space;
  in.after_space = &child_space;
  in.before = before;
  in.after = after;
  in.base_quantile = eo.summary.base_quantile;
  in.seed = eo.seed;
  std::optional<ProbeResult> pb, pa;
  if (options.probe_samples > 0) {
    pb = probe(store, run_id, before_backend, concepts, options.selection.combos, options.probe_samples,
               eo.seed, options.gender_bias, options.backend_options);
    pa = probe(store, child_id, after_backend, concepts, options.selection.combos, options.probe_samples,
               eo.seed, options.gender_bias, options.backend_options);
    in.before_samples = pb->rewards;
    in.after_samples = pa->rewards;
  }
  result.shift = shift_report(in, options.selection, run_id, child_id);
  if (pb && !pb->genders.empty()) result.shift.bias_before = bias_ratio(pb->genders);
  if (pa && !pa->genders.empty()) result.shift.bias_after = bias_ratio(pa->genders);

  const nlohmann::json shift = to_json(result.shift);
  store.save_report(child_id, "shift", shift);
  store.save_report(run_id, "shift-" + child_id, shift);
  stage("done");
  return result;
}

ShiftReport compare_runs(const RunStore& store, const std::string& before, const std::string& after,
                         const std::optional<PreferenceSelection>& selection) {
  const RunManifest mb = store.load_manifest(before);
  const RunManifest ma = store.load_manifest(after);
  if (!selection) {
    if (store.has_report(before, "shift-" + after)) {
      return shift_report_from_json(store.load_report(before, "shift-" + after));
    }
  }
  std::optional<PreferenceSelection> sel = selection;
  if (!sel && ma.details.contains("restructure")) {
    sel = preference_selection_from_json(ma.details.at("restructure").at("selection"));
  }
  if (!sel && store.has_report(before, "preferences")) {
    sel = preference_selection_from_json(store.load_report(before, "preferences"));
  }
  if (!sel) throw Error(ErrorCode::kEmptySelection, "no selection given or recorded for these runs");
  const ConceptFile cb = concepts_of(mb);
  const ConceptFile ca = concepts_of(ma);
  const std::vector<Transition> tb = store.read_transitions(before);
  const std::vector<Transition> ta = store.read_transitions(after);
  ShiftInputs in;
  in.before_space = &cb.space;
  in.after_space = &ca.space;
  in.before = tb;
  in.after = ta;
  in.base_quantile = summary_options_of(mb).base_quantile;
  in.seed = mb.seed;
  return shift_report(in, *sel, before, after);
}

}  // namespace failscape
