#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "failscape/errors.hpp"
#include "failscape/hashing.hpp"
#include "failscape/pipeline.hpp"
#include "failscape/plot.hpp"
#include "failscape/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace failscape;

namespace {

// Settings resolve as flag > FAILSCAPE_* environment variable > config file
// (the subcommand's section first, then the top level) > default.
class Settings {
 public:
  void load(const std::optional<std::string>& path, const std::string& section) {
    section_ = section;
    std::optional<std::string> p = path;
    if (!p) {
      if (const char* e = std::getenv("FAILSCAPE_CONFIG")) p = e;
    }
    if (!p) return;
    config_ = read_json_file(*p);
    if (!config_.is_object()) throw Error(ErrorCode::kJsonParse, *p + ": config must be a JSON object");
    dir_ = fs::absolute(*p).parent_path();
  }

  std::optional<json> config_value(const std::string& key) const {
    if (config_.contains(section_) && config_.at(section_).is_object() &&
        config_.at(section_).contains(key)) {
      return config_.at(section_).at(key);
    }
    if (config_.contains(key)) return config_.at(key);
    return std::nullopt;
  }

  template <typename T>
  T pick(const std::optional<T>& flag, const std::string& key, const T& fallback) const {
    if (flag) return *flag;
    if (const char* e = std::getenv(env_name(key).c_str())) return from_env<T>(e, key);
    if (auto v = config_value(key)) {
      try {
        return v->get<T>();
      } catch (const json::exception&) {
        throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "' has the wrong type");
      }
    }
    return fallback;
  }

  template <typename T>
  std::optional<T> pick_opt(const std::optional<T>& flag, const std::string& key) const {
    if (flag) return flag;
    if (const char* e = std::getenv(env_name(key).c_str())) return from_env<T>(e, key);
    if (auto v = config_value(key)) return v->get<T>();
    return std::nullopt;
  }

  // A JSON object given by file (flag / env / config string) or inline in
  // the config file.
  std::optional<json> object(const std::optional<std::string>& flag_path, const std::string& key) const {
    if (flag_path) return read_json_file(*flag_path);
    if (const char* e = std::getenv(env_name(key).c_str())) return read_json_file(e);
    if (auto v = config_value(key)) {
      if (v->is_string()) return read_json_file(resolve(v->get<std::string>()));
      return v;
    }
    return std::nullopt;
  }

  fs::path resolve(const std::string& p) const {
    return fs::path(p).is_absolute() || dir_.empty() ? fs::path(p) : dir_ / p;
  }
  const fs::path& dir() const { return dir_; }

  static std::string env_name(const std::string& key) {
    std::string out = "FAILSCAPE_";
    for (char c : key) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }

 private:
  template <typename T>
  static T from_env(const char* text, const std::string& key) {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      const std::string s = text;
      return s == "1" || s == "true" || s == "yes" || s == "on";
    } else {
      std::istringstream in(text);
      T v{};
      if (!(in >> v) || !in.eof()) {
        throw Error(ErrorCode::kInvalidArgument, env_name(key) + " is not a valid number");
      }
      return v;
    }
  }

  json config_ = json::object();
  std::string section_;
  fs::path dir_;
};

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

ActionCombo parse_combo(const std::string& text) {
  ActionCombo c;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorCode::kInvalidSelection, "combo '" + text + "' must be comma-separated indices");
    }
    c.indices.push_back(std::stoull(part));
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"failscape: discover, summarize and restructure the failure landscape of a generative model"};
  app.require_subcommand(1);
  std::optional<std::string> config_path, store_flag;
  app.add_option("--config", config_path, "JSON config file (env FAILSCAPE_CONFIG)");
  app.add_option("--store", store_flag, "run store directory (env FAILSCAPE_STORE)");

  // Shared backend flags.
  struct BackendFlags {
    std::optional<std::string> backend, landscape, backend_config, cache_dir, cache_mode;
  };
  auto add_backend_flags = [](CLI::App* cmd, BackendFlags& f) {
    cmd->add_option("--backend", f.backend, "synthetic | external");
    cmd->add_option("--landscape", f.landscape, "planted landscape JSON (synthetic backend)");
    cmd->add_option("--backend-config", f.backend_config, "backend configuration JSON");
    cmd->add_option("--cache-dir", f.cache_dir, "reply cache directory (external backend)");
    cmd->add_option("--cache-mode", f.cache_mode, "read-write | replay | disabled");
  };

  // screen
  auto* screen_cmd = app.add_subcommand("screen", "prune the action space by main-effects screening");
  std::optional<std::string> s_concepts, s_mode, s_out, s_report;
  std::optional<std::size_t> s_budget, s_workers;
  std::optional<std::uint64_t> s_seed;
  BackendFlags s_backend;
  screen_cmd->add_option("--concepts", s_concepts, "concept file (dimensions + templates)");
  screen_cmd->add_option("--mode", s_mode, "per-dimension | global-mean");
  screen_cmd->add_option("--budget", s_budget, "sample this many combinations instead of all");
  screen_cmd->add_option("--seed", s_seed, "seed");
  screen_cmd->add_option("--workers", s_workers, "concurrent evaluations (external backends)");
  screen_cmd->add_option("--out", s_out, "write the pruned concept file here");
  screen_cmd->add_option("--report", s_report, "write the screening report here");
  add_backend_flags(screen_cmd, s_backend);

  // explore
  auto* explore_cmd = app.add_subcommand("explore", "run discovery and store the run");
  std::optional<std::string> e_concepts, e_agent, e_agent_config, e_run_id;
  std::optional<std::size_t> e_steps, e_episode_length, e_top_k;
  std::optional<std::uint64_t> e_seed;
  std::optional<double> e_base_quantile;
  std::optional<bool> e_wall_clock;
  BackendFlags e_backend;
  explore_cmd->add_option("--concepts", e_concepts, "concept file (dimensions + templates)");
  explore_cmd->add_option("--agent", e_agent, "dqn | ppo | a2c");
  explore_cmd->add_option("--agent-config", e_agent_config, "agent hyperparameters JSON");
  explore_cmd->add_option("--steps", e_steps, "environment steps");
  explore_cmd->add_option("--seed", e_seed, "run seed");
  explore_cmd->add_option("--run-id", e_run_id, "id for the new run (generated by default)");
  explore_cmd->add_option("--episode-length", e_episode_length, "steps per episode");
  explore_cmd->add_option("--top-k", e_top_k, "cells listed in the summary");
  explore_cmd->add_option("--base-quantile", e_base_quantile, "failure base quantile of cell means");
  explore_cmd->add_flag("--wall-clock{true}", e_wall_clock, "timestamp transitions with the wall clock");
  add_backend_flags(explore_cmd, e_backend);

  // resume
  auto* resume_cmd = app.add_subcommand("resume", "finish a run left in status running");
  std::string r_run;
  BackendFlags r_backend;
  resume_cmd->add_option("run", r_run, "run id")->required();
  add_backend_flags(resume_cmd, r_backend);

  // summarize
  auto* summarize_cmd = app.add_subcommand("summarize", "rebuild a run's summary and plot data");
  std::string m_run;
  std::optional<std::string> m_out, m_plot, m_html;
  summarize_cmd->add_option("run", m_run, "run id")->required();
  summarize_cmd->add_option("--out", m_out, "also write the summary report here");
  summarize_cmd->add_option("--plot-data", m_plot, "also write the plot-data export here");
  summarize_cmd->add_option("--html", m_html, "write a static HTML landscape plot here");

  // restructure
  auto* restructure_cmd = app.add_subcommand("restructure", "mitigate selected failure modes and re-explore");
  std::string t_run;
  std::optional<std::string> t_selection, t_hook_url, t_hook_config, t_note, t_exemplar;
  std::vector<std::string> t_combos, t_hook_cmd;
  std::optional<std::size_t> t_steps, t_probes, t_target, t_max;
  std::optional<std::uint64_t> t_seed;
  std::optional<double> t_hook_timeout;
  std::optional<bool> t_equal_gender, t_gender_bias;
  BackendFlags t_backend;
  restructure_cmd->add_option("run", t_run, "run id")->required();
  restructure_cmd->add_option("--selection", t_selection, "PreferenceSelection JSON file");
  restructure_cmd->add_option("--combo", t_combos, "selected combo as comma-separated indices (repeatable)");
  restructure_cmd->add_option("--note", t_note, "note stored with the selection");
  restructure_cmd->add_option("--max-selection", t_max, "largest allowed selection");
  restructure_cmd->add_option("--hook-config", t_hook_config, "fine-tune hook JSON {command|url, timeout_s}");
  restructure_cmd->add_option("--hook-cmd", t_hook_cmd, "fine-tune hook command and arguments")->expected(-1);
  restructure_cmd->add_option("--hook-url", t_hook_url, "fine-tune hook HTTP URL");
  restructure_cmd->add_option("--hook-timeout", t_hook_timeout, "fine-tune hook timeout in seconds");
  restructure_cmd->add_option("--steps", t_steps, "re-exploration steps (parent's by default)");
  restructure_cmd->add_option("--seed", t_seed, "re-exploration seed (parent's by default)");
  restructure_cmd->add_option("--probe-samples", t_probes, "direct evaluations of the selection per model");
  restructure_cmd->add_option("--target-samples", t_target, "mitigation dataset size");
  restructure_cmd->add_option("--exemplar-endpoint", t_exemplar, "exemplar generator provenance");
  restructure_cmd->add_flag("--equal-gender{true}", t_equal_gender, "balance the dataset by gender");
  restructure_cmd->add_flag("--gender-bias{true}", t_gender_bias, "classify probe images and report bias");
  add_backend_flags(restructure_cmd, t_backend);

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "shift report between two runs");
  std::string c_before, c_after;
  std::optional<std::string> c_selection, c_out;
  compare_cmd->add_option("before", c_before, "before run id")->required();
  compare_cmd->add_option("after", c_after, "after run id")->required();
  compare_cmd->add_option("--selection", c_selection, "PreferenceSelection JSON file");
  compare_cmd->add_option("--out", c_out, "also write the report here");

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "re-execute a run from the reply cache only");
  std::string p_run;
  std::optional<std::string> p_cache_dir;
  replay_cmd->add_option("run", p_run, "run id")->required();
  replay_cmd->add_option("--cache-dir", p_cache_dir, "reply cache directory");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "serve the HTTP API");
  std::optional<std::string> v_host, v_static, v_hook_config;
  std::optional<int> v_port;
  std::optional<std::size_t> v_max, v_workers, v_probes;
  BackendFlags v_backend;
  serve_cmd->add_option("--host", v_host, "bind address");
  serve_cmd->add_option("--port", v_port, "port (0 picks a free one)");
  serve_cmd->add_option("--static-dir", v_static, "UI assets served at /");
  serve_cmd->add_option("--max-selection", v_max, "largest allowed selection");
  serve_cmd->add_option("--workers", v_workers, "restructure job workers");
  serve_cmd->add_option("--probe-samples", v_probes, "probe evaluations per restructure");
  serve_cmd->add_option("--hook-config", v_hook_config, "fine-tune hook JSON for restructure jobs");
  add_backend_flags(serve_cmd, v_backend);

  // synthetic-hook
  auto* hook_cmd = app.add_subcommand("synthetic-hook", "fine-tune hook for synthetic runs");
  std::string h_spec;
  hook_cmd->add_option("spec", h_spec, "mitigation spec path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Settings s;
    const std::string section = app.get_subcommands().front()->get_name();
    s.load(config_path, section);
    const fs::path store_root = s.pick<std::string>(store_flag, "store", "failscape-store");

    auto backend_options = [&](const BackendFlags& f) {
      BackendOptions o;
      o.base_dir = s.dir().empty() ? fs::current_path() : s.dir();
      const auto cache = s.pick_opt<std::string>(f.cache_dir, "cache_dir");
      o.cache_dir = cache ? fs::path(*cache) : store_root / "cache";
      o.cache_mode = cache_mode_from_string(s.pick<std::string>(f.cache_mode, "cache_mode", "read-write"));
      return o;
    };
    auto backend_config = [&](const BackendFlags& f) -> json {
      if (auto j = s.object(f.backend_config, "backend_config")) return *j;
      if (auto j = s.config_value("backend"); j && j->is_object()) return *j;
      const std::string kind = s.pick<std::string>(f.backend, "backend", "synthetic");
      if (kind != "synthetic") {
        throw Error(ErrorCode::kInvalidArgument, "external backends need --backend-config");
      }
      const auto landscape = s.pick_opt<std::string>(f.landscape, "landscape");
      if (!landscape) throw Error(ErrorCode::kInvalidArgument, "synthetic backend needs --landscape");
      return json{{"kind", "synthetic"}, {"landscape", read_json_file(s.resolve(*landscape))}};
    };
    auto concepts_file = [&](const std::optional<std::string>& flag) {
      const auto p = s.pick_opt<std::string>(flag, "concepts");
      if (!p) throw Error(ErrorCode::kInvalidArgument, "--concepts is required");
      return load_concept_file(s.resolve(*p));
    };
    auto hook_config = [&](const std::optional<std::string>& file) -> std::optional<HookConfig> {
      if (auto j = s.object(file, "hook")) return hook_config_from_json(*j);
      return std::nullopt;
    };

    if (screen_cmd->parsed()) {
      const ConceptFile concepts = concepts_file(s_concepts);
      ScreeningOptions o;
      o.mode = screening_mode_from_string(s.pick<std::string>(s_mode, "mode", "per-dimension"));
      o.budget = s.pick_opt<std::size_t>(s_budget, "budget");
      o.seed = s.pick<std::uint64_t>(s_seed, "seed", 0);
      o.workers = s.pick<std::size_t>(s_workers, "workers", 1);
      const ScreeningResult r = screen(concepts, backend_config(s_backend), o, backend_options(s_backend));
      const json report = to_json(r.report);
      const json pruned = to_json(ConceptFile{r.pruned, concepts.templates});
      if (auto out = s.pick_opt<std::string>(s_out, "out")) write_json(*out, pruned);
      if (auto rep = s.pick_opt<std::string>(s_report, "report")) write_json(*rep, report);
      print({{"report", report}, {"pruned", pruned}});
    } else if (explore_cmd->parsed()) {
      RunStore store(store_root);
      const ConceptFile concepts = concepts_file(e_concepts);
      ExploreOptions o;
      o.agent = agent_kind_from_string(s.pick<std::string>(e_agent, "agent", "dqn"));
      if (auto j = s.object(e_agent_config, "agent_config")) o.agent_config = agent_config_from_json(*j);
      o.steps = s.pick<std::size_t>(e_steps, "steps", 1000);
      o.seed = s.pick<std::uint64_t>(e_seed, "seed", 0);
      o.episode_length = s.pick<std::size_t>(e_episode_length, "episode_length", 8);
      o.summary.top_k = s.pick<std::size_t>(e_top_k, "top_k", 5);
      o.summary.base_quantile = s.pick<double>(e_base_quantile, "base_quantile", 0.5);
      o.wall_clock = s.pick_opt<bool>(e_wall_clock, "wall_clock");
      o.run_id = e_run_id;
      o.backend = backend_config(e_backend);
      o.backend_options = backend_options(e_backend);
      const ExploreResult r = explore(store, concepts, o);
      print({{"run_id", r.run_id},
             {"transitions", r.summary.transitions},
             {"sum_reward", r.summary.sum_reward},
             {"entropy", r.summary.entropy},
             {"max_count", r.summary.max_count},
             {"top_k", r.summary.top_k},
             {"network_calls", r.network_calls}});
    } else if (resume_cmd->parsed()) {
      RunStore store(store_root);
      const ExploreResult r = resume(store, r_run, backend_options(r_backend));
      print({{"run_id", r.run_id}, {"transitions", r.summary.transitions}, {"network_calls", r.network_calls}});
    } else if (summarize_cmd->parsed()) {
      RunStore store(store_root);
      const SummaryReport r = summarize(store, m_run, true);
      const json report = to_json(r);
      if (m_out) write_json(*m_out, report);
      if (m_plot) write_json(*m_plot, plot_data(r));
      if (m_html) write_file_atomic(*m_html, render_plot_html(plot_data(r), "Failure landscape of run " + m_run));
      print(report);
    } else if (restructure_cmd->parsed()) {
      RunStore store(store_root);
      RestructureOptions o;
      if (t_selection) {
        o.selection = preference_selection_from_json(read_json_file(*t_selection));
      } else if (!t_combos.empty()) {
        for (const auto& c : t_combos) o.selection.combos.push_back(parse_combo(c));
        o.selection.selector = "cli";
        o.selection.note = t_note.value_or("");
      } else if (store.has_report(t_run, "preferences")) {
        o.selection = preference_selection_from_json(store.load_report(t_run, "preferences"));
      } else {
        throw Error(ErrorCode::kEmptySelection, "give --selection or --combo (or store preferences first)");
      }
      o.max_selection = s.pick<std::size_t>(t_max, "max_selection", kDefaultMaxSelection);
      if (!t_hook_cmd.empty() || t_hook_url) {
        HookConfig h;
        h.command = t_hook_cmd;
        h.url = t_hook_url.value_or("");
        h.timeout_s = t_hook_timeout.value_or(h.timeout_s);
        o.hook = h;
      } else {
        o.hook = hook_config(t_hook_config);
      }
      o.steps = s.pick_opt<std::size_t>(t_steps, "steps");
      o.seed = s.pick_opt<std::uint64_t>(t_seed, "seed");
      o.probe_samples = s.pick<std::size_t>(t_probes, "probe_samples", 200);
      o.mitigation.target_samples = s.pick_opt<std::size_t>(t_target, "target_samples");
      o.mitigation.equal_gender = s.pick<bool>(t_equal_gender, "equal_gender", false);
      o.mitigation.exemplar_endpoint = s.pick<std::string>(t_exemplar, "exemplar_endpoint", "");
      o.gender_bias = s.pick<bool>(t_gender_bias, "gender_bias", false);
      o.backend_options = backend_options(t_backend);
      o.progress = [](const std::string& stage) { std::cerr << "restructure: " << stage << "\n"; };
      const RestructureResult r = restructure(store, t_run, o);
      print({{"child_run_id", r.child_run_id},
             {"spec_path", r.spec_path.string()},
             {"hook", to_json(r.hook)},
             {"shift", to_json(r.shift)}});
    } else if (compare_cmd->parsed()) {
      RunStore store(store_root);
      std::optional<PreferenceSelection> sel;
      if (c_selection) sel = preference_selection_from_json(read_json_file(*c_selection));
      const json report = to_json(compare_runs(store, c_before, c_after, sel));
      if (c_out) write_json(*c_out, report);
      print(report);
    } else if (replay_cmd->parsed()) {
      RunStore store(store_root);
      BackendOptions o;
      const auto cache = s.pick_opt<std::string>(p_cache_dir, "cache_dir");
      o.cache_dir = cache ? fs::path(*cache) : store_root / "cache";
      const ReplayResult r = replay(store, p_run, o);
      print({{"run_id", r.run_id},
             {"identical", r.identical},
             {"compared", r.compared},
             {"first_mismatch", r.first_mismatch ? json(*r.first_mismatch) : json(nullptr)},
             {"network_calls", r.network_calls}});
      return r.identical ? 0 : 3;
    } else if (serve_cmd->parsed()) {
      ServiceConfig cfg;
      cfg.store_root = store_root;
      cfg.max_selection = s.pick<std::size_t>(v_max, "max_selection", kDefaultMaxSelection);
      cfg.workers = s.pick<std::size_t>(v_workers, "workers", 2);
      cfg.restructure.probe_samples = s.pick<std::size_t>(v_probes, "probe_samples", 200);
      cfg.restructure.hook = hook_config(v_hook_config);
      cfg.restructure.backend_options = backend_options(v_backend);
      if (auto dir = s.pick_opt<std::string>(v_static, "static_dir")) cfg.static_dir = *dir;
      Service service(cfg);
      const std::string host = s.pick<std::string>(v_host, "host", "127.0.0.1");
      const int port = s.pick<int>(v_port, "port", 8080);
      service.listen(host, port, [&](int bound) {
        std::cout << "listening on http://" << host << ":" << bound << std::endl;
      });
    } else if (hook_cmd->parsed()) {
      std::cout << "ENDPOINT=" << run_synthetic_hook(h_spec).string() << std::endl;
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << api_error(e.code(), e.what()).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}
