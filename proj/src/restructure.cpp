#include "failscape/restructure.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <fstream>
#include <sstream>

#include "failscape/agents.hpp"
#include "failscape/errors.hpp"
#include "failscape/rng.hpp"
#include "failscape/subprocess.hpp"

namespace failscape {

// ---------------------------------------------------------------------------
// Selection

void validate_selection(const PreferenceSelection& s, const ConceptSpace& space, std::size_t max_size) {
  if (s.combos.empty()) throw Error(ErrorCode::kEmptySelection, "selection is empty");
  if (s.combos.size() > max_size) {
    throw Error(ErrorCode::kInvalidSelection, "selection has " + std::to_string(s.combos.size()) +
                                                  " combos; at most " + std::to_string(max_size) +
                                                  " allowed");
  }
  std::set<ActionCombo> seen;
  for (const auto& c : s.combos) {
    if (!space.contains(c)) throw Error(ErrorCode::kInvalidSelection, "selected combo outside the space");
    if (!seen.insert(c).second) throw Error(ErrorCode::kInvalidSelection, "selected combo repeated");
  }
}

nlohmann::json to_json(const PreferenceSelection& s) {
  nlohmann::json combos = nlohmann::json::array();
  for (const auto& c : s.combos) combos.push_back(to_json(c));
  return {{"combos", combos}, {"selector", s.selector}, {"timestamp", s.timestamp}, {"note", s.note}};
}

PreferenceSelection preference_selection_from_json(const nlohmann::json& j) {
  try {
    PreferenceSelection s;
    if (!j.is_object() || !j.contains("combos") || !j.at("combos").is_array()) {
      throw Error(ErrorCode::kInvalidSelection, "selection needs a 'combos' array");
    }
    for (const auto& c : j.at("combos")) {
      try {
        s.combos.push_back(combo_from_json(c));
      } catch (const Error& e) {
        throw Error(ErrorCode::kInvalidSelection, e.what());
      }
    }
    s.selector = j.value("selector", std::string());
    s.timestamp = j.value("timestamp", std::string());
    s.note = j.value("note", std::string());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidSelection, std::string("selection: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mitigation dataset

MitigationDatasetSpec build_mitigation_spec(const PreferenceSelection& selection,
                                            const ConceptSpace& space,
                                            std::span<const PromptTemplate> templates,
                                            const MitigationOptions& options) {
  validate_selection(selection, space, std::max(selection.combos.size(), std::size_t{1}));
  if (templates.empty()) throw Error(ErrorCode::kEmptyTemplateSet, "mitigation spec needs templates");
  MitigationDatasetSpec spec;
  spec.selection = selection;
  spec.exemplar_endpoint = options.exemplar_endpoint;
  std::set<std::string> rendered;
  for (const auto& combo : selection.combos) {
    const std::size_t flat = flat_index(combo, space);
    for (const auto& t : templates) {
      std::string prompt = render_prompt(t, combo, space);
      if (!rendered.insert(prompt).second) continue;
      spec.prompts.push_back({flat, combo, t.id, std::move(prompt)});
    }
  }
  spec.target_samples = options.target_samples.value_or(spec.prompts.size());
  if (options.equal_gender) {
    if (spec.target_samples % 2 != 0) {
      throw Error(ErrorCode::kInvalidArgument, "equal-gender balance needs an even target");
    }
    spec.balance["equal_gender"] = {{"male", spec.target_samples / 2},
                                    {"female", spec.target_samples / 2}};
  }
  return spec;
}

nlohmann::json to_json(const MitigationDatasetSpec& s) {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& p : s.prompts) {
    prompts.push_back({{"flat", p.flat},
                       {"combo", to_json(p.combo)},
                       {"template_id", p.template_id},
                       {"prompt", p.prompt}});
  }
  return {{"schema_version", s.schema_version},
          {"selection", to_json(s.selection)},
          {"prompts", prompts},
          {"target_samples", s.target_samples},
          {"balance", s.balance},
          {"exemplar_endpoint", s.exemplar_endpoint},
          {"model_ref", s.model_ref ? nlohmann::json(*s.model_ref) : nlohmann::json(nullptr)}};
}

MitigationDatasetSpec mitigation_spec_from_json(const nlohmann::json& j) {
  check_schema_version(j, 1, "mitigation spec");
  try {
    MitigationDatasetSpec s;
    s.schema_version = j.at("schema_version").get<std::string>();
    s.selection = preference_selection_from_json(j.at("selection"));
    for (const auto& p : j.at("prompts")) {
      s.prompts.push_back({p.at("flat").get<std::size_t>(), combo_from_json(p.at("combo")),
                           p.at("template_id").get<std::string>(), p.at("prompt").get<std::string>()});
    }
    s.target_samples = j.at("target_samples").get<std::size_t>();
    s.balance = j.value("balance", nlohmann::json::object());
    s.exemplar_endpoint = j.value("exemplar_endpoint", std::string());
    if (j.contains("model_ref") && !j.at("model_ref").is_null()) {
      s.model_ref = j.at("model_ref").get<std::string>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("mitigation spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hook

nlohmann::json to_json(const HookConfig& h) {
  return {{"command", h.command}, {"url", h.url}, {"timeout_s", h.timeout_s}};
}

HookConfig hook_config_from_json(const nlohmann::json& j) {
  try {
    HookConfig h;
    h.command = j.value("command", std::vector<std::string>{});
    h.url = j.value("url", std::string());
    h.timeout_s = j.value("timeout_s", h.timeout_s);
    if (h.command.empty() == h.url.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "hook needs exactly one of 'command' or 'url'");
    }
    if (!(h.timeout_s > 0.0)) throw Error(ErrorCode::kInvalidArgument, "hook timeout must be > 0");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("hook config: ") + e.what());
  }
}

nlohmann::json to_json(const HookResult& r) {
  return {{"endpoint", r.endpoint},
          {"exit_code", r.exit_code},
          {"stdout", r.stdout_text},
          {"stderr", r.stderr_text},
          {"seconds", r.seconds}};
}

std::optional<std::string> parse_endpoint_line(const std::string& output) {
  std::optional<std::string> found;
  std::istringstream in(output);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("ENDPOINT=", 0) == 0 && line.size() > 9) found = line.substr(9);
  }
  return found;
}

HookResult invoke_finetune_hook(const std::filesystem::path& spec_path, const HookConfig& hook,
                                std::shared_ptr<HttpTransport> transport) {
  HookResult result;
  if (!hook.command.empty()) {
    std::vector<std::string> argv;
    bool substituted = false;
    for (auto arg : hook.command) {
      for (std::size_t p = arg.find("{spec}"); p != std::string::npos; p = arg.find("{spec}")) {
        arg.replace(p, 6, spec_path.string());
        substituted = true;
      }
      argv.push_back(std::move(arg));
    }
    if (!substituted) argv.push_back(spec_path.string());
    const ProcessResult p = run_process(argv, hook.timeout_s);
    result.exit_code = p.exit_code;
    result.stdout_text = p.stdout_text;
    result.stderr_text = p.stderr_text;
    result.seconds = p.seconds;
    if (p.timed_out) {
      throw Error(ErrorCode::kHookTimeout,
                  "fine-tune hook timed out after " + std::to_string(hook.timeout_s) + " s");
    }
    if (p.exit_code != 0) {
      throw Error(ErrorCode::kHookFailed, "fine-tune hook exited with status " +
                                              std::to_string(p.exit_code) + ": " + p.stderr_text);
    }
    const auto endpoint = parse_endpoint_line(p.stdout_text);
    if (!endpoint) {
      throw Error(ErrorCode::kHookFailed, "fine-tune hook printed no ENDPOINT= line: " + p.stderr_text);
    }
    result.endpoint = *endpoint;
    return result;
  }
  if (hook.url.empty()) throw Error(ErrorCode::kInvalidArgument, "hook has neither command nor url");
  if (!transport) transport = std::make_shared<HttplibTransport>();
  const auto scheme_end = hook.url.find("://");
  const auto path_start = hook.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  HttpRequest req;
  req.base_url = hook.url.substr(0, path_start);
  req.path = path_start == std::string::npos ? "/" : hook.url.substr(path_start);
  nlohmann::json spec = nlohmann::json::parse(std::ifstream(spec_path), nullptr, false);
  req.body = nlohmann::json{{"spec_path", spec_path.string()}, {"spec", spec}}.dump();
  req.timeout_s = hook.timeout_s;
  HttpResponse r;
  try {
    r = transport->post(req);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kTimeout) throw Error(ErrorCode::kHookTimeout, e.what());
    throw Error(ErrorCode::kHookFailed, e.what());
  }
  result.exit_code = r.status;
  result.stdout_text = r.body;
  if (r.status < 200 || r.status >= 300) {
    throw Error(ErrorCode::kHookFailed, "fine-tune hook returned HTTP " + std::to_string(r.status) +
                                            ": " + r.body.substr(0, 500));
  }
  const auto j = nlohmann::json::parse(r.body, nullptr, false);
  if (j.is_object() && j.contains("endpoint") && j.at("endpoint").is_string()) {
    result.endpoint = j.at("endpoint").get<std::string>();
  } else if (auto line = parse_endpoint_line(r.body)) {
    result.endpoint = *line;
  } else {
    throw Error(ErrorCode::kHookFailed, "fine-tune hook reply names no endpoint");
  }
  return result;
}

PlantedLandscape suppress_modes(const PlantedLandscape& landscape,
                                const std::vector<ActionCombo>& selected) {
  PlantedLandscape out = landscape;
  out.modes.clear();
  for (const auto& m : landscape.modes) {
    const bool covers = std::any_of(selected.begin(), selected.end(), [&](const ActionCombo& c) {
      return c.indices.size() == m.combo.indices.size() && l1_distance(c, m.combo) <= m.radius;
    });
    if (!covers) out.modes.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verification

namespace {

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

ReductionVerdict reduced_failures_check(std::span<const double> before, std::span<const double> after,
                                        std::size_t bootstrap_samples, std::uint64_t seed) {
  if (before.empty() || after.empty()) {
    throw Error(ErrorCode::kEmptySamples, "reduction check needs samples before and after");
  }
  ReductionVerdict v;
  v.n_before = before.size();
  v.n_after = after.size();
  v.before_mean = mean_of(before);
  v.after_mean = mean_of(after);
  v.difference = v.after_mean - v.before_mean;
  v.reduced = v.after_mean < v.before_mean;
  if (bootstrap_samples == 0) {
    v.ci_low = v.ci_high = v.difference;
    return v;
  }
  Rng rng = make_rng(seed, "bootstrap");
  std::uniform_int_distribution<std::size_t> pick_b(0, before.size() - 1), pick_a(0, after.size() - 1);
  std::vector<double> diffs;
  diffs.reserve(bootstrap_samples);
  for (std::size_t b = 0; b < bootstrap_samples; ++b) {
    double sb = 0.0, sa = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) sb += before[pick_b(rng)];
    for (std::size_t i = 0; i < after.size(); ++i) sa += after[pick_a(rng)];
    diffs.push_back(sa / static_cast<double>(after.size()) - sb / static_cast<double>(before.size()));
  }
  std::sort(diffs.begin(), diffs.end());
  v.ci_low = quantile_sorted(diffs, 0.025);
  v.ci_high = quantile_sorted(diffs, 0.975);
  return v;
}

nlohmann::json to_json(const ReductionVerdict& v) {
  return {{"before_mean", v.before_mean}, {"after_mean", v.after_mean}, {"difference", v.difference},
          {"ci_low", v.ci_low},           {"ci_high", v.ci_high},       {"reduced", v.reduced},
          {"n_before", v.n_before},       {"n_after", v.n_after}};
}

ReductionVerdict reduction_verdict_from_json(const nlohmann::json& j) {
  ReductionVerdict v;
  v.before_mean = j.at("before_mean").get<double>();
  v.after_mean = j.at("after_mean").get<double>();
  v.difference = j.at("difference").get<double>();
  v.ci_low = j.at("ci_low").get<double>();
  v.ci_high = j.at("ci_high").get<double>();
  v.reduced = j.at("reduced").get<bool>();
  v.n_before = j.at("n_before").get<std::size_t>();
  v.n_after = j.at("n_after").get<std::size_t>();
  return v;
}

BiasRatio bias_ratio(std::span<const GenderLabel> labels) {
  if (labels.empty()) throw Error(ErrorCode::kEmptySamples, "bias ratio of no classifications");
  BiasRatio b;
  for (auto l : labels) {
    switch (l) {
      case GenderLabel::kMale: ++b.male; break;
      case GenderLabel::kFemale: ++b.female; break;
      case GenderLabel::kAmbiguous: ++b.ambiguous; break;
    }
  }
  if (b.female > 0) {
    b.ratio = static_cast<double>(b.male) / static_cast<double>(b.female);
  } else if (b.male > 0) {
    b.infinite = true;
  } else {
    b.undefined = true;
  }
  b.ambiguous_rate = static_cast<double>(b.ambiguous) / static_cast<double>(labels.size());
  return b;
}

nlohmann::json to_json(const BiasRatio& b) {
  return {{"male", b.male},
          {"female", b.female},
          {"ambiguous", b.ambiguous},
          {"ratio", b.ratio ? nlohmann::json(*b.ratio) : nlohmann::json(nullptr)},
          {"infinite", b.infinite},
          {"undefined", b.undefined},
          {"ambiguous_rate", b.ambiguous_rate}};
}

namespace {

BiasRatio bias_from_json(const nlohmann::json& j) {
  BiasRatio b;
  b.male = j.at("male").get<std::size_t>();
  b.female = j.at("female").get<std::size_t>();
  b.ambiguous = j.at("ambiguous").get<std::size_t>();
  if (!j.at("ratio").is_null()) b.ratio = j.at("ratio").get<double>();
  b.infinite = j.at("infinite").get<bool>();
  b.undefined = j.at("undefined").get<bool>();
  b.ambiguous_rate = j.at("ambiguous_rate").get<double>();
  return b;
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_double(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

ShiftReport shift_report(const ShiftInputs& in, const PreferenceSelection& selection,
                         const std::string& before_run, const std::string& after_run) {
  if (!in.before_space || !in.after_space) {
    throw Error(ErrorCode::kInvalidArgument, "shift report needs both concept spaces");
  }
  if (!(*in.before_space == *in.after_space)) {
    throw Error(ErrorCode::kSpaceMismatch, "runs were explored over different concept spaces");
  }
  const ConceptSpace& space = *in.before_space;
  validate_selection(selection, space, std::max<std::size_t>(selection.combos.size(), 1));
  if (in.before.empty() || in.after.empty()) {
    throw Error(ErrorCode::kEmptySamples, "shift report needs transitions on both sides");
  }

  ShiftReport r;
  r.before_run = before_run;
  r.after_run = after_run;
  r.selection = selection;
  r.before_counts.assign(space.size(), 0);
  r.after_counts.assign(space.size(), 0);
  for (const auto& t : in.before) ++r.before_counts.at(t.action);
  for (const auto& t : in.after) ++r.after_counts.at(t.action);
  r.before_entropy = entropy_of_counts(r.before_counts);
  r.after_entropy = entropy_of_counts(r.after_counts);
  r.before_argmax = static_cast<std::size_t>(
      std::max_element(r.before_counts.begin(), r.before_counts.end()) - r.before_counts.begin());
  r.after_argmax = static_cast<std::size_t>(
      std::max_element(r.after_counts.begin(), r.after_counts.end()) - r.after_counts.begin());

  const auto before_cells = aggregate(in.before, space);
  const auto after_cells = aggregate(in.after, space);
  auto cell_mean = [](const std::vector<LandscapeCell>& cells, std::size_t flat) -> std::optional<double> {
    for (const auto& c : cells) {
      if (c.flat == flat) return c.mean;
    }
    return std::nullopt;
  };

  std::set<std::size_t> chosen;
  for (const auto& c : selection.combos) chosen.insert(flat_index(c, space));
  for (std::size_t flat : chosen) {
    r.combos.push_back({flat, r.before_counts[flat], r.after_counts[flat],
                        cell_mean(before_cells, flat), cell_mean(after_cells, flat)});
  }

  std::vector<double> before_samples, after_samples;
  if (in.before_samples && in.after_samples) {
    r.sample_source = "probe";
    before_samples = *in.before_samples;
    after_samples = *in.after_samples;
  } else {
    r.sample_source = "transitions";
    for (const auto& t : in.before) {
      if (t.reward && chosen.contains(t.action)) before_samples.push_back(*t.reward);
    }
    for (const auto& t : in.after) {
      if (t.reward && chosen.contains(t.action)) after_samples.push_back(*t.reward);
    }
  }
  r.verdict = reduced_failures_check(before_samples, after_samples, 2000, in.seed);

  const auto mb = before_cells.empty()
                      ? std::nullopt
                      : failure_measure(before_cells, mean_quantile(before_cells, in.base_quantile));
  const auto ma = after_cells.empty()
                      ? std::nullopt
                      : failure_measure(after_cells, mean_quantile(after_cells, in.base_quantile));
  r.before_measure_empty = !mb;
  r.after_measure_empty = !ma;
  r.shift_distance = (mb && ma) ? wasserstein_distance(*mb, *ma) : 0.0;
  return r;
}

nlohmann::json to_json(const ShiftReport& r) {
  nlohmann::json combos = nlohmann::json::array();
  for (const auto& c : r.combos) {
    combos.push_back({{"flat", c.flat},
                      {"before_visits", c.before_visits},
                      {"after_visits", c.after_visits},
                      {"before_mean", opt(c.before_mean)},
                      {"after_mean", opt(c.after_mean)}});
  }
  return {{"schema_version", r.schema_version},
          {"before_run", r.before_run},
          {"after_run", r.after_run},
          {"selection", to_json(r.selection)},
          {"before_counts", r.before_counts},
          {"after_counts", r.after_counts},
          {"combos", combos},
          {"verdict", to_json(r.verdict)},
          {"reduced", r.verdict.reduced},
          {"sample_source", r.sample_source},
          {"shift_distance", r.shift_distance},
          {"before_measure_empty", r.before_measure_empty},
          {"after_measure_empty", r.after_measure_empty},
          {"before_argmax", r.before_argmax},
          {"after_argmax", r.after_argmax},
          {"before_entropy", r.before_entropy},
          {"after_entropy", r.after_entropy},
          {"bias_before", r.bias_before ? to_json(*r.bias_before) : nlohmann::json(nullptr)},
          {"bias_after", r.bias_after ? to_json(*r.bias_after) : nlohmann::json(nullptr)}};
}

ShiftReport shift_report_from_json(const nlohmann::json& j) {
  check_schema_version(j, 1, "shift report");
  try {
    ShiftReport r;
    r.schema_version = j.at("schema_version").get<std::string>();
    r.before_run = j.at("before_run").get<std::string>();
    r.after_run = j.at("after_run").get<std::string>();
    r.selection = preference_selection_from_json(j.at("selection"));
    r.before_counts = j.at("before_counts").get<std::vector<std::size_t>>();
    r.after_counts = j.at("after_counts").get<std::vector<std::size_t>>();
    for (const auto& c : j.at("combos")) {
      r.combos.push_back({c.at("flat").get<std::size_t>(), c.at("before_visits").get<std::size_t>(),
                          c.at("after_visits").get<std::size_t>(), opt_double(c.at("before_mean")),
                          opt_double(c.at("after_mean"))});
    }
    r.verdict = reduction_verdict_from_json(j.at("verdict"));
    r.sample_source = j.at("sample_source").get<std::string>();
    r.shift_distance = j.at("shift_distance").get<double>();
    r.before_measure_empty = j.at("before_measure_empty").get<bool>();
    r.after_measure_empty = j.at("after_measure_empty").get<bool>();
    r.before_argmax = j.at("before_argmax").get<std::size_t>();
    r.after_argmax = j.at("after_argmax").get<std::size_t>();
    r.before_entropy = j.at("before_entropy").get<double>();
    r.after_entropy = j.at("after_entropy").get<double>();
    if (!j.at("bias_before").is_null()) r.bias_before = bias_from_json(j.at("bias_before"));
    if (!j.at("bias_after").is_null()) r.bias_after = bias_from_json(j.at("bias_after"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("shift report: ") + e.what());
  }
}

}  // namespace failscape
