#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/concept_space.hpp"
#include "failscape/environment.hpp"
#include "failscape/gateway.hpp"
#include "failscape/landscape.hpp"
#include "failscape/transition.hpp"

namespace failscape {

inline constexpr const char* kRestructureSchemaVersion = "1.0";
inline constexpr std::size_t kDefaultMaxSelection = 4;

// ---------------------------------------------------------------------------
// Human selection

struct PreferenceSelection {
  std::vector<ActionCombo> combos;
  std::string selector;
  std::string timestamp;  // free-form, ISO-8601 by convention
  std::string note;

  bool operator==(const PreferenceSelection&) const = default;
};

// Throws kEmptySelection when empty; kInvalidSelection when larger than
// `max_size`, duplicated, or outside the space.
void validate_selection(const PreferenceSelection& selection, const ConceptSpace& space,
                        std::size_t max_size = kDefaultMaxSelection);

nlohmann::json to_json(const PreferenceSelection& s);
PreferenceSelection preference_selection_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Mitigation dataset

struct MitigationOptions {
  std::optional<std::size_t> target_samples;  // defaults to the prompt count
  bool equal_gender = false;                  // target split evenly male / female
  std::string exemplar_endpoint;              // provenance of the exemplar generator
};

struct MitigationPrompt {
  std::size_t flat = 0;
  ActionCombo combo;
  std::string template_id;
  std::string prompt;

  bool operator==(const MitigationPrompt&) const = default;
};

struct MitigationDatasetSpec {
  std::string schema_version = kRestructureSchemaVersion;
  PreferenceSelection selection;
  std::vector<MitigationPrompt> prompts;
  std::size_t target_samples = 0;
  nlohmann::json balance = nlohmann::json::object();
  std::string exemplar_endpoint;
  std::optional<std::string> model_ref;  // the model being fine-tuned (endpoint or landscape path)

  bool operator==(const MitigationDatasetSpec&) const = default;
};

// Every template x every selected combo, deduplicated on the rendered prompt
// (first occurrence wins). Throws kEmptySelection, kInvalidSelection, or
// kInvalidArgument (odd target with equal_gender).
MitigationDatasetSpec build_mitigation_spec(const PreferenceSelection& selection,
                                            const ConceptSpace& space,
                                            std::span<const PromptTemplate> templates,
                                            const MitigationOptions& options = {});

nlohmann::json to_json(const MitigationDatasetSpec& spec);
MitigationDatasetSpec mitigation_spec_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Fine-tune hook

struct HookConfig {
  // Command hook: argv; "{spec}" is replaced by the spec path, or the path is
  // appended when no argument contains it.
  std::vector<std::string> command;
  // HTTP hook: POST {"spec_path", "spec"}; reply {"endpoint": ...} or text
  // with an ENDPOINT= line.
  std::string url;
  double timeout_s = 300.0;
};

nlohmann::json to_json(const HookConfig& h);
HookConfig hook_config_from_json(const nlohmann::json& j);

struct HookResult {
  std::string endpoint;
  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
  double seconds = 0.0;
};

nlohmann::json to_json(const HookResult& r);

// Last "ENDPOINT=<ref>" line, if any.
std::optional<std::string> parse_endpoint_line(const std::string& output);

// Throws kHookFailed (nonzero exit or no ENDPOINT line; message carries
// stderr) or kHookTimeout.
HookResult invoke_finetune_hook(const std::filesystem::path& spec_path, const HookConfig& hook,
                                std::shared_ptr<HttpTransport> transport = nullptr);

// Synthetic stand-in for fine-tuning: removes every planted mode whose
// footprint covers a selected combo.
PlantedLandscape suppress_modes(const PlantedLandscape& landscape,
                                const std::vector<ActionCombo>& selected);

// ---------------------------------------------------------------------------
// Verification

struct ReductionVerdict {
  double before_mean = 0.0;
  double after_mean = 0.0;
  double difference = 0.0;  // after - before
  double ci_low = 0.0;      // bootstrap 95% interval of the difference
  double ci_high = 0.0;
  bool reduced = false;  // after_mean < before_mean (strict)
  std::size_t n_before = 0;
  std::size_t n_after = 0;

  bool operator==(const ReductionVerdict&) const = default;
};

// Throws kEmptySamples.
ReductionVerdict reduced_failures_check(std::span<const double> before, std::span<const double> after,
                                        std::size_t bootstrap_samples = 2000,
                                        std::uint64_t seed = 0);

nlohmann::json to_json(const ReductionVerdict& v);
ReductionVerdict reduction_verdict_from_json(const nlohmann::json& j);

struct BiasRatio {
  std::size_t male = 0, female = 0, ambiguous = 0;
  std::optional<double> ratio;  // male / female when female > 0
  bool infinite = false;        // female == 0 and male > 0
  bool undefined = false;       // female == 0 and male == 0
  double ambiguous_rate = 0.0;

  bool operator==(const BiasRatio&) const = default;
};

// Throws kEmptySamples for an empty list.
BiasRatio bias_ratio(std::span<const GenderLabel> labels);
nlohmann::json to_json(const BiasRatio& b);

struct ComboShift {
  std::size_t flat = 0;
  std::size_t before_visits = 0, after_visits = 0;
  std::optional<double> before_mean, after_mean;

  bool operator==(const ComboShift&) const = default;
};

struct ShiftReport {
  std::string schema_version = kRestructureSchemaVersion;
  std::string before_run, after_run;
  PreferenceSelection selection;
  std::vector<std::size_t> before_counts, after_counts;
  std::vector<ComboShift> combos;
  ReductionVerdict verdict;
  std::string sample_source;  // "probe" or "transitions"
  double shift_distance = 0.0;
  bool before_measure_empty = false, after_measure_empty = false;
  std::size_t before_argmax = 0, after_argmax = 0;
  double before_entropy = 0.0, after_entropy = 0.0;
  std::optional<BiasRatio> bias_before, bias_after;

  bool operator==(const ShiftReport&) const = default;
};

struct ShiftInputs {
  const ConceptSpace* before_space = nullptr;
  const ConceptSpace* after_space = nullptr;
  std::span<const Transition> before;
  std::span<const Transition> after;
  // Optional direct samples of the selected combos (probes). When absent,
  // rewards of transitions on the selected combos are used.
  std::optional<std::vector<double>> before_samples, after_samples;
  double base_quantile = 0.5;
  std::uint64_t seed = 0;
};

// The failure measures are built over each whole landscape against its own
// base quantile; an empty measure makes the distance 0 and is flagged.
// Throws kSpaceMismatch, kEmptySamples.
ShiftReport shift_report(const ShiftInputs& inputs, const PreferenceSelection& selection,
                         const std::string& before_run = "", const std::string& after_run = "");

nlohmann::json to_json(const ShiftReport& r);
ShiftReport shift_report_from_json(const nlohmann::json& j);

}  // namespace failscape
