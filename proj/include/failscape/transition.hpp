#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

namespace failscape {

// One exploration record. The unit of persistence and summarization.
// `reward` is null when the backend could not score the step (parse failure,
// refusal, timeout); such steps still count as visits.
struct Transition {
  std::size_t episode = 0;
  std::size_t step = 0;  // 1-based within the episode
  std::string template_id;
  std::size_t action = 0;  // flat index
  std::string prompt;
  std::optional<double> reward;
  std::optional<std::string> artifact_ref;
  std::int64_t timestamp_ms = 0;
  std::string status = "ok";

  bool operator==(const Transition&) const = default;
};

nlohmann::json to_json(const Transition& t);
// Throws Error(kJsonParse) on missing or mistyped fields.
Transition transition_from_json(const nlohmann::json& j);

using TransitionSink = std::function<void(const Transition&)>;

}  // namespace failscape
