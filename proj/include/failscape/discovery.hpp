#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>

#include "failscape/agents.hpp"
#include "failscape/environment.hpp"
#include "failscape/transition.hpp"

namespace failscape {

// Timestamp source for transitions. Synthetic runs use a logical clock
// (the global step index) so logs are byte-identical across runs.
using TransitionClock = std::function<std::int64_t(std::size_t global_step)>;

std::int64_t logical_clock(std::size_t global_step);
std::int64_t wall_clock_ms(std::size_t global_step);

struct DiscoveryResult {
  VisitHistogram histogram;
  std::unique_ptr<Agent> agent;
};

// The interaction loop: act, step, record, learn. Every transition goes to
// `sink` (may be empty). Throws Error(kInvalidArgument) when total_steps == 0.
DiscoveryResult run_discovery(Environment& env, AgentKind kind, const AgentConfig& config,
                              std::size_t total_steps, const TransitionSink& sink,
                              const TransitionClock& clock = logical_clock);

}  // namespace failscape
