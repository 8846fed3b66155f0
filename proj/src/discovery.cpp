#include "failscape/discovery.hpp"

#include <chrono>

#include "failscape/errors.hpp"

namespace failscape {

std::int64_t logical_clock(std::size_t global_step) {
  return static_cast<std::int64_t>(global_step);
}

std::int64_t wall_clock_ms(std::size_t) {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

DiscoveryResult run_discovery(Environment& env, AgentKind kind, const AgentConfig& config,
                              std::size_t total_steps, const TransitionSink& sink,
                              const TransitionClock& clock) {
  if (total_steps == 0) throw Error(ErrorCode::kInvalidArgument, "total_steps must be >= 1");
  DiscoveryResult result{VisitHistogram(env.action_count()),
                         make_agent(kind, env.observation_size(), env.action_count(), config,
                                    total_steps)};
  Agent& agent = *result.agent;
  Observation obs = env.reset();
  for (std::size_t i = 0; i < total_steps; ++i) {
    const std::size_t action = agent.act(obs.encoding);
    StepResult r = env.step(action);
    result.histogram.record(action, r.reward);
    if (sink) {
      Transition t;
      t.episode = r.episode;
      t.step = r.step;
      t.template_id = env.config().templates[r.template_index].id;
      t.action = action;
      t.prompt = std::move(r.rendered_prompt);
      t.reward = r.reward;
      t.artifact_ref = r.artifact_ref;
      t.timestamp_ms = clock ? clock(i) : 0;
      t.status = r.status;
      sink(t);
    }
    // The observation the agent acts on next must be the one the
    // environment will use, so episode boundaries reset explicitly.
    Observation next = r.done ? env.reset() : r.observation;
    agent.observe(obs.encoding, action, r.reward, r.observation.encoding, r.done);
    obs = std::move(next);
  }
  return result;
}

}  // namespace failscape
