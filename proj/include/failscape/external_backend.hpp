#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "failscape/environment.hpp"
#include "failscape/gateway.hpp"

namespace failscape {

enum class ArtifactKind { kImage, kText };

struct ExternalBackendConfig {
  ArtifactKind artifact = ArtifactKind::kImage;
  EndpointConfig generator;  // model under test
  EndpointConfig judge;
  std::optional<EndpointConfig> embedding;
  bool use_embeddings = false;
  std::string rubric_id = "alignment-v1";
};

nlohmann::json to_json(const ExternalBackendConfig& cfg);
ExternalBackendConfig external_backend_config_from_json(const nlohmann::json& j);

// Stores generated bytes and returns a reference for the transition log.
using ArtifactSink = std::function<std::string(const std::string& bytes, const std::string& extension)>;

// Real auditing: the model under test renders the prompt, the judge scores
// the output. Refusals and unparseable judge replies become null rewards
// with status "refused" / "parse_error"; transport and auth failures
// propagate after the gateway's retries.
class ExternalBackend final : public RewardBackend {
 public:
  ExternalBackend(ExternalBackendConfig cfg, std::shared_ptr<ResponseCache> cache,
                  std::shared_ptr<HttpTransport> transport = nullptr, ArtifactSink sink = {},
                  Sleeper sleeper = {});

  RewardOutcome evaluate(const RewardQuery& query) override;
  nlohmann::json fingerprint() const override;

  std::size_t network_calls() const;
  std::optional<std::size_t> embedding_dimension() const { return embedding_dim_; }
  void set_artifact_sink(ArtifactSink sink) { sink_ = std::move(sink); }

  EndpointClient& generator() { return *generator_; }
  EndpointClient& judge() { return *judge_; }

 private:
  ExternalBackendConfig cfg_;
  std::unique_ptr<EndpointClient> generator_, judge_, embedder_;
  ArtifactSink sink_;
  std::optional<std::size_t> embedding_dim_;
};

}  // namespace failscape
