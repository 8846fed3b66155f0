#include "failscape/external_backend.hpp"

#include "failscape/errors.hpp"

namespace failscape {

nlohmann::json to_json(const ExternalBackendConfig& c) {
  nlohmann::json j = {{"artifact", c.artifact == ArtifactKind::kImage ? "image" : "text"},
                      {"generator", to_json(c.generator)},
                      {"judge", to_json(c.judge)},
                      {"use_embeddings", c.use_embeddings},
                      {"rubric_id", c.rubric_id}};
  if (c.embedding) j["embedding"] = to_json(*c.embedding);
  return j;
}

ExternalBackendConfig external_backend_config_from_json(const nlohmann::json& j) {
  try {
    ExternalBackendConfig c;
    const std::string artifact = j.value("artifact", std::string("image"));
    if (artifact == "image") {
      c.artifact = ArtifactKind::kImage;
    } else if (artifact == "text") {
      c.artifact = ArtifactKind::kText;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "artifact must be 'image' or 'text'");
    }
    c.generator = endpoint_config_from_json(j.at("generator"));
    if (c.generator.name == "endpoint") c.generator.name = "generator";
    c.judge = endpoint_config_from_json(j.at("judge"));
    if (c.judge.name == "endpoint") c.judge.name = "judge";
    if (j.contains("embedding") && !j.at("embedding").is_null()) {
      c.embedding = endpoint_config_from_json(j.at("embedding"));
      if (c.embedding->name == "endpoint") c.embedding->name = "embedding";
    }
    c.use_embeddings = j.value("use_embeddings", false);
    c.rubric_id = j.value("rubric_id", c.rubric_id);
    rubric_text(c.rubric_id);
    if (c.use_embeddings && !c.embedding) {
      throw Error(ErrorCode::kInvalidArgument, "use_embeddings requires an embedding endpoint");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("external backend config: ") + e.what());
  }
}

ExternalBackend::ExternalBackend(ExternalBackendConfig cfg, std::shared_ptr<ResponseCache> cache,
                                 std::shared_ptr<HttpTransport> transport, ArtifactSink sink,
                                 Sleeper sleeper)
    : cfg_(std::move(cfg)), sink_(std::move(sink)) {
  if (!transport) transport = std::make_shared<HttplibTransport>();
  generator_ = std::make_unique<EndpointClient>(cfg_.generator, transport, cache, sleeper);
  judge_ = std::make_unique<EndpointClient>(cfg_.judge, transport, cache, sleeper);
  if (cfg_.embedding) {
    embedder_ = std::make_unique<EndpointClient>(*cfg_.embedding, transport, cache, sleeper);
  }
}

std::size_t ExternalBackend::network_calls() const {
  return generator_->network_calls() + judge_->network_calls() +
         (embedder_ ? embedder_->network_calls() : 0);
}

namespace {

std::string extension_for(const std::string& media_type) {
  if (media_type == "image/jpeg") return "jpg";
  if (media_type == "image/webp") return "webp";
  if (media_type == "image/gif") return "gif";
  return "png";
}

}  // namespace

RewardOutcome ExternalBackend::evaluate(const RewardQuery& query) {
  RewardOutcome out;
  JudgeRequest req;
  req.prompt = query.prompt;
  req.rubric_id = cfg_.rubric_id;
  try {
    if (cfg_.artifact == ArtifactKind::kImage) {
      ImagePayload image = generate_image(*generator_, query.prompt, query.sample_seed);
      if (sink_) out.artifact_ref = sink_(image.bytes, extension_for(image.media_type));
      if (cfg_.use_embeddings) {
        req.text_embedding = embed_text(*embedder_, query.prompt);
        req.image_embedding = embed_image(*embedder_, image);
        embedding_dim_ = req.text_embedding->size();
      }
      req.image = std::move(image);
    } else {
      std::string text = generate_text(*generator_, query.prompt, query.sample_seed);
      if (sink_) out.artifact_ref = sink_(text, "txt");
      req.text = std::move(text);
    }
    out.reward = judge_reward(*judge_, req).score;
    out.status = "ok";
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kContentRefusal) {
      out.reward.reset();
      out.status = "refused";
    } else if (e.code() == ErrorCode::kParseError) {
      out.reward.reset();
      out.status = "parse_error";
    } else {
      throw;
    }
  }
  return out;
}

nlohmann::json ExternalBackend::fingerprint() const {
  nlohmann::json j = {{"kind", "external"},
                      {"artifact", cfg_.artifact == ArtifactKind::kImage ? "image" : "text"},
                      {"generator", failscape::fingerprint(cfg_.generator)},
                      {"judge", failscape::fingerprint(cfg_.judge)},
                      {"rubric_id", cfg_.rubric_id},
                      {"use_embeddings", cfg_.use_embeddings}};
  if (cfg_.embedding) j["embedding"] = failscape::fingerprint(*cfg_.embedding);
  return j;
}

}  // namespace failscape
