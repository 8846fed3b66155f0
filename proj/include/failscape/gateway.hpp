#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/concept_space.hpp"
#include "failscape/response_cache.hpp"

namespace failscape {

// ---------------------------------------------------------------------------
// Endpoint configuration and transport

struct EndpointConfig {
  std::string name = "endpoint";  // label in call logs
  std::string base_url;           // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string auth_env;  // environment variable holding a bearer token; empty = none
  double timeout_s = 60.0;
  int max_retries = 3;
  double temperature = 0.0;
  double backoff_initial_s = 0.5;
  double backoff_max_s = 8.0;
  std::size_t max_concurrency = 4;

  // Throws kInvalidArgument for timeout <= 0, retries < 0 or zero concurrency.
  void validate() const;
};

// Identifies the remote model for cache keys: url, path, model, temperature.
nlohmann::json fingerprint(const EndpointConfig& cfg);
nlohmann::json to_json(const EndpointConfig& cfg);
EndpointConfig endpoint_config_from_json(const nlohmann::json& j);

struct HttpRequest {
  std::string base_url;
  std::string path;
  std::map<std::string, std::string> headers;
  std::string body;
  std::string content_type = "application/json";
  double timeout_s = 60.0;
};

struct HttpResponse {
  int status = 0;
  std::string content_type;
  std::string body;
};

// Throws Error(kTimeout) or Error(kBackendUnavailable) when no response arrives.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// cpp-httplib client; https when built with OpenSSL.
class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse post(const HttpRequest& request) override;
};

// ---------------------------------------------------------------------------
// Client with caching, retries and a concurrency limit

using Sleeper = std::function<void(double seconds)>;

class EndpointClient {
 public:
  EndpointClient(EndpointConfig cfg, std::shared_ptr<HttpTransport> transport,
                 std::shared_ptr<ResponseCache> cache, Sleeper sleeper = {});

  // POSTs `body`, returning a 2xx reply (or a cached reply of any status).
  // Retries timeouts, connection failures, 429 and 5xx with exponential
  // backoff; 401/403 raise kAuthError at once. `attempt` salts the cache key
  // for semantic retries (a reply that parsed badly). In replay mode a miss
  // raises kReplayMiss without touching the network.
  CachedResponse call(const nlohmann::json& body, std::size_t attempt = 0);

  const EndpointConfig& config() const { return cfg_; }
  std::size_t network_calls() const { return network_calls_; }
  ResponseCache* cache() const { return cache_.get(); }

 private:
  EndpointConfig cfg_;
  nlohmann::json fingerprint_;
  std::shared_ptr<HttpTransport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  Sleeper sleeper_;
  std::unique_ptr<std::counting_semaphore<1024>> slots_;
  std::atomic<std::size_t> network_calls_{0};
};

// ---------------------------------------------------------------------------
// Score extraction

// Deterministic grammar, applied to the last fenced code block when the reply
// has one, else to the whole reply:
//   1. a JSON object with a numeric "score" field (the last one wins);
//   2. otherwise the last standalone number in [0, 10]. A number is
//      standalone when it is not glued to letters, digits or a decimal point;
//      a denominator ("/10") and percentages are skipped.
std::optional<double> extract_score(const std::string& reply);

// ---------------------------------------------------------------------------
// Judge

struct ImagePayload {
  std::string bytes;
  std::string media_type = "image/png";

  std::string sha256() const;
};

struct JudgeRequest {
  std::string prompt;
  std::optional<ImagePayload> image;
  std::optional<std::string> text;  // generated text, when the model under test writes text
  std::optional<std::vector<double>> text_embedding;
  std::optional<std::vector<double>> image_embedding;
  std::string rubric_id = "alignment-v1";

  // Exactly one of image / text. Throws kInvalidArgument.
  void validate() const;
};

enum class ParseStatus { kOk, kFailed };

struct JudgeScore {
  std::optional<double> score;  // in [0, 10]; higher = worse alignment
  std::string rationale;
  ParseStatus status = ParseStatus::kFailed;
  std::size_t attempts = 0;
};

// Versioned rubric texts shipped with the library. Throws kInvalidArgument
// for unknown ids.
const std::string& rubric_text(const std::string& rubric_id);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Chat-completions body for a judge call.
nlohmann::json judge_request_body(const EndpointConfig& cfg, const JudgeRequest& req);

// Sends the rubric, prompt and artifact; embeddings, when present, are
// passed as their cosine similarity in the text context. Re-asks on
// unparseable replies up to max_retries, then throws kParseError.
// Refusals raise kContentRefusal.
JudgeScore judge_reward(EndpointClient& client, const JudgeRequest& req);

enum class GenderLabel { kMale, kFemale, kAmbiguous };
std::string to_string(GenderLabel label);
GenderLabel gender_label_from_string(const std::string& s);

// Perceived-gender classification of a generated image via the judge
// endpoint with a fixed rubric. Unparseable replies count as ambiguous.
GenderLabel classify_gender(EndpointClient& client, const ImagePayload& image);

// ---------------------------------------------------------------------------
// Template generation

// Splits a reply into candidate template lines: one per line, or a JSON
// array of strings; bullets, numbering and surrounding quotes are stripped.
std::vector<std::string> parse_template_lines(const std::string& reply);

// Requests templates with one placeholder per dimension, keeps those that
// validate against `space`, drops exact duplicates, and re-requests until
// `count` are collected. Ids are "t01", "t02", ... in acceptance order.
// Throws kInsufficientValidTemplates when the retry budget runs out.
std::vector<PromptTemplate> generate_templates(EndpointClient& client, const ConceptSpace& space,
                                               std::size_t count);

// ---------------------------------------------------------------------------
// Image generation and embeddings

// Accepts JSON {"data":[{"b64_json":...}]} or a raw image/* body. The
// per-step seed is part of the request so distinct samples get distinct
// cache entries. Refusals (HTTP 400 content-policy, or a "refusal" field)
// raise kContentRefusal and are cached like any other reply.
ImagePayload generate_image(EndpointClient& client, const std::string& prompt, std::uint64_t seed);

// Text completion from a chat endpoint (the model under test writing text).
std::string generate_text(EndpointClient& client, const std::string& prompt, std::uint64_t seed);

std::vector<double> embed_text(EndpointClient& client, const std::string& text);
std::vector<double> embed_image(EndpointClient& client, const ImagePayload& image);

}  // namespace failscape
