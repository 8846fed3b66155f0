#pragma once

#include <atomic>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/concept_space.hpp"
#include "failscape/errors.hpp"
#include "failscape/gateway.hpp"
#include "failscape/run_store.hpp"

namespace failscape::testing {

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(FAILSCAPE_SOURCE_DIR) / rel;
}

// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("failscape-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Transport answering from a script: each handler sees the request and
// returns a response or throws (e.g. Error(kTimeout)).
class ScriptedTransport final : public HttpTransport {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;

  explicit ScriptedTransport(Handler fallback = {}) : fallback_(std::move(fallback)) {}

  void push(Handler h) {
    std::lock_guard lock(mu_);
    script_.push_back(std::move(h));
  }
  void push_reply(int status, std::string body, std::string content_type = "application/json") {
    push([=](const HttpRequest&) { return HttpResponse{status, content_type, body}; });
  }

  HttpResponse post(const HttpRequest& request) override {
    Handler h;
    {
      std::lock_guard lock(mu_);
      ++calls_;
      requests_.push_back(request);
      if (!script_.empty()) {
        h = std::move(script_.front());
        script_.pop_front();
      } else {
        h = fallback_;
      }
    }
    if (!h) throw Error(ErrorCode::kBackendUnavailable, "scripted transport exhausted");
    return h(request);
  }

  std::size_t calls() const { return calls_; }
  std::vector<HttpRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  Handler fallback_;
  mutable std::mutex mu_;
  std::deque<Handler> script_;
  std::vector<HttpRequest> requests_;
  std::atomic<std::size_t> calls_{0};
};

inline std::string chat_reply(const std::string& content, const std::string& finish = "stop") {
  return nlohmann::json{{"choices",
                         {{{"index", 0},
                           {"finish_reason", finish},
                           {"message", {{"role", "assistant"}, {"content", content}}}}}}}
      .dump();
}

inline EndpointConfig stub_endpoint(const std::string& name, const std::string& base = "http://stub.invalid") {
  EndpointConfig cfg;
  cfg.name = name;
  cfg.base_url = base;
  cfg.path = "/v1/chat/completions";
  cfg.model = "stub-model";
  cfg.backoff_initial_s = 0.0;
  cfg.backoff_max_s = 0.0;
  return cfg;
}

inline ConceptSpace small_space(std::size_t a, std::size_t b, std::size_t c) {
  auto dim = [](const std::string& name, std::size_t n) {
    ConceptDimension d{name, {}};
    for (std::size_t i = 0; i < n; ++i) d.values.push_back(name + std::to_string(i));
    return d;
  };
  return ConceptSpace({dim("attribute", a), dim("profession", b), dim("place", c)});
}

inline std::vector<PromptTemplate> simple_templates(std::size_t n) {
  std::vector<PromptTemplate> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"t" + std::to_string(i), "Template " + std::to_string(i) +
                                                 ": a <attribute> <profession> in a <place>"});
  }
  return out;
}

}  // namespace failscape::testing
