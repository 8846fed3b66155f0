#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "failscape/errors.hpp"
#include "failscape/pipeline.hpp"
#include "failscape/run_store.hpp"

namespace httplib {
class Server;
}

namespace failscape {

inline constexpr const char* kApiSchemaVersion = "1.0";

// HTTP status for an error code; each code maps to exactly one status.
int http_status(ErrorCode code);
// {"schema_version", "error": {"code", "message", "detail"}}
nlohmann::json api_error(ErrorCode code, const std::string& message,
                         const nlohmann::json& detail = nlohmann::json::object());

// Asynchronous jobs with state persisted under <dir>/<job_id>.json. Jobs
// found "queued" or "running" at start-up were interrupted by a restart and
// are marked failed. At most one active job per run.
class JobManager {
 public:
  using Progress = std::function<void(const std::string& stage)>;
  using Work = std::function<nlohmann::json(const Progress&)>;

  JobManager(std::filesystem::path dir, std::size_t workers);
  ~JobManager();
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  // Throws kJobAlreadyRunning when the run has an active job.
  std::string submit(const std::string& run_id, const std::string& kind, Work work);
  // Throws kJobNotFound.
  nlohmann::json get(const std::string& job_id) const;
  // Blocks until no job is queued or running.
  void wait_idle();

 private:
  struct Pending {
    std::string job_id;
    Work work;
  };

  void worker_loop();
  void save(const nlohmann::json& job) const;
  void update(const std::string& job_id, const std::function<void(nlohmann::json&)>& fn);

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::condition_variable cv_, idle_cv_;
  std::deque<Pending> queue_;
  std::map<std::string, nlohmann::json> jobs_;
  std::set<std::string> active_runs_;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

struct ServiceConfig {
  std::filesystem::path store_root;
  std::size_t max_selection = kDefaultMaxSelection;
  std::size_t default_samples = 12;  // k for the samples endpoint
  std::size_t workers = 2;           // restructure job pool
  // Defaults for restructure jobs; the request body may override the
  // selection, steps and probe sample count.
  RestructureOptions restructure;
  std::filesystem::path static_dir;  // UI assets served at "/" when set
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

// The HTTP API over a run store:
//   GET  /health
//   GET  /runs
//   GET  /runs/{id}
//   GET  /runs/{id}/landscape              plot-data export
//   GET  /runs/{id}/summary                full SummaryReport
//   GET  /runs/{id}/cells/{flat}/samples   ?k=N stored prompts and artifact refs
//   GET  /runs/{id}/artifacts/{file}       raw artifact bytes
//   GET  /runs/{id}/preferences
//   POST /runs/{id}/preferences            PreferenceSelection -> 200 / 422
//   POST /runs/{id}/restructure            -> 202 {job_id}; 409 if one is active
//   GET  /runs/{id}/shift/{other}          ShiftReport
//   GET  /jobs/{id}
// Every JSON body carries a top-level schema_version.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  // Routes one request. Used by the HTTP server and directly by tests.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::map<std::string, std::string>& query = {});

  // Binds and serves until stop(). Port 0 picks a free port; `on_bound`
  // receives the actual port before serving starts.
  void listen(const std::string& host, int port, const std::function<void(int)>& on_bound = {});
  void stop();

  JobManager& jobs() { return *jobs_; }
  RunStore& store() { return store_; }

 private:
  ApiResponse route(const std::string& method, const std::vector<std::string>& parts,
                    const std::string& body, const std::map<std::string, std::string>& query);

  ServiceConfig config_;
  RunStore store_;
  std::unique_ptr<JobManager> jobs_;
  std::unique_ptr<httplib::Server> server_;
  std::mutex server_mu_;
};

}  // namespace failscape
