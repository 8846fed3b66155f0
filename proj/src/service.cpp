#include "failscape/service.hpp"

#include <chrono>
#include <sstream>

#include <httplib.h>

#include "failscape/landscape.hpp"
#include "failscape/restructure.hpp"

namespace failscape {

namespace fs = std::filesystem;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool active_status(const std::string& s) { return s == "queued" || s == "running"; }

ApiResponse json_response(int status, nlohmann::json body) {
  if (body.is_object() && !body.contains("schema_version")) body["schema_version"] = kApiSchemaVersion;
  return {status, "application/json", body.dump()};
}

ApiResponse error_response(ErrorCode code, const std::string& message,
                           const nlohmann::json& detail = nlohmann::json::object()) {
  return {http_status(code), "application/json", api_error(code, message, detail).dump()};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 18) {
    throw Error(ErrorCode::kInvalidArgument, what + " must be a non-negative integer");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kJsonParse, "request body is not valid JSON");
  return j;
}

std::string media_type_for(const std::string& file) {
  const auto dot = file.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : file.substr(dot + 1);
  if (ext == "png") return "image/png";
  if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
  if (ext == "webp") return "image/webp";
  if (ext == "gif") return "image/gif";
  if (ext == "txt") return "text/plain; charset=utf-8";
  if (ext == "json") return "application/json";
  return "application/octet-stream";
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRunNotFound:
    case ErrorCode::kJobNotFound:
    case ErrorCode::kNotFound:
    case ErrorCode::kIndexOutOfRange:
      return 404;
    case ErrorCode::kInvalidSelection:
    case ErrorCode::kEmptySelection:
    case ErrorCode::kEmptySamples:
    case ErrorCode::kSchemaVersionUnsupported:
      return 422;
    case ErrorCode::kJobAlreadyRunning:
    case ErrorCode::kSpaceMismatch:
    case ErrorCode::kRunClosed:
      return 409;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kJsonParse:
    case ErrorCode::kUnknownPlaceholder:
    case ErrorCode::kInvalidTemplate:
    case ErrorCode::kEmptyTemplateSet:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kEmptyHistogram:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kEmptySupport:
    case ErrorCode::kNonFiniteScore:
      return 400;
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kAuthError:
    case ErrorCode::kParseError:
    case ErrorCode::kContentRefusal:
    case ErrorCode::kInsufficientValidTemplates:
    case ErrorCode::kReplayMiss:
    case ErrorCode::kHookFailed:
      return 502;
    case ErrorCode::kTimeout:
    case ErrorCode::kHookTimeout:
      return 504;
    case ErrorCode::kCorruptRecord:
    case ErrorCode::kIo:
      return 500;
  }
  return 500;
}

nlohmann::json api_error(ErrorCode code, const std::string& message, const nlohmann::json& detail) {
  return {{"schema_version", kApiSchemaVersion},
          {"error", {{"code", std::string(error_code_name(code))}, {"message", message}, {"detail", detail}}}};
}

// ---------------------------------------------------------------------------
// Jobs

JobManager::JobManager(fs::path dir, std::size_t workers) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".json") continue;
    nlohmann::json job = nlohmann::json::parse(read_file(entry.path()), nullptr, false);
    if (!job.is_object() || !job.contains("job_id")) continue;
    if (active_status(job.value("status", std::string()))) {
      job["status"] = "failed";
      job["error"] = {{"code", "Interrupted"},
                      {"message", "the service stopped while this job was " +
                                      job.value("status", std::string()) + "; it did not complete"}};
      job["updated_ms"] = now_ms();
      save(job);
    }
    jobs_[job.at("job_id").get<std::string>()] = job;
  }
  for (std::size_t i = 0; i < std::max<std::size_t>(workers, 1); ++i) {
    threads_.emplace_back([this] { worker_loop(); });
  }
}

JobManager::~JobManager() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void JobManager::save(const nlohmann::json& job) const {
  write_file_atomic(dir_ / (job.at("job_id").get<std::string>() + ".json"), job.dump(2) + "\n");
}

void JobManager::update(const std::string& job_id, const std::function<void(nlohmann::json&)>& fn) {
  std::lock_guard lock(mu_);
  nlohmann::json& job = jobs_.at(job_id);
  fn(job);
  job["updated_ms"] = now_ms();
  save(job);
}

std::string JobManager::submit(const std::string& run_id, const std::string& kind, Work work) {
  std::lock_guard lock(mu_);
  if (stopping_) throw Error(ErrorCode::kInvalidArgument, "job manager is shutting down");
  if (active_runs_.contains(run_id)) {
    throw Error(ErrorCode::kJobAlreadyRunning, "run '" + run_id + "' already has an active job");
  }
  const std::string id = new_run_id();
  nlohmann::json job = {{"schema_version", kApiSchemaVersion},
                        {"job_id", id},
                        {"run_id", run_id},
                        {"kind", kind},
                        {"status", "queued"},
                        {"stage", nullptr},
                        {"result", nullptr},
                        {"error", nullptr},
                        {"created_ms", now_ms()},
                        {"updated_ms", now_ms()}};
  save(job);
  jobs_[id] = job;
  active_runs_.insert(run_id);
  queue_.push_back({id, std::move(work)});
  cv_.notify_one();
  return id;
}

nlohmann::json JobManager::get(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorCode::kJobNotFound, "job '" + job_id + "' not found");
  return it->second;
}

void JobManager::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

void JobManager::worker_loop() {
  for (;;) {
    Pending p;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      p = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    update(p.job_id, [](nlohmann::json& j) { j["status"] = "running"; });
    nlohmann::json result, error;
    try {
      result = p.work([&](const std::string& stage) {
        update(p.job_id, [&](nlohmann::json& j) { j["stage"] = stage; });
      });
    } catch (const Error& e) {
      error = {{"code", std::string(error_code_name(e.code()))}, {"message", e.what()}};
    } catch (const std::exception& e) {
      error = {{"code", "Internal"}, {"message", e.what()}};
    }
    update(p.job_id, [&](nlohmann::json& j) {
      j["status"] = error.is_null() ? "complete" : "failed";
      j["result"] = result;
      j["error"] = error;
    });
    {
      std::lock_guard lock(mu_);
      active_runs_.erase(jobs_.at(p.job_id).at("run_id").get<std::string>());
      --running_;
    }
    idle_cv_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      store_(config_.store_root),
      jobs_(std::make_unique<JobManager>(config_.store_root / "jobs", config_.workers)) {}

Service::~Service() {
  stop();
  jobs_.reset();
}

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& query) {
  try {
    return route(method, split_path(path), body, query);
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  } catch (const std::exception& e) {
    return {500, "application/json",
            nlohmann::json{{"schema_version", kApiSchemaVersion},
                           {"error", {{"code", "Internal"}, {"message", e.what()}, {"detail", nlohmann::json::object()}}}}
                .dump()};
  }
}

ApiResponse Service::route(const std::string& method, const std::vector<std::string>& p,
                           const std::string& body, const std::map<std::string, std::string>& query) {
  const bool get = method == "GET";
  const bool post = method == "POST";
  auto not_found = [&] {
    return error_response(ErrorCode::kNotFound, "no route for " + method + " /" + [&] {
      std::string s;
      for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "/" : "") + p[i];
      return s;
    }());
  };

  if (get && p.size() == 1 && p[0] == "health") return json_response(200, {{"status", "ok"}});

  if (p.size() == 2 && p[0] == "jobs" && get) return json_response(200, jobs_->get(p[1]));

  if (p.empty() || p[0] != "runs") return not_found();

  if (p.size() == 1 && get) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& m : store_.list_runs()) {
      runs.push_back({{"run_id", m.run_id},
                      {"parent_run_id", m.parent_run_id ? nlohmann::json(*m.parent_run_id) : nlohmann::json(nullptr)},
                      {"status", m.status},
                      {"agent_kind", m.agent_kind},
                      {"seed", m.seed},
                      {"total_steps", m.total_steps},
                      {"started_ms", m.started_ms},
                      {"ended_ms", m.ended_ms ? nlohmann::json(*m.ended_ms) : nlohmann::json(nullptr)},
                      {"has_summary", store_.has_report(m.run_id, "summary")}});
    }
    return json_response(200, {{"runs", runs}});
  }
  if (p.size() < 2) return not_found();
  const std::string& run_id = p[1];
  const RunManifest manifest = store_.load_manifest(run_id);  // 404 when missing

  if (p.size() == 2 && get) return json_response(200, to_json(manifest));

  const std::string& what = p[2];
  if (p.size() == 3 && get && what == "landscape") {
    if (store_.has_report(run_id, "plot")) return json_response(200, store_.load_report(run_id, "plot"));
    return json_response(200, plot_data(summarize(store_, run_id, false)));
  }
  if (p.size() == 3 && get && what == "summary") {
    if (store_.has_report(run_id, "summary")) return json_response(200, store_.load_report(run_id, "summary"));
    return json_response(200, to_json(summarize(store_, run_id, false)));
  }
  if (p.size() == 5 && get && what == "cells" && p[4] == "samples") {
    const ConceptFile concepts = concepts_of(manifest);
    const std::size_t flat = parse_size(p[3], "cell index");
    if (flat >= concepts.space.size()) {
      throw Error(ErrorCode::kIndexOutOfRange, "cell " + p[3] + " is outside the concept space");
    }
    std::size_t k = config_.default_samples;
    if (auto it = query.find("k"); it != query.end()) k = parse_size(it->second, "k");
    nlohmann::json samples = nlohmann::json::array();
    std::size_t visits = 0;
    StreamOptions opts;
    opts.filter = [flat](const Transition& t) { return t.action == flat; };
    store_.stream_transitions(
        run_id,
        [&](const Transition& t) {
          ++visits;
          if (samples.size() < k) {
            samples.push_back({{"episode", t.episode},
                               {"step", t.step},
                               {"template_id", t.template_id},
                               {"prompt", t.prompt},
                               {"reward", t.reward ? nlohmann::json(*t.reward) : nlohmann::json(nullptr)},
                               {"artifact_ref", t.artifact_ref ? nlohmann::json(*t.artifact_ref) : nlohmann::json(nullptr)},
                               {"status", t.status}});
          }
        },
        opts);
    const ActionCombo combo = combo_from_flat(flat, concepts.space);
    return json_response(200, {{"run_id", run_id},
                               {"flat", flat},
                               {"combo", to_json(combo)},
                               {"words", concepts.space.words(combo)},
                               {"visits", visits},
                               {"samples", samples}});
  }
  if (p.size() == 4 && get && what == "artifacts") {
    const fs::path file = store_.run_dir(run_id) / "artifacts" / p[3];
    if (p[3].find("..") != std::string::npos || !fs::is_regular_file(file)) {
      throw Error(ErrorCode::kNotFound, "artifact '" + p[3] + "' not found");
    }
    return {200, media_type_for(p[3]), store_.get_artifact(run_id, p[3])};
  }
  if (p.size() == 3 && what == "preferences") {
    if (get) {
      if (!store_.has_report(run_id, "preferences")) {
        throw Error(ErrorCode::kNotFound, "run '" + run_id + "' has no stored preferences");
      }
      return json_response(200, {{"run_id", run_id}, {"selection", store_.load_report(run_id, "preferences")}});
    }
    if (post) {
      const PreferenceSelection sel = preference_selection_from_json(parse_body(body));
      validate_selection(sel, concepts_of(manifest).space, config_.max_selection);
      store_.save_report(run_id, "preferences", to_json(sel));
      return json_response(200, {{"run_id", run_id}, {"selection", to_json(sel)}});
    }
  }
  if (p.size() == 3 && post && what == "restructure") {
    const nlohmann::json req = parse_body(body);
    if (!req.is_object()) throw Error(ErrorCode::kJsonParse, "restructure body must be a JSON object");
    RestructureOptions opts = config_.restructure;
    opts.max_selection = config_.max_selection;
    if (req.contains("selection")) {
      opts.selection = preference_selection_from_json(req.at("selection"));
    } else if (store_.has_report(run_id, "preferences")) {
      opts.selection = preference_selection_from_json(store_.load_report(run_id, "preferences"));
    } else {
      throw Error(ErrorCode::kEmptySelection, "no selection in the request and none stored for the run");
    }
    validate_selection(opts.selection, concepts_of(manifest).space, config_.max_selection);
    if (manifest.status != kRunComplete) {
      throw Error(ErrorCode::kRunClosed, "run '" + run_id + "' is not complete");
    }
    if (req.contains("steps")) opts.steps = req.at("steps").get<std::size_t>();
    if (req.contains("probe_samples")) opts.probe_samples = req.at("probe_samples").get<std::size_t>();
    RunStore store = store_;
    const std::string job_id = jobs_->submit(run_id, "restructure", [store, run_id, opts](const JobManager::Progress& progress) mutable {
      opts.progress = progress;
      const RestructureResult r = restructure(store, run_id, opts);
      return nlohmann::json{{"child_run_id", r.child_run_id},
                            {"reduced", r.shift.verdict.reduced},
                            {"shift_distance", r.shift.shift_distance},
                            {"hook_endpoint", r.hook.endpoint}};
    });
    return json_response(202, {{"job_id", job_id}, {"status", "queued"}, {"run_id", run_id}});
  }
  if (p.size() == 4 && get && what == "shift") {
    return json_response(200, to_json(compare_runs(store_, run_id, p[3])));
  }
  return not_found();
}

void Service::listen(const std::string& host, int port, const std::function<void(int)>& on_bound) {
  {
    std::lock_guard lock(server_mu_);
    server_ = std::make_unique<httplib::Server>();
    if (!config_.static_dir.empty()) server_->set_mount_point("/", config_.static_dir.string());
    auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> query;
      for (const auto& [k, v] : req.params) query[k] = v;
      const ApiResponse r = handle(req.method, req.path, req.body, query);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server_->Get(".*", dispatch);
    server_->Post(".*", dispatch);
    if (port == 0) {
      port = server_->bind_to_any_port(host);
    } else if (!server_->bind_to_port(host, port)) {
      port = -1;
    }
    if (port < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
  }
  if (on_bound) on_bound(port);
  server_->listen_after_bind();
}

void Service::stop() {
  std::lock_guard lock(server_mu_);
  if (server_) server_->stop();
}

}  // namespace failscape
