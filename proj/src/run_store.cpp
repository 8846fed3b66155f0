#include "failscape/run_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "failscape/errors.hpp"
#include "failscape/hashing.hpp"
#include "failscape/landscape.hpp"

namespace failscape {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Transition records

nlohmann::json to_json(const Transition& t) {
  return {{"episode", t.episode},
          {"step", t.step},
          {"template_id", t.template_id},
          {"action", t.action},
          {"prompt", t.prompt},
          {"reward", t.reward ? nlohmann::json(*t.reward) : nlohmann::json(nullptr)},
          {"artifact_ref", t.artifact_ref ? nlohmann::json(*t.artifact_ref) : nlohmann::json(nullptr)},
          {"timestamp_ms", t.timestamp_ms},
          {"status", t.status}};
}

Transition transition_from_json(const nlohmann::json& j) {
  try {
    Transition t;
    t.episode = j.at("episode").get<std::size_t>();
    t.step = j.at("step").get<std::size_t>();
    t.template_id = j.at("template_id").get<std::string>();
    t.action = j.at("action").get<std::size_t>();
    t.prompt = j.at("prompt").get<std::string>();
    if (!j.at("reward").is_null()) t.reward = j.at("reward").get<double>();
    if (!j.at("artifact_ref").is_null()) t.artifact_ref = j.at("artifact_ref").get<std::string>();
    t.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    t.status = j.value("status", std::string("ok"));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("transition: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

const std::set<std::string>& manifest_fields() {
  static const std::set<std::string> fields = {
      "schema_version", "run_id",      "parent_run_id", "space_fingerprint", "space",
      "templates",      "agent_kind",  "agent_config",  "config_hash",       "backend",
      "seed",           "total_steps", "episode_length", "started_ms",       "ended_ms",
      "status",         "details"};
  return fields;
}

bool valid_run_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

void fsync_fd(int fd, const fs::path& path) {
  if (::fsync(fd) != 0) {
    throw Error(ErrorCode::kIo, "fsync " + path.string() + ": " + std::strerror(errno));
  }
}

void write_all(int fd, const std::string& data, const fs::path& path) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, "write " + path.string() + ": " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json j = m.extra.is_object() ? m.extra : nlohmann::json::object();
  j["schema_version"] = m.schema_version;
  j["run_id"] = m.run_id;
  j["parent_run_id"] = m.parent_run_id ? nlohmann::json(*m.parent_run_id) : nlohmann::json(nullptr);
  j["space_fingerprint"] = m.space_fingerprint;
  j["space"] = m.space;
  j["templates"] = m.templates;
  j["agent_kind"] = m.agent_kind;
  j["agent_config"] = m.agent_config;
  j["config_hash"] = m.config_hash;
  j["backend"] = m.backend;
  j["seed"] = m.seed;
  j["total_steps"] = m.total_steps;
  j["episode_length"] = m.episode_length;
  j["started_ms"] = m.started_ms;
  j["ended_ms"] = m.ended_ms ? nlohmann::json(*m.ended_ms) : nlohmann::json(nullptr);
  j["status"] = m.status;
  j["details"] = m.details;
  return j;
}

RunManifest run_manifest_from_json(const nlohmann::json& j) {
  check_schema_version(j, 1, "run manifest");
  try {
    RunManifest m;
    m.schema_version = j.at("schema_version").get<std::string>();
    m.run_id = j.at("run_id").get<std::string>();
    if (j.contains("parent_run_id") && !j.at("parent_run_id").is_null()) {
      m.parent_run_id = j.at("parent_run_id").get<std::string>();
    }
    m.space_fingerprint = j.at("space_fingerprint").get<std::string>();
    m.space = j.at("space");
    m.templates = j.value("templates", nlohmann::json::array());
    m.agent_kind = j.at("agent_kind").get<std::string>();
    m.agent_config = j.value("agent_config", nlohmann::json::object());
    m.config_hash = j.value("config_hash", std::string());
    m.backend = j.value("backend", nlohmann::json::object());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.total_steps = j.value("total_steps", std::size_t{0});
    m.episode_length = j.value("episode_length", std::size_t{0});
    m.started_ms = j.value("started_ms", std::int64_t{0});
    if (j.contains("ended_ms") && !j.at("ended_ms").is_null()) {
      m.ended_ms = j.at("ended_ms").get<std::int64_t>();
    }
    m.status = j.at("status").get<std::string>();
    m.details = j.value("details", nlohmann::json::object());
    for (const auto& [key, value] : j.items()) {
      if (!manifest_fields().contains(key)) m.extra[key] = value;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, std::string("run manifest: ") + e.what());
  }
}

std::string make_run_id(std::int64_t time_ms, std::uint64_t random_hi, std::uint64_t random_lo) {
  static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  std::string out(26, '0');
  auto t = static_cast<std::uint64_t>(time_ms) & ((std::uint64_t{1} << 48) - 1);
  for (int i = 9; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[t & 31];
    t >>= 5;
  }
  // 80 random bits: 16 from hi, 64 from lo.
  std::uint64_t hi = random_hi & 0xffff, lo = random_lo;
  for (int i = 25; i >= 10; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[lo & 31];
    lo = (lo >> 5) | ((hi & 31) << 59);
    hi >>= 5;
  }
  return out;
}

std::string new_run_id() {
  using namespace std::chrono;
  const auto now = duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  std::random_device rd;
  const std::uint64_t hi = (std::uint64_t{rd()} << 32) | rd();
  const std::uint64_t lo = (std::uint64_t{rd()} << 32) | rd();
  return make_run_id(now, hi, lo);
}

// ---------------------------------------------------------------------------
// Files

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIo, "open " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, content, tmp);
    fsync_fd(fd, tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Writer

RunWriter::RunWriter(fs::path dir, int fd) : dir_(std::move(dir)), fd_(fd) {}

RunWriter::RunWriter(RunWriter&& other) noexcept
    : dir_(std::move(other.dir_)), fd_(other.fd_), appended_(other.appended_) {
  other.fd_ = -1;
}

RunWriter& RunWriter::operator=(RunWriter&& other) noexcept {
  if (this != &other) {
    close();
    dir_ = std::move(other.dir_);
    fd_ = other.fd_;
    appended_ = other.appended_;
    other.fd_ = -1;
  }
  return *this;
}

RunWriter::~RunWriter() { close(); }

void RunWriter::append(const Transition& t) {
  if (fd_ < 0) throw Error(ErrorCode::kRunClosed, "run " + dir_.filename().string() + " is closed");
  const fs::path log = dir_ / "transitions.jsonl";
  write_all(fd_, to_json(t).dump() + "\n", log);
  fsync_fd(fd_, log);
  ++appended_;
}

void RunWriter::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

// ---------------------------------------------------------------------------
// Store

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

fs::path RunStore::run_dir(const std::string& run_id) const {
  if (!valid_run_id(run_id)) {
    throw Error(ErrorCode::kRunNotFound, "invalid run id '" + run_id + "'");
  }
  return root_ / "runs" / run_id;
}

bool RunStore::exists(const std::string& run_id) const {
  return valid_run_id(run_id) && fs::exists(run_dir(run_id) / "manifest.json");
}

void RunStore::require(const std::string& run_id) const {
  if (!exists(run_id)) throw Error(ErrorCode::kRunNotFound, "run '" + run_id + "' not found");
}

namespace {

int open_log(const fs::path& dir) {
  const fs::path log = dir / "transitions.jsonl";
  const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIo, "open " + log.string() + ": " + std::strerror(errno));
  return fd;
}

}  // namespace

RunWriter RunStore::create_run(const RunManifest& manifest) {
  const fs::path dir = run_dir(manifest.run_id);
  if (fs::exists(dir)) {
    throw Error(ErrorCode::kInvalidArgument, "run id '" + manifest.run_id + "' already exists");
  }
  if (manifest.parent_run_id) require(*manifest.parent_run_id);
  fs::create_directories(dir / "reports");
  fs::create_directories(dir / "artifacts");
  save_manifest(manifest);
  return RunWriter(dir, open_log(dir));
}

RunWriter RunStore::reopen_run(const std::string& run_id) {
  require(run_id);
  const RunManifest m = load_manifest(run_id);
  if (m.status != kRunRunning) {
    throw Error(ErrorCode::kRunClosed, "run '" + run_id + "' has status " + m.status);
  }
  return RunWriter(run_dir(run_id), open_log(run_dir(run_id)));
}

RunManifest RunStore::load_manifest(const std::string& run_id) const {
  require(run_id);
  return run_manifest_from_json(read_json_file(run_dir(run_id) / "manifest.json"));
}

void RunStore::save_manifest(const RunManifest& manifest) const {
  write_file_atomic(run_dir(manifest.run_id) / "manifest.json", to_json(manifest).dump(2) + "\n");
}

std::vector<RunManifest> RunStore::list_runs() const {
  std::vector<RunManifest> out;
  const fs::path runs = root_ / "runs";
  if (!fs::exists(runs)) return out;
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(runs)) {
    const std::string id = entry.path().filename().string();
    if (exists(id)) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) out.push_back(load_manifest(id));
  return out;
}

StreamStats RunStore::stream_transitions(const std::string& run_id,
                                         const std::function<void(const Transition&)>& fn,
                                         const StreamOptions& options) const {
  require(run_id);
  StreamStats stats;
  const fs::path log = run_dir(run_id) / "transitions.jsonl";
  if (!fs::exists(log)) return stats;
  std::ifstream in(log, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + log.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const bool terminated = !in.eof();
    Transition t;
    try {
      if (!terminated) throw Error(ErrorCode::kCorruptRecord, "record is not newline-terminated");
      t = transition_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      if (options.skip_corrupt) {
        stats.corrupt_lines.push_back(line_no);
        continue;
      }
      throw Error(ErrorCode::kCorruptRecord,
                  log.string() + ":" + std::to_string(line_no) + ": corrupt record (" + e.what() + ")");
    }
    if (options.filter && !options.filter(t)) continue;
    ++stats.yielded;
    fn(t);
  }
  return stats;
}

std::vector<Transition> RunStore::read_transitions(const std::string& run_id,
                                                   const StreamOptions& options) const {
  std::vector<Transition> out;
  stream_transitions(run_id, [&](const Transition& t) { out.push_back(t); }, options);
  return out;
}

namespace {

void check_name(const std::string& name) {
  if (!valid_run_id(name)) throw Error(ErrorCode::kInvalidArgument, "invalid report name '" + name + "'");
}

}  // namespace

void RunStore::save_report(const std::string& run_id, const std::string& name,
                           const nlohmann::json& report) const {
  require(run_id);
  check_name(name);
  write_file_atomic(run_dir(run_id) / "reports" / (name + ".json"), report.dump(2) + "\n");
}

nlohmann::json RunStore::load_report(const std::string& run_id, const std::string& name) const {
  require(run_id);
  check_name(name);
  return read_json_file(run_dir(run_id) / "reports" / (name + ".json"));
}

bool RunStore::has_report(const std::string& run_id, const std::string& name) const {
  return exists(run_id) && valid_run_id(name) &&
         fs::exists(run_dir(run_id) / "reports" / (name + ".json"));
}

std::string RunStore::put_artifact(const std::string& run_id, const std::string& bytes,
                                   const std::string& extension) const {
  require(run_id);
  check_name(extension);
  const std::string file = sha256_hex(bytes) + "." + extension;
  const fs::path path = run_dir(run_id) / "artifacts" / file;
  if (!fs::exists(path)) write_file_atomic(path, bytes);
  return "artifacts/" + file;
}

std::string RunStore::get_artifact(const std::string& run_id, const std::string& ref) const {
  require(run_id);
  const std::string prefix = "artifacts/";
  const std::string file = ref.starts_with(prefix) ? ref.substr(prefix.size()) : ref;
  if (file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "invalid artifact reference '" + ref + "'");
  }
  return read_file(run_dir(run_id) / "artifacts" / file);
}

}  // namespace failscape
