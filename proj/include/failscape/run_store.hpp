#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "failscape/transition.hpp"

namespace failscape {

inline constexpr const char* kManifestSchemaVersion = "1.0";

// Status values written to manifests.
inline constexpr const char* kRunRunning = "running";
inline constexpr const char* kRunComplete = "complete";
inline constexpr const char* kRunFailed = "failed";

struct RunManifest {
  std::string schema_version = kManifestSchemaVersion;
  std::string run_id;
  std::optional<std::string> parent_run_id;
  std::string space_fingerprint;
  nlohmann::json space = nlohmann::json::array();      // dimensions
  nlohmann::json templates = nlohmann::json::array();  // [{id, text}]
  std::string agent_kind;
  nlohmann::json agent_config = nlohmann::json::object();
  std::string config_hash;
  nlohmann::json backend = nlohmann::json::object();  // backend fingerprint
  std::uint64_t seed = 0;
  std::size_t total_steps = 0;
  std::size_t episode_length = 0;
  std::int64_t started_ms = 0;
  std::optional<std::int64_t> ended_ms;
  std::string status = kRunRunning;
  nlohmann::json details = nlohmann::json::object();  // lineage, hook records, ...
  nlohmann::json extra = nlohmann::json::object();    // unknown fields, preserved

  bool operator==(const RunManifest&) const = default;
};

nlohmann::json to_json(const RunManifest& m);
// Accepts any 1.x version; throws kSchemaVersionUnsupported for other majors.
RunManifest run_manifest_from_json(const nlohmann::json& j);

// 26-character Crockford base32 id: 48-bit millisecond time then 80 random
// bits, so ids sort by creation time.
std::string new_run_id();
std::string make_run_id(std::int64_t time_ms, std::uint64_t random_hi, std::uint64_t random_lo);

// Writes to a temporary sibling, fsyncs and renames.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);
// Throws kIo when missing, kJsonParse (with the path) when malformed.
nlohmann::json read_json_file(const std::filesystem::path& path);

// Appends transitions to one run. Each append is written and fsynced before
// it returns.
class RunWriter {
 public:
  RunWriter(std::filesystem::path dir, int fd);
  RunWriter(RunWriter&& other) noexcept;
  RunWriter& operator=(RunWriter&& other) noexcept;
  RunWriter(const RunWriter&) = delete;
  RunWriter& operator=(const RunWriter&) = delete;
  ~RunWriter();

  // Throws kRunClosed after close().
  void append(const Transition& t);
  void close();
  bool closed() const { return fd_ < 0; }
  std::size_t appended() const { return appended_; }

 private:
  std::filesystem::path dir_;
  int fd_ = -1;
  std::size_t appended_ = 0;
};

struct StreamOptions {
  // Skip unparseable lines instead of throwing kCorruptRecord.
  bool skip_corrupt = false;
  std::function<bool(const Transition&)> filter;
};

struct StreamStats {
  std::size_t yielded = 0;
  std::vector<std::size_t> corrupt_lines;  // 1-based
};

// runs/<run_id>/{manifest.json, transitions.jsonl, reports/, artifacts/}
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;
  bool exists(const std::string& run_id) const;

  // Creates the run directory and manifest. Throws kInvalidArgument if the
  // id is taken, kRunNotFound if the parent does not exist.
  RunWriter create_run(const RunManifest& manifest);
  // Re-opens a running run's log for appending (resume).
  RunWriter reopen_run(const std::string& run_id);

  RunManifest load_manifest(const std::string& run_id) const;
  void save_manifest(const RunManifest& manifest) const;
  // Manifests sorted by run id.
  std::vector<RunManifest> list_runs() const;

  // Yields records in log order, which is (episode, step) order.
  StreamStats stream_transitions(const std::string& run_id,
                                 const std::function<void(const Transition&)>& fn,
                                 const StreamOptions& options = {}) const;
  std::vector<Transition> read_transitions(const std::string& run_id,
                                           const StreamOptions& options = {}) const;

  void save_report(const std::string& run_id, const std::string& name,
                   const nlohmann::json& report) const;
  nlohmann::json load_report(const std::string& run_id, const std::string& name) const;
  bool has_report(const std::string& run_id, const std::string& name) const;

  // Content-addressed: artifacts/<sha256>.<ext>; returns "artifacts/<file>".
  std::string put_artifact(const std::string& run_id, const std::string& bytes,
                           const std::string& extension) const;
  std::string get_artifact(const std::string& run_id, const std::string& ref) const;

 private:
  void require(const std::string& run_id) const;

  std::filesystem::path root_;
};

}  // namespace failscape
