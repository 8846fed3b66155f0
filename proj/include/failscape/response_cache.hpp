#pragma once

#include <atomic>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

namespace failscape {

enum class CacheMode {
  kReadWrite,   // hits short-circuit, misses go to the network and are stored
  kReplayOnly,  // misses raise ReplayMiss; the network is never touched
  kDisabled,    // always call the network, store nothing
};

std::string to_string(CacheMode mode);
CacheMode cache_mode_from_string(const std::string& s);

// A stored endpoint reply: HTTP status, content type and raw body.
struct CachedResponse {
  int status = 0;
  std::string content_type;
  std::string body;

  bool operator==(const CachedResponse&) const = default;
};

// Content-addressed reply cache:
//   <dir>/objects/<key>.json   one envelope per reply (body base64-encoded)
//   <dir>/index.jsonl          one line per stored key
//   <dir>/calls.jsonl          one line per gateway call, hit or miss
// Writes are atomic (temp file + rename); safe for concurrent use.
class ResponseCache {
 public:
  ResponseCache(std::filesystem::path dir, CacheMode mode);

  CacheMode mode() const { return mode_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::optional<CachedResponse> get(const std::string& key) const;
  void put(const std::string& key, const CachedResponse& response, const nlohmann::json& meta);
  void log_call(const nlohmann::json& record);

  std::size_t hits() const { return hits_; }
  std::size_t stores() const { return stores_; }

 private:
  std::filesystem::path dir_;
  CacheMode mode_;
  mutable std::mutex mu_;
  mutable std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> stores_{0};
};

// sha256 over the endpoint fingerprint and request body (plus "#k" for the
// k-th semantic retry).
std::string cache_key(const nlohmann::json& endpoint_fingerprint, const std::string& body,
                      std::size_t attempt = 0);

}  // namespace failscape
