#include "failscape/response_cache.hpp"

#include <fstream>

#include "failscape/errors.hpp"
#include "failscape/hashing.hpp"
#include "failscape/run_store.hpp"

namespace failscape {

namespace fs = std::filesystem;

std::string to_string(CacheMode mode) {
  switch (mode) {
    case CacheMode::kReadWrite: return "read-write";
    case CacheMode::kReplayOnly: return "replay";
    case CacheMode::kDisabled: return "disabled";
  }
  return "unknown";
}

CacheMode cache_mode_from_string(const std::string& s) {
  if (s == "read-write") return CacheMode::kReadWrite;
  if (s == "replay") return CacheMode::kReplayOnly;
  if (s == "disabled") return CacheMode::kDisabled;
  throw Error(ErrorCode::kInvalidArgument, "unknown cache mode '" + s + "' (read-write|replay|disabled)");
}

ResponseCache::ResponseCache(fs::path dir, CacheMode mode) : dir_(std::move(dir)), mode_(mode) {
  fs::create_directories(dir_ / "objects");
}

std::optional<CachedResponse> ResponseCache::get(const std::string& key) const {
  if (mode_ == CacheMode::kDisabled) return std::nullopt;
  const fs::path path = dir_ / "objects" / (key + ".json");
  if (!fs::exists(path)) return std::nullopt;
  const nlohmann::json j = read_json_file(path);
  try {
    CachedResponse r{j.at("status").get<int>(), j.at("content_type").get<std::string>(),
                     base64_decode(j.at("body_b64").get<std::string>())};
    ++hits_;
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kJsonParse, path.string() + ": " + e.what());
  }
}

void ResponseCache::put(const std::string& key, const CachedResponse& response,
                        const nlohmann::json& meta) {
  if (mode_ != CacheMode::kReadWrite) return;
  const nlohmann::json envelope = {{"key", key},
                                   {"status", response.status},
                                   {"content_type", response.content_type},
                                   {"body_b64", base64_encode(response.body)},
                                   {"meta", meta}};
  const fs::path path = dir_ / "objects" / (key + ".json");
  std::lock_guard lock(mu_);
  const bool fresh = !fs::exists(path);
  write_file_atomic(path, envelope.dump());
  if (fresh) {
    std::ofstream index(dir_ / "index.jsonl", std::ios::app);
    index << nlohmann::json{{"key", key}, {"status", response.status}, {"meta", meta}}.dump() << "\n";
  }
  ++stores_;
}

void ResponseCache::log_call(const nlohmann::json& record) {
  std::lock_guard lock(mu_);
  std::ofstream calls(dir_ / "calls.jsonl", std::ios::app);
  calls << record.dump() << "\n";
}

std::string cache_key(const nlohmann::json& endpoint_fingerprint, const std::string& body,
                      std::size_t attempt) {
  std::string material = endpoint_fingerprint.dump() + "\n" + body;
  if (attempt > 0) material += "#" + std::to_string(attempt);
  return sha256_hex(material);
}

}  // namespace failscape
