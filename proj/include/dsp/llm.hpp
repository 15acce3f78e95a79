#pragma once

// Text-completion client with a content-addressed record/replay cache.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dsp/problem.hpp"

namespace dsp::llm {

struct SamplingConfig {
  double temperature = 0.0;
  double top_p = 1.0;
  std::size_t max_tokens = 2048;
  std::size_t n = 1;
  std::vector<std::string> stop_sequences;
  bool operator==(const SamplingConfig&) const = default;
};

/// Nucleus sampling for informal drafts.
SamplingConfig draft_preset(std::size_t n);
/// Greedy decoding for sketches; always a single sample.
SamplingConfig sketch_preset();

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ConfigError for out-of-range values or greedy sampling with n > 1.
void validate(const SamplingConfig& config);

struct CompletionRequest {
  std::string prompt;
  SamplingConfig config;
  std::string endpoint_id;
};

struct Usage {
  std::size_t prompt_units = 0;
  std::size_t completion_units = 0;
};

struct CompletionResponse {
  std::vector<std::string> completions;
  Usage usage;
  std::int64_t latency_ms = 0;
  bool from_cache = false;
};

class EndpointError : public std::runtime_error {
 public:
  EndpointError(int status, std::string body);
  [[nodiscard]] int status() const { return status_; }
  [[nodiscard]] const std::string& body() const { return body_; }
  /// 0 (transport failure), 408, 429 and 5xx are worth retrying.
  [[nodiscard]] bool transient() const;

 private:
  int status_;
  std::string body_;
};

class Timeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CacheMiss : public std::runtime_error {
 public:
  explicit CacheMiss(const std::string& key) : std::runtime_error("cache miss for key " + key), key(key) {}
  std::string key;
};

class CacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hex SHA-256 over a length-prefixed canonical encoding of the request
/// fields. `n` is excluded: sample i of a request is the same entry whether
/// it was drawn in a batch of 4 or of 100.
std::string cache_key(std::string_view endpoint_id, std::string_view prompt, const SamplingConfig& config,
                      std::size_t sample_index);

std::string sha256_hex(std::string_view data);

/// Append-only JSON-lines store of (key, value) records with an in-memory
/// index. Readers run concurrently; appends are serialized and flushed.
/// A truncated final line (from an interrupted append) is ignored on load.
class ResponseCache {
 public:
  /// In-memory only.
  ResponseCache() = default;
  /// Loads `path` if it exists; appends go to the same file.
  explicit ResponseCache(std::filesystem::path path);

  [[nodiscard]] std::optional<std::string> lookup(const std::string& key) const;
  /// Stores the value unless the key is already present. Returns true if stored.
  bool store(const std::string& key, const std::string& value);
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
};

enum class CacheMode { Live, Record, Replay };
std::string_view to_string(CacheMode m);
CacheMode parse_cache_mode(std::string_view s);
/// Reads DSP_CACHE_MODE; returns `fallback` when unset.
CacheMode cache_mode_from_env(CacheMode fallback);

struct RawCompletion {
  std::vector<std::string> completions;
  Usage usage;
};

/// A completion provider. Implementations must be safe to call from several
/// threads at once.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual RawCompletion complete(const std::string& prompt, const SamplingConfig& config) = 0;
};

struct HttpEndpointOptions {
  std::string url;                 // http(s)://host[:port]/path
  std::string auth_env_var;        // bearer token source; empty disables auth
  std::string model;               // forwarded as "model" when non-empty
  std::int64_t timeout_ms = 120000;
};

/// POSTs {prompt, max_tokens, temperature, top_p, n, stop} and reads
/// {choices:[{text}]}.
class HttpEndpoint : public Endpoint {
 public:
  explicit HttpEndpoint(HttpEndpointOptions options);
  RawCompletion complete(const std::string& prompt, const SamplingConfig& config) override;

 private:
  HttpEndpointOptions options_;
  std::string base_;
  std::string path_;
};

/// Serves pre-written completions from a JSON file, keyed by problem id:
///   {"schema_version": 1, "drafts": {id: [text, ...]}, "sketches": {id: [text, ...]}}
/// Draft prompts are matched to problems by their final informal statement;
/// sketch prompts by the theorem name in their final formal statement. Each
/// sketch request takes the next entry of that problem's list, cycling.
class CannedEndpoint : public Endpoint {
 public:
  CannedEndpoint(const std::filesystem::path& file, const std::vector<Problem>& problems);
  RawCompletion complete(const std::string& prompt, const SamplingConfig& config) override;

 private:
  std::map<std::string, std::vector<std::string>> drafts_;
  std::map<std::string, std::vector<std::string>> sketches_;
  std::map<std::string, std::string> by_statement_;
  std::mutex mu_;
  std::map<std::string, std::size_t> next_sketch_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::int64_t initial_backoff_ms = 500;
  std::int64_t max_backoff_ms = 8000;
};

struct ClientOptions {
  CacheMode mode = CacheMode::Replay;
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  /// Replaceable for tests.
  std::function<void(std::chrono::milliseconds)> sleep;
};

class LlmClient {
 public:
  /// `endpoint` may be null in Replay mode.
  LlmClient(std::shared_ptr<Endpoint> endpoint, std::shared_ptr<ResponseCache> cache, ClientOptions options);

  /// Returns config.n completions (fewer only if a live endpoint returns
  /// fewer). Throws CacheMiss in Replay mode when any sample is absent.
  CompletionResponse complete(const CompletionRequest& request);

  [[nodiscard]] CacheMode mode() const { return options_.mode; }

 private:
  RawCompletion call_with_retries(const CompletionRequest& request);

  std::shared_ptr<Endpoint> endpoint_;
  std::shared_ptr<ResponseCache> cache_;
  ClientOptions options_;
  std::counting_semaphore<> in_flight_;
};

/// Drops repeats under trim-and-collapse-whitespace normalization, keeping
/// the first occurrence (trimmed) of each.
std::vector<std::string> dedup(const std::vector<std::string>& completions);

}  // namespace dsp::llm
