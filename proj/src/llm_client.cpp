#include <algorithm>
#include <set>
#include <thread>

#include "dsp/llm.hpp"
#include "text_util.hpp"

namespace dsp::llm {

SamplingConfig draft_preset(std::size_t n) {
  SamplingConfig c;
  c.temperature = 0.6;
  c.top_p = 0.95;
  c.max_tokens = 2048;
  c.n = n;
  return c;
}

SamplingConfig sketch_preset() {
  SamplingConfig c;
  c.temperature = 0.0;
  c.top_p = 1.0;
  c.max_tokens = 2048;
  c.n = 1;
  return c;
}

void validate(const SamplingConfig& c) {
  if (!(c.temperature >= 0.0)) {
    throw ConfigError("temperature must be >= 0");
  }
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) {
    throw ConfigError("top_p must be in (0, 1]");
  }
  if (c.max_tokens == 0) {
    throw ConfigError("max_tokens must be positive");
  }
  if (c.temperature == 0.0 && c.n > 1) {
    throw ConfigError("greedy decoding (temperature 0) with n > 1 yields identical samples");
  }
}

EndpointError::EndpointError(int status, std::string body)
    : std::runtime_error("endpoint returned status " + std::to_string(status) + ": " + body.substr(0, 200)),
      status_(status),
      body_(std::move(body)) {}

bool EndpointError::transient() const { return status_ == 0 || status_ == 408 || status_ == 429 || status_ >= 500; }

LlmClient::LlmClient(std::shared_ptr<Endpoint> endpoint, std::shared_ptr<ResponseCache> cache, ClientOptions options)
    : endpoint_(std::move(endpoint)),
      cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
      options_(std::move(options)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_in_flight))) {
  if (!options_.sleep) {
    options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
  if (options_.mode != CacheMode::Replay && !endpoint_) {
    throw ConfigError("live and record modes need an endpoint");
  }
}

RawCompletion LlmClient::call_with_retries(const CompletionRequest& request) {
  std::int64_t backoff = options_.retry.initial_backoff_ms;
  for (int attempt = 1;; ++attempt) {
    try {
      in_flight_.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{in_flight_};
      return endpoint_->complete(request.prompt, request.config);
    } catch (const EndpointError& e) {
      if (!e.transient() || attempt >= options_.retry.max_attempts) {
        throw;
      }
    } catch (const Timeout&) {
      if (attempt >= options_.retry.max_attempts) {
        throw;
      }
    }
    options_.sleep(std::chrono::milliseconds(backoff));
    backoff = std::min(backoff * 2, options_.retry.max_backoff_ms);
  }
}

CompletionResponse LlmClient::complete(const CompletionRequest& request) {
  validate(request.config);
  const auto start = std::chrono::steady_clock::now();
  CompletionResponse resp;
  std::vector<std::string> keys;
  keys.reserve(request.config.n);
  for (std::size_t i = 0; i < request.config.n; ++i) {
    keys.push_back(cache_key(request.endpoint_id, request.prompt, request.config, i));
  }

  if (options_.mode != CacheMode::Live) {
    std::vector<std::string> cached;
    for (const auto& k : keys) {
      auto v = cache_->lookup(k);
      if (!v) {
        if (options_.mode == CacheMode::Replay) {
          throw CacheMiss(k);
        }
        break;
      }
      cached.push_back(std::move(*v));
    }
    if (cached.size() == keys.size()) {
      resp.completions = std::move(cached);
      resp.from_cache = true;
      return resp;
    }
  }

  RawCompletion raw = call_with_retries(request);
  if (raw.completions.size() > request.config.n) {
    raw.completions.resize(request.config.n);
  }
  if (options_.mode == CacheMode::Record) {
    // Samples already on file win, so a partial earlier recording stays stable.
    for (std::size_t i = 0; i < raw.completions.size(); ++i) {
      if (!cache_->store(keys[i], raw.completions[i])) {
        raw.completions[i] = *cache_->lookup(keys[i]);
      }
    }
  }
  resp.completions = std::move(raw.completions);
  resp.usage = raw.usage;
  resp.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return resp;
}

std::vector<std::string> dedup(const std::vector<std::string>& completions) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& c : completions) {
    if (seen.insert(text::collapse_whitespace(c)).second) {
      out.emplace_back(text::trim(c));
    }
  }
  return out;
}

}  // namespace dsp::llm
