#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <json.hpp>

#include "dsp/llm.hpp"

namespace dsp::llm {

namespace {

void put_field(std::string& out, std::string_view value) {
  out += std::to_string(value.size());
  out += ':';
  out += value;
  out += ';';
}

std::string format_real(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string cache_key(std::string_view endpoint_id, std::string_view prompt, const SamplingConfig& config,
                      std::size_t sample_index) {
  std::string canon = "dsp-completion-v1;";
  put_field(canon, endpoint_id);
  put_field(canon, prompt);
  put_field(canon, format_real(config.temperature));
  put_field(canon, format_real(config.top_p));
  put_field(canon, std::to_string(config.max_tokens));
  put_field(canon, std::to_string(config.stop_sequences.size()));
  for (const auto& s : config.stop_sequences) {
    put_field(canon, s);
  }
  put_field(canon, std::to_string(sample_index));
  return sha256_hex(canon);
}

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_, std::ios::binary);
  if (!in) {
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      if (in.peek() == std::char_traits<char>::eof()) {
        break;  // interrupted final append
      }
      throw CacheError(path_->string() + ":" + std::to_string(line_no) + ": malformed cache record");
    }
    if (!rec.is_object() || !rec.contains("key") || !rec.contains("value") || !rec["key"].is_string() ||
        !rec["value"].is_string()) {
      throw CacheError(path_->string() + ":" + std::to_string(line_no) + ": cache record needs string key and value");
    }
    entries_.emplace(rec["key"].get<std::string>(), rec["value"].get<std::string>());
  }
}

std::optional<std::string> ResponseCache::lookup(const std::string& key) const {
  std::shared_lock lock(mu_);
  if (auto it = entries_.find(key); it != entries_.end()) {
    return it->second;
  }
  return std::nullopt;
}

bool ResponseCache::store(const std::string& key, const std::string& value) {
  std::unique_lock lock(mu_);
  if (entries_.count(key) != 0) {
    return false;
  }
  if (path_) {
    std::ofstream out(*path_, std::ios::binary | std::ios::app);
    if (!out) {
      throw CacheError("cannot append to cache file " + path_->string());
    }
    out << nlohmann::json{{"key", key}, {"value", value}}.dump() << '\n';
    out.flush();
    if (!out) {
      throw CacheError("write to cache file " + path_->string() + " failed");
    }
  }
  entries_.emplace(key, value);
  return true;
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::string_view to_string(CacheMode m) {
  switch (m) {
    case CacheMode::Live:
      return "live";
    case CacheMode::Record:
      return "record";
    case CacheMode::Replay:
      return "replay";
  }
  return "replay";
}

CacheMode parse_cache_mode(std::string_view s) {
  for (auto m : {CacheMode::Live, CacheMode::Record, CacheMode::Replay}) {
    if (to_string(m) == s) {
      return m;
    }
  }
  throw ConfigError("unknown cache mode '" + std::string(s) + "' (expected live, record, or replay)");
}

CacheMode cache_mode_from_env(CacheMode fallback) {
  const char* v = std::getenv("DSP_CACHE_MODE");
  if (v == nullptr || *v == '\0') {
    return fallback;
  }
  return parse_cache_mode(v);
}

}  // namespace dsp::llm
