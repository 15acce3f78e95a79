#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dsp/llm.hpp"
#include "dsp/prompting.hpp"
#include "text_util.hpp"

namespace dsp::llm {

namespace {

using nlohmann::json;

// Returns the text between the last `header` line and the next blank line.
std::optional<std::string> last_section(std::string_view prompt, std::string_view header) {
  const std::string marker = std::string(header) + "\n";
  const auto pos = prompt.rfind(marker);
  if (pos == std::string_view::npos) {
    return std::nullopt;
  }
  const auto begin = pos + marker.size();
  const auto end = prompt.find("\n\n", begin);
  return std::string(text::trim(prompt.substr(begin, end == std::string_view::npos ? end : end - begin)));
}

std::optional<std::string> theorem_name(std::string_view statement) {
  const auto pos = statement.find("theorem");
  if (pos == std::string_view::npos) {
    return std::nullopt;
  }
  std::size_t i = pos + 7;
  while (i < statement.size() && text::is_space(statement[i])) {
    ++i;
  }
  std::size_t j = i;
  while (j < statement.size() && (std::isalnum(static_cast<unsigned char>(statement[j])) != 0 || statement[j] == '_' ||
                                  statement[j] == '\'' || statement[j] == '.')) {
    ++j;
  }
  if (j == i) {
    return std::nullopt;
  }
  return std::string(statement.substr(i, j - i));
}

std::map<std::string, std::vector<std::string>> read_lists(const json& doc, const char* field) {
  std::map<std::string, std::vector<std::string>> out;
  if (!doc.contains(field)) {
    return out;
  }
  for (const auto& [id, list] : doc[field].items()) {
    out[id] = list.get<std::vector<std::string>>();
  }
  return out;
}

}  // namespace

HttpEndpoint::HttpEndpoint(HttpEndpointOptions options) : options_(std::move(options)) {
  const auto scheme = options_.url.find("://");
  if (scheme == std::string::npos) {
    throw ConfigError("endpoint url must start with http:// or https://");
  }
  const auto slash = options_.url.find('/', scheme + 3);
  base_ = options_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : options_.url.substr(slash);
}

RawCompletion HttpEndpoint::complete(const std::string& prompt, const SamplingConfig& config) {
  json body = {{"prompt", prompt},
               {"max_tokens", config.max_tokens},
               {"temperature", config.temperature},
               {"top_p", config.top_p},
               {"n", config.n},
               {"stop", config.stop_sequences}};
  if (!options_.model.empty()) {
    body["model"] = options_.model;
  }
  httplib::Headers headers;
  if (!options_.auth_env_var.empty()) {
    const char* token = std::getenv(options_.auth_env_var.c_str());
    if (token == nullptr || *token == '\0') {
      throw EndpointError(401, "credential variable " + options_.auth_env_var + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  httplib::Client client(base_);
  const auto secs = options_.timeout_ms / 1000;
  const auto usecs = (options_.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(10, 0);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    if (res.error() == httplib::Error::Read) {
      throw Timeout("endpoint read failed or timed out: " + httplib::to_string(res.error()));
    }
    throw EndpointError(0, httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw EndpointError(res->status, res->body);
  }
  RawCompletion out;
  try {
    const json doc = json::parse(res->body);
    for (const auto& choice : doc.at("choices")) {
      out.completions.push_back(choice.at("text").get<std::string>());
    }
    if (doc.contains("usage")) {
      out.usage.prompt_units = doc["usage"].value("prompt_tokens", std::size_t{0});
      out.usage.completion_units = doc["usage"].value("completion_tokens", std::size_t{0});
    }
  } catch (const json::exception& e) {
    throw EndpointError(res->status, std::string("malformed response body: ") + e.what());
  }
  return out;
}

CannedEndpoint::CannedEndpoint(const std::filesystem::path& file, const std::vector<Problem>& problems) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open canned completions file " + file.string());
  }
  json doc;
  try {
    doc = json::parse(in);
    drafts_ = read_lists(doc, "drafts");
    sketches_ = read_lists(doc, "sketches");
  } catch (const json::exception& e) {
    throw ConfigError("malformed canned completions file " + file.string() + ": " + e.what());
  }
  for (const auto& p : problems) {
    by_statement_[std::string(text::trim(p.informal_statement))] = p.id;
  }
}

RawCompletion CannedEndpoint::complete(const std::string& prompt, const SamplingConfig& config) {
  RawCompletion out;
  if (prompt.ends_with(std::string(prompting::kSketchHeader) + "\n")) {
    const auto statement = last_section(prompt, prompting::kFormalStatementHeader);
    const auto name = statement ? theorem_name(*statement) : std::nullopt;
    const auto found = name ? sketches_.find(*name) : sketches_.end();
    if (found == sketches_.end() || found->second.empty()) {
      throw EndpointError(404, "no canned sketch for " + name.value_or("<unnamed>"));
    }
    std::lock_guard lock(mu_);
    const auto& list = found->second;
    std::size_t& next = next_sketch_[*name];
    for (std::size_t i = 0; i < config.n; ++i) {
      out.completions.push_back(list[next % list.size()]);
      ++next;
    }
    return out;
  }
  const auto statement = last_section(prompt, prompting::kInformalStatementHeader);
  const auto it = statement ? by_statement_.find(*statement) : by_statement_.end();
  const auto found = it == by_statement_.end() ? drafts_.end() : drafts_.find(it->second);
  if (found == drafts_.end()) {
    throw EndpointError(404, "no canned drafts for prompt");
  }
  const auto& list = found->second;
  for (std::size_t i = 0; i < config.n && i < list.size(); ++i) {
    out.completions.push_back(list[i]);
  }
  return out;
}

}  // namespace dsp::llm
