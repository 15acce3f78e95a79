#include <fstream>
#include <sstream>
#include <thread>

#include "dsp/prover.hpp"
#include "text_util.hpp"

namespace dsp::prover {

namespace {

bool glob_match(std::string_view pat, std::string_view s) {
  // Iterative '*'/'?' matcher with single-star backtracking.
  std::size_t p = 0;
  std::size_t i = 0;
  std::size_t star = std::string_view::npos;
  std::size_t mark = 0;
  while (i < s.size()) {
    if (p < pat.size() && (pat[p] == '?' || pat[p] == s[i])) {
      ++p;
      ++i;
    } else if (p < pat.size() && pat[p] == '*') {
      star = p++;
      mark = i;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      i = ++mark;
    } else {
      return false;
    }
  }
  while (p < pat.size() && pat[p] == '*') {
    ++p;
  }
  return p == pat.size();
}

Matcher parse_matcher(const Json& j, const std::string& where) {
  if (!j.is_object() || j.size() != 1) {
    throw ScriptError(where + ": matcher must have exactly one of exact, substring, glob");
  }
  Matcher m;
  const auto& [key, value] = *j.items().begin();
  if (!value.is_string()) {
    throw ScriptError(where + ": matcher pattern must be a string");
  }
  if (key == "exact") {
    m.kind = Matcher::Kind::Exact;
  } else if (key == "substring") {
    m.kind = Matcher::Kind::Substring;
  } else if (key == "glob") {
    m.kind = Matcher::Kind::Glob;
  } else {
    throw ScriptError(where + ": unknown matcher kind '" + key + "'");
  }
  m.pattern = text::collapse_whitespace(value.get<std::string>());
  return m;
}

ScriptOutcome parse_outcome(const Json& j, const std::vector<std::string>& tactics, const std::string& where) {
  if (!j.is_object() || j.size() != 1) {
    throw ScriptError(where + ": outcome must have exactly one of close_at_tactic, close_by_hammer, fail, timeout_ms");
  }
  ScriptOutcome o;
  const auto& [key, value] = *j.items().begin();
  if (key == "close_at_tactic") {
    o.kind = ScriptOutcome::Kind::CloseAtTactic;
    if (value.is_number_unsigned()) {
      const auto idx = value.get<std::size_t>();
      if (idx >= tactics.size()) {
        throw ScriptError(where + ": close_at_tactic index " + std::to_string(idx) + " out of range");
      }
      o.tactic = tactics[idx];
    } else if (value.is_string()) {
      o.tactic = value.get<std::string>();
    } else {
      throw ScriptError(where + ": close_at_tactic takes an index or a tactic name");
    }
  } else if (key == "close_by_hammer") {
    if (!value.is_string()) {
      throw ScriptError(where + ": close_by_hammer takes the reconstructed step text");
    }
    o.kind = ScriptOutcome::Kind::CloseByHammer;
    o.step = value.get<std::string>();
  } else if (key == "fail") {
    o.kind = ScriptOutcome::Kind::Fail;
    o.reason = value.is_string() ? value.get<std::string>() : std::string("no proof found");
  } else if (key == "timeout_ms") {
    if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
      throw ScriptError(where + ": timeout_ms must be a non-negative integer");
    }
    o.kind = ScriptOutcome::Kind::Timeout;
    o.duration_ms = value.get<std::int64_t>();
  } else {
    throw ScriptError(where + ": unknown outcome '" + key + "'");
  }
  return o;
}

ScriptRule parse_rule(const Json& j, const std::vector<std::string>& tactics, const std::string& where,
                      bool is_default) {
  if (!j.is_object()) {
    throw ScriptError(where + ": rule must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "goal" && key != "context" && key != "outcome" && key != "latency_ms" && key != "note") {
      throw ScriptError(where + ": unknown rule field '" + key + "'");
    }
  }
  ScriptRule r;
  if (j.contains("goal")) {
    r.goal = parse_matcher(j["goal"], where + ".goal");
  }
  if (j.contains("context")) {
    r.context = parse_matcher(j["context"], where + ".context");
  }
  if (!is_default && !r.goal && !r.context) {
    throw ScriptError(where + ": rule needs a goal or context matcher");
  }
  if (!j.contains("outcome")) {
    throw ScriptError(where + ": rule needs an outcome");
  }
  r.outcome = parse_outcome(j["outcome"], tactics, where + ".outcome");
  if (j.contains("latency_ms")) {
    if (!j["latency_ms"].is_number_integer() || j["latency_ms"].get<std::int64_t>() < 0) {
      throw ScriptError(where + ": latency_ms must be a non-negative integer");
    }
    r.latency_ms = j["latency_ms"].get<std::int64_t>();
  }
  return r;
}

// "by auto" -> "auto"; "by (auto simp: field_simps)" -> "auto simp: field_simps".
std::string tactic_name(std::string_view step) {
  std::string s = text::collapse_whitespace(step);
  std::string_view v = s;
  if (v.starts_with("by ")) {
    v.remove_prefix(3);
  }
  if (v.size() >= 2 && v.front() == '(' && v.back() == ')') {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(text::trim(v));
}

Json response(std::int64_t id, std::string_view status) { return Json{{"id", id}, {"status", status}}; }

}  // namespace

bool Matcher::matches(std::string_view text_in) const {
  const std::string t = text::collapse_whitespace(text_in);
  switch (kind) {
    case Kind::Exact:
      return t == pattern;
    case Kind::Substring:
      return t.find(pattern) != std::string::npos;
    case Kind::Glob:
      return glob_match(pattern, t);
  }
  return false;
}

const ScriptRule& Script::rule_for(std::string_view goal, std::string_view context) const {
  for (const auto& r : rules) {
    if ((!r.goal || r.goal->matches(goal)) && (!r.context || r.context->matches(context))) {
      return r;
    }
  }
  return fallback;
}

Script parse_script(std::string_view json_text, const std::vector<std::string>& tactics) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ScriptError(std::string("script is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw ScriptError("script must be a JSON object");
  }
  if (doc.value("schema_version", 0) != 1) {
    throw ScriptError("script schema_version must be 1");
  }
  Script s;
  if (!doc.contains("default")) {
    throw ScriptError("script needs a default rule");
  }
  s.fallback = parse_rule(doc["default"], tactics, "default", true);
  if (doc.contains("rules")) {
    if (!doc["rules"].is_array()) {
      throw ScriptError("rules must be an array");
    }
    for (std::size_t i = 0; i < doc["rules"].size(); ++i) {
      s.rules.push_back(parse_rule(doc["rules"][i], tactics, "rules[" + std::to_string(i) + "]", false));
    }
  }
  if (doc.contains("verify")) {
    if (!doc["verify"].is_array()) {
      throw ScriptError("verify must be an array");
    }
    for (std::size_t i = 0; i < doc["verify"].size(); ++i) {
      const auto& v = doc["verify"][i];
      const std::string where = "verify[" + std::to_string(i) + "]";
      if (!v.is_object() || !v.contains("proof") || !v.contains("reject") || !v["reject"].is_string()) {
        throw ScriptError(where + ": needs a proof matcher and a reject reason");
      }
      s.verify.push_back(VerifyRule{parse_matcher(v["proof"], where + ".proof"), v["reject"].get<std::string>()});
    }
  }
  return s;
}

Script load_script(const std::filesystem::path& path, const std::vector<std::string>& tactics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ScriptError("cannot open script " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_script(ss.str(), tactics);
  } catch (const ScriptError& e) {
    throw ScriptError(path.string() + ": " + e.what());
  }
}

ScriptedProver::ScriptedProver(std::shared_ptr<const Script> script) : script_(std::move(script)) {}

Json ScriptedProver::answer_after(std::int64_t work_ms, std::int64_t timeout_ms, Json result, std::int64_t id) {
  if (work_ms >= timeout_ms) {
    std::this_thread::sleep_for(std::chrono::milliseconds(timeout_ms));
    return response(id, "timeout");
  }
  if (work_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(work_ms));
  }
  return result;
}

Json ScriptedProver::step(const Json& frame) {
  const auto id = frame.value("id", std::int64_t{0});
  const auto text_in = frame.value("text", std::string());
  const auto timeout = frame.value("timeout_ms", std::int64_t{0});
  if (!in_goal_) {
    // Theory level: the text is a complete proof to check.
    ++verify_calls_;
    Json fail = response(id, "fail");
    try {
      const auto ast = sketch::parse_sketch(text_in);
      if (!sketch::has_proof(ast)) {
        fail["reason"] = "theorem has no proof";
        return fail;
      }
      if (sketch::count_gaps(ast) != 0) {
        fail["reason"] = "proof has unfinished gaps";
        return fail;
      }
    } catch (const sketch::ParseError& e) {
      fail["reason"] = std::string("malformed proof: ") + e.what();
      return fail;
    }
    for (const auto& v : script_->verify) {
      if (v.proof.matches(text_in)) {
        fail["reason"] = v.reason;
        return fail;
      }
    }
    Json ok = response(id, "ok");
    ok["state_id"] = "s" + std::to_string(next_state_++);
    return ok;
  }
  if (closed_) {
    Json fail = response(id, "fail");
    fail["reason"] = "no subgoals";
    return fail;
  }
  const ScriptOutcome& o = active_->outcome;
  const std::int64_t work = o.kind == ScriptOutcome::Kind::Timeout ? o.duration_ms : active_->latency_ms;
  Json result = response(id, "fail");
  if (o.kind == ScriptOutcome::Kind::CloseAtTactic && tactic_name(text_in) == tactic_name(o.tactic)) {
    result = response(id, "ok");
    result["state_id"] = "s" + std::to_string(next_state_++);
  } else {
    result["reason"] = o.kind == ScriptOutcome::Kind::Fail ? o.reason : "tactic failed";
  }
  Json out = answer_after(work, timeout, std::move(result), id);
  closed_ = out["status"] == "ok";
  return out;
}

Json ScriptedProver::hammer(const Json& frame) {
  const auto id = frame.value("id", std::int64_t{0});
  const auto timeout = frame.value("timeout_ms", std::int64_t{0});
  if (!in_goal_ || closed_) {
    Json fail = response(id, "fail");
    fail["reason"] = "no goal";
    return fail;
  }
  const ScriptOutcome& o = active_->outcome;
  Json result = response(id, "fail");
  std::int64_t work = active_->latency_ms;
  switch (o.kind) {
    case ScriptOutcome::Kind::CloseByHammer:
      result = response(id, "ok");
      result["reconstruction"] = o.step;
      break;
    case ScriptOutcome::Kind::CloseAtTactic:
      result = response(id, "ok");
      result["reconstruction"] = tactic_step(o.tactic);
      break;
    case ScriptOutcome::Kind::Fail:
      result["reason"] = o.reason;
      break;
    case ScriptOutcome::Kind::Timeout:
      work = o.duration_ms;
      result["reason"] = "no proof found";
      break;
  }
  Json out = answer_after(work, timeout, std::move(result), id);
  if (out["status"] == "ok") {
    out["state_id"] = "s" + std::to_string(next_state_++);
    closed_ = true;
  }
  return out;
}

Json ScriptedProver::handle(const Json& frame) {
  const auto id = frame.value("id", std::int64_t{0});
  const auto cmd = frame.value("cmd", std::string());
  if (cmd == "init") {
    const auto goal = frame.value("goal", std::string());
    const auto statement = frame.value("statement", std::string());
    in_goal_ = !goal.empty();
    closed_ = false;
    active_ = in_goal_ ? &script_->rule_for(goal, statement) : nullptr;
    Json ok = response(id, "ok");
    ok["state_id"] = "s" + std::to_string(next_state_++);
    return ok;
  }
  if (cmd == "step") {
    return step(frame);
  }
  if (cmd == "hammer") {
    return hammer(frame);
  }
  if (cmd == "reset") {
    in_goal_ = false;
    closed_ = false;
    active_ = nullptr;
    Json ok = response(id, "ok");
    ok["state_id"] = "s0";
    return ok;
  }
  if (cmd == "quit") {
    return response(id, "ok");
  }
  Json fail = response(id, "fail");
  fail["reason"] = "unknown command '" + cmd + "'";
  return fail;
}

}  // namespace dsp::prover
