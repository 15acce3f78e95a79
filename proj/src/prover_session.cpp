#include <chrono>

#include "dsp/prover.hpp"
#include "text_util.hpp"

namespace dsp::prover {

namespace {

using Clock = std::chrono::steady_clock;

// Held back from the per-gap budget for round trips and the closing reset.
constexpr std::int64_t kBudgetReserveMs = 10;

std::int64_t ms_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

Outcome outcome_of(const Json& resp) {
  const auto status = resp.value("status", std::string());
  if (status == "ok") {
    return Outcome::Success;
  }
  if (status == "timeout") {
    return Outcome::Timeout;
  }
  return Outcome::Fail;
}

}  // namespace

std::vector<std::string> default_tactics() {
  return {"auto", "simp", "blast", "fastforce", "force", "eval", "presburger", "sos", "arith", "linarith",
          "auto simp: field_simps"};
}

void validate(const ProverConfig& c) {
  if (c.tactic_list.empty()) {
    throw ConfigError("tactic list is empty");
  }
  if (c.tactic_timeout_ms <= 0 || c.hammer_timeout_ms <= 0 || c.per_gap_budget_ms <= 0 || c.grace_ms < 0) {
    throw ConfigError("prover timeouts must be positive");
  }
}

std::string tactic_step(std::string_view tactic) {
  const std::string t = text::collapse_whitespace(tactic);
  if (t.find(' ') != std::string::npos && !(t.front() == '(' && t.back() == ')')) {
    return "by (" + t + ")";
  }
  return "by " + t;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Success:
      return "success";
    case Outcome::Fail:
      return "fail";
    case Outcome::Timeout:
      return "timeout";
  }
  return "fail";
}

const std::vector<Attempt>& attempts_of(const GapResult& r) {
  return std::visit([](const auto& v) -> const std::vector<Attempt>& { return v.attempts; }, r);
}

BackendSpec parse_backend(std::string_view text_in) {
  if (text_in.starts_with("scripted:")) {
    return {BackendSpec::Kind::Scripted, std::string(text_in.substr(9))};
  }
  if (text_in.starts_with("external:tcp:")) {
    return {BackendSpec::Kind::Tcp, std::string(text_in.substr(13))};
  }
  if (text_in.starts_with("external:exec:")) {
    return {BackendSpec::Kind::Exec, std::string(text_in.substr(14))};
  }
  throw ConfigError("prover backend must be scripted:<path>, external:tcp:<host:port>, or external:exec:<command>");
}

// Marks the session Busy for the duration of one public operation.
class ProverSession::Guard {
 public:
  explicit Guard(ProverSession& s) : s_(s) {
    State expected = State::Idle;
    if (!s_.state_.compare_exchange_strong(expected, State::Busy)) {
      if (expected == State::Dead) {
        throw SessionDead("prover session " + s_.id_ + " is dead");
      }
      throw SessionBusy();
    }
  }
  ~Guard() {
    State expected = State::Busy;
    s_.state_.compare_exchange_strong(expected, State::Idle);
  }
  Guard(const Guard&) = delete;
  Guard& operator=(const Guard&) = delete;

 private:
  ProverSession& s_;
};

ProverSession::ProverSession(std::unique_ptr<Transport> transport, ProverConfig config, std::string session_id)
    : transport_(std::move(transport)), config_(std::move(config)), id_(std::move(session_id)) {
  validate(config_);
  Json resp;
  try {
    resp = command(Json{{"cmd", "init"}, {"theory", config_.theory}, {"statement", ""}}, config_.tactic_timeout_ms);
  } catch (const SessionDead& e) {
    throw ConnectError("prover backend did not start: " + std::string(e.what()));
  }
  if (outcome_of(resp) != Outcome::Success) {
    throw ConnectError("prover backend refused init: " + resp.value("reason", std::string("no reason given")));
  }
}

ProverSession::~ProverSession() {
  if (state_.load() != State::Dead && transport_) {
    try {
      command(Json{{"cmd", "quit"}}, 1000);
    } catch (const std::exception&) {
      // Best effort on shutdown.
    }
  }
}

Json ProverSession::command(Json frame, std::int64_t timeout_ms) {
  const std::uint64_t id = next_id_++;
  frame["id"] = id;
  Json resp;
  try {
    resp = transport_->roundtrip(frame, timeout_ms + config_.grace_ms);
  } catch (const SessionDead&) {
    state_ = State::Dead;
    throw;
  }
  if (!resp.is_object() || !resp.contains("id") || resp["id"] != id) {
    state_ = State::Dead;
    throw SessionDead("prover answered out of order (expected id " + std::to_string(id) + ")");
  }
  return resp;
}

GapResult ProverSession::cascade(const sketch::GapSite& site, std::string_view context) {
  const auto start = Clock::now();
  const auto budget = std::max<std::int64_t>(config_.per_gap_budget_ms - kBudgetReserveMs, 1);
  std::vector<Attempt> attempts;
  auto remaining = [&] { return budget - ms_since(start); };
  auto finish = [&](GapResult r) {
    command(Json{{"cmd", "reset"}}, config_.tactic_timeout_ms);
    return r;
  };

  const Json init = command(
      Json{{"cmd", "init"}, {"theory", config_.theory}, {"statement", std::string(context)}, {"goal", site.goal}},
      std::min(config_.tactic_timeout_ms, std::max<std::int64_t>(remaining(), 1)));
  if (outcome_of(init) != Outcome::Success) {
    attempts.push_back(Attempt{"init", outcome_of(init), ms_since(start), init.value("reason", std::string())});
    return finish(Failed{std::move(attempts), ms_since(start)});
  }

  for (std::size_t i = 0; i < config_.tactic_list.size(); ++i) {
    const auto left = remaining();
    if (left <= 0) {
      return finish(TimedOut{std::move(attempts), ms_since(start)});
    }
    const auto timeout = std::min(config_.tactic_timeout_ms, left);
    const std::string step = tactic_step(config_.tactic_list[i]);
    const auto t0 = Clock::now();
    const Json resp = command(Json{{"cmd", "step"}, {"text", step}, {"timeout_ms", timeout}}, timeout);
    attempts.push_back(
        Attempt{config_.tactic_list[i], outcome_of(resp), ms_since(t0), resp.value("reason", std::string())});
    if (outcome_of(resp) == Outcome::Success) {
      return finish(Closed{step, i, ms_since(start), std::move(attempts)});
    }
  }

  const auto left = remaining();
  if (left <= 0) {
    return finish(TimedOut{std::move(attempts), ms_since(start)});
  }
  const auto timeout = std::min(config_.hammer_timeout_ms, left);
  const auto t0 = Clock::now();
  const Json resp = command(Json{{"cmd", "hammer"}, {"timeout_ms", timeout}}, timeout);
  Attempt hammer{std::string(kHammerName), outcome_of(resp), ms_since(t0), resp.value("reason", std::string())};
  if (hammer.outcome == Outcome::Success) {
    const std::string step = text::collapse_whitespace(resp.value("reconstruction", std::string()));
    bool usable = false;
    try {
      usable = !std::holds_alternative<sketch::Gap>(sketch::parse_justification(step));
    } catch (const sketch::ParseError&) {
      usable = false;
    }
    if (usable) {
      attempts.push_back(std::move(hammer));
      return finish(Closed{step, std::nullopt, ms_since(start), std::move(attempts)});
    }
    hammer.outcome = Outcome::Fail;
    hammer.reason = "unusable reconstruction: " + step;
  }
  const bool timed_out = hammer.outcome == Outcome::Timeout;
  attempts.push_back(std::move(hammer));
  if (timed_out) {
    return finish(TimedOut{std::move(attempts), ms_since(start)});
  }
  return finish(Failed{std::move(attempts), ms_since(start)});
}

GapResult ProverSession::close_gap(const sketch::GapSite& site, std::string_view context) {
  Guard guard(*this);
  return cascade(site, context);
}

Verdict ProverSession::verify_unlocked(std::string_view proof_text) {
  if (!sketch::check_no_cheat(proof_text).clean) {
    return Verdict{false, "cheating keyword"};
  }
  const Json resp = command(
      Json{{"cmd", "step"}, {"text", std::string(proof_text)}, {"timeout_ms", config_.hammer_timeout_ms}},
      config_.hammer_timeout_ms);
  switch (outcome_of(resp)) {
    case Outcome::Success:
      return Verdict{true, ""};
    case Outcome::Timeout:
      return Verdict{false, "timeout"};
    case Outcome::Fail:
      break;
  }
  return Verdict{false, resp.value("reason", std::string("rejected"))};
}

Verdict ProverSession::verify_full(std::string_view proof_text) {
  Guard guard(*this);
  return verify_unlocked(proof_text);
}

ProveOutcome ProverSession::prove_sketch(const sketch::SketchAst& ast) {
  Guard guard(*this);
  const std::string original = sketch::serialize(ast);
  if (!sketch::check_no_cheat(original).clean) {
    return FullProofResult{original, {}, Verdict{false, "cheating keyword"}};
  }
  const auto sites = sketch::extract_gaps(ast);
  sketch::SketchAst current = ast;
  std::vector<GapResult> results;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    GapResult r = cascade(sites[i], sketch::serialize_prefix(current, sites[i].path));
    const auto* closed = std::get_if<Closed>(&r);
    if (closed != nullptr) {
      current = sketch::fill_gap(current, sites[i], closed->closing_step);
    }
    results.push_back(std::move(r));
    if (closed == nullptr) {
      return SketchFailure{i, std::move(results)};
    }
  }
  std::string proof = sketch::serialize(current);
  Verdict verdict = verify_unlocked(proof);
  return FullProofResult{std::move(proof), std::move(results), std::move(verdict)};
}

DirectResult ProverSession::direct_prove(std::string_view formal_statement) {
  Guard guard(*this);
  sketch::SketchAst ast = sketch::parse_sketch(formal_statement);
  ast.body.clear();
  ast.body.push_back(sketch::ProofNode{sketch::TerminalStep{{}, {}, sketch::Gap{}}});
  const auto sites = sketch::extract_gaps(ast);
  DirectResult out;
  out.gap = cascade(sites.front(), sketch::serialize_prefix(ast, sites.front().path));
  const auto* closed = std::get_if<Closed>(&out.gap);
  if (closed == nullptr) {
    out.reason = "cascade did not close the statement";
    return out;
  }
  const std::string proof = sketch::serialize(sketch::fill_gap(ast, sites.front(), closed->closing_step));
  const Verdict v = verify_unlocked(proof);
  out.valid = v.valid;
  out.reason = v.reason;
  if (v.valid) {
    out.proof_text = proof;
  }
  return out;
}

std::unique_ptr<ProverSession> open_session(const BackendSpec& backend, const ProverConfig& config,
                                            std::string session_id) {
  switch (backend.kind) {
    case BackendSpec::Kind::Scripted: {
      auto script = std::make_shared<const Script>(load_script(backend.location, config.tactic_list));
      return std::make_unique<ProverSession>(
          make_loopback_transport(std::make_shared<ScriptedProver>(std::move(script))), config, std::move(session_id));
    }
    case BackendSpec::Kind::Tcp:
      return std::make_unique<ProverSession>(make_tcp_transport(backend.location), config, std::move(session_id));
    case BackendSpec::Kind::Exec:
      return std::make_unique<ProverSession>(make_exec_transport(backend.location), config, std::move(session_id));
  }
  throw ConfigError("unknown backend kind");
}

}  // namespace dsp::prover
