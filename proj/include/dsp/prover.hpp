#pragma once

// Gap closing against an external proof checker: the tactic cascade, the
// line-delimited JSON wire protocol, and a rule-driven scripted backend.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dsp/sketch.hpp"

namespace dsp::prover {

using Json = nlohmann::json;

/// auto, simp, blast, fastforce, force, eval, presburger, sos, arith,
/// linarith, "auto simp: field_simps".
std::vector<std::string> default_tactics();

struct ProverConfig {
  std::vector<std::string> tactic_list = default_tactics();
  std::int64_t tactic_timeout_ms = 10000;
  std::int64_t hammer_timeout_ms = 120000;
  std::int64_t per_gap_budget_ms = 11 * 10000 + 120000 + 5000;
  std::string theory = "Main";
  /// Extra time a transport waits beyond a command's own timeout before
  /// declaring the backend unresponsive.
  std::int64_t grace_ms = 5000;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void validate(const ProverConfig& config);

/// Renders a cascade entry as a closing step: "by auto", "by (auto simp: field_simps)".
std::string tactic_step(std::string_view tactic);

inline constexpr std::string_view kHammerName = "sledgehammer";

enum class Outcome { Success, Fail, Timeout };
std::string_view to_string(Outcome o);

struct Attempt {
  std::string tactic;  // cascade entry, or kHammerName
  Outcome outcome = Outcome::Fail;
  std::int64_t elapsed_ms = 0;
  std::string reason;
  bool operator==(const Attempt&) const = default;
};

struct Closed {
  std::string closing_step;
  std::optional<std::size_t> tactic_index;  // absent when the hammer closed it
  std::int64_t elapsed_ms = 0;
  std::vector<Attempt> attempts;
};

struct Failed {
  std::vector<Attempt> attempts;
  std::int64_t elapsed_ms = 0;
};

/// The per-gap budget ran out, or the hammer itself timed out.
struct TimedOut {
  std::vector<Attempt> attempts;
  std::int64_t elapsed_ms = 0;
};

using GapResult = std::variant<Closed, Failed, TimedOut>;

const std::vector<Attempt>& attempts_of(const GapResult& r);
inline bool is_closed(const GapResult& r) { return std::holds_alternative<Closed>(r); }

struct Verdict {
  bool valid = false;
  std::string reason;  // empty when valid
};

struct FullProofResult {
  std::string proof_text;
  std::vector<GapResult> per_gap;
  Verdict verdict;
};

struct SketchFailure {
  std::size_t failed_site = 0;  // index into the sketch's gap list
  std::vector<GapResult> partial;
};

using ProveOutcome = std::variant<FullProofResult, SketchFailure>;

struct DirectResult {
  bool valid = false;
  std::string proof_text;  // set when valid
  GapResult gap;
  std::string reason;
};

class ConnectError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The backend process or connection is gone, or it stopped answering within
/// the command deadline. The session is unusable afterwards.
class SessionDead : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScriptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SessionBusy : public std::logic_error {
 public:
  SessionBusy() : std::logic_error("prover session already has a command in flight") {}
};

/// One request/response exchange per call. Implementations throw SessionDead
/// when the peer is lost or `deadline_ms` elapses.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Json roundtrip(const Json& frame, std::int64_t deadline_ms) = 0;
};

/// Anything that answers protocol frames; the scripted backend implements
/// this and can be served in-process or over a byte stream.
class FrameHandler {
 public:
  virtual ~FrameHandler() = default;
  virtual Json handle(const Json& frame) = 0;
};

/// Reads newline-delimited frames from `in_fd`, answers on `out_fd`, until
/// EOF or a quit command.
void serve_stream(FrameHandler& handler, int in_fd, int out_fd);

// ---------------------------------------------------------------------------
// Scripted backend

struct Matcher {
  enum class Kind { Exact, Substring, Glob };
  Kind kind = Kind::Substring;
  std::string pattern;
  /// Whitespace runs are collapsed on both sides before comparing.
  [[nodiscard]] bool matches(std::string_view text) const;
};

struct ScriptOutcome {
  enum class Kind { CloseAtTactic, CloseByHammer, Fail, Timeout };
  Kind kind = Kind::Fail;
  std::string tactic;       // CloseAtTactic
  std::string step;         // CloseByHammer
  std::string reason;       // Fail
  std::int64_t duration_ms = 0;  // Timeout
};

struct ScriptRule {
  std::optional<Matcher> goal;
  std::optional<Matcher> context;
  ScriptOutcome outcome;
  std::int64_t latency_ms = 0;
};

struct VerifyRule {
  Matcher proof;
  std::string reason;
};

struct Script {
  std::vector<ScriptRule> rules;
  ScriptRule fallback;
  std::vector<VerifyRule> verify;

  [[nodiscard]] const ScriptRule& rule_for(std::string_view goal, std::string_view context) const;
};

/// Parses a rule file. Integer close_at_tactic values index `tactics`.
Script parse_script(std::string_view json_text, const std::vector<std::string>& tactics = default_tactics());
Script load_script(const std::filesystem::path& path, const std::vector<std::string>& tactics = default_tactics());

/// Protocol state machine driven by a Script. Sleeps to simulate latency and
/// timeouts so wall-clock budgets can be exercised.
class ScriptedProver : public FrameHandler {
 public:
  explicit ScriptedProver(std::shared_ptr<const Script> script);
  Json handle(const Json& frame) override;

  /// Number of whole-proof checks received; lets tests assert that the cheat
  /// gate never reached the backend.
  [[nodiscard]] std::size_t verify_calls() const { return verify_calls_.load(); }

 private:
  Json step(const Json& frame);
  Json hammer(const Json& frame);
  Json answer_after(std::int64_t work_ms, std::int64_t timeout_ms, Json ok_or_fail, std::int64_t id);

  std::shared_ptr<const Script> script_;
  const ScriptRule* active_ = nullptr;
  bool in_goal_ = false;
  bool closed_ = false;
  std::uint64_t next_state_ = 1;
  std::atomic<std::size_t> verify_calls_{0};
};

// ---------------------------------------------------------------------------
// Sessions

struct BackendSpec {
  enum class Kind { Scripted, Tcp, Exec };
  Kind kind = Kind::Scripted;
  std::string location;  // script path, host:port, or shell command
};

/// "scripted:<path>", "external:tcp:<host>:<port>", "external:exec:<command>".
BackendSpec parse_backend(std::string_view text);

class ProverSession {
 public:
  enum class State { Idle, Busy, Dead };

  /// Sends the initial theory frame. Throws ConnectError if the backend
  /// refuses it.
  ProverSession(std::unique_ptr<Transport> transport, ProverConfig config, std::string session_id);
  ~ProverSession();
  ProverSession(const ProverSession&) = delete;
  ProverSession& operator=(const ProverSession&) = delete;

  [[nodiscard]] State state() const { return state_.load(); }
  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] const ProverConfig& config() const { return config_; }

  /// Runs the cascade on one gap; `context` is the sketch text up to the
  /// gap's step head.
  GapResult close_gap(const sketch::GapSite& site, std::string_view context);

  /// Closes gaps in document order, substituting each closure before the
  /// next; stops at the first gap that does not close. On success the
  /// filled proof is checked with verify_full.
  ProveOutcome prove_sketch(const sketch::SketchAst& ast);

  /// Whole-proof check. Cheating keywords are rejected without consulting
  /// the backend.
  Verdict verify_full(std::string_view proof_text);

  /// Treats the statement itself as the only gap.
  DirectResult direct_prove(std::string_view formal_statement);

 private:
  class Guard;
  Json command(Json frame, std::int64_t timeout_ms);
  GapResult cascade(const sketch::GapSite& site, std::string_view context);
  Verdict verify_unlocked(std::string_view proof_text);

  std::unique_ptr<Transport> transport_;
  ProverConfig config_;
  std::string id_;
  std::atomic<State> state_{State::Idle};
  std::uint64_t next_id_ = 1;
};

/// Opens a session on the given backend. Scripted sessions share the parsed
/// script but keep independent protocol state.
std::unique_ptr<ProverSession> open_session(const BackendSpec& backend, const ProverConfig& config,
                                            std::string session_id = "s0");

/// In-process transport over any handler; frames are serialized to text and
/// back so the wire format is exercised.
std::unique_ptr<Transport> make_loopback_transport(std::shared_ptr<FrameHandler> handler);
std::unique_ptr<Transport> make_exec_transport(const std::string& command);
std::unique_ptr<Transport> make_tcp_transport(const std::string& host_port);

}  // namespace dsp::prover
