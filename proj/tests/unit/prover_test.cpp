#include <gtest/gtest.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "dsp/prover.hpp"
#include "dsp/sketch.hpp"
#include "support/test_paths.hpp"

namespace pv = dsp::prover;
namespace sk = dsp::sketch;
using dsp::testing::fixture;
using dsp::testing::read_text;

namespace {

struct Rig {
  std::shared_ptr<pv::ScriptedProver> backend;
  std::unique_ptr<pv::ProverSession> session;
};

Rig rig(const std::string& script_json, pv::ProverConfig cfg = {}) {
  auto script = std::make_shared<const pv::Script>(pv::parse_script(script_json, cfg.tactic_list));
  auto backend = std::make_shared<pv::ScriptedProver>(script);
  auto session = std::make_unique<pv::ProverSession>(pv::make_loopback_transport(backend), cfg, "t");
  return {backend, std::move(session)};
}

sk::GapSite site_for(const std::string& goal) {
  sk::GapSite s;
  s.proposition = goal;
  s.goal = goal;
  return s;
}

std::vector<std::string> tactic_log(const pv::GapResult& r) {
  std::vector<std::string> out;
  for (const auto& a : pv::attempts_of(r)) {
    out.push_back(a.tactic);
  }
  return out;
}

const char* kBasicScript = R"js({
  "schema_version": 1,
  "rules": [
    {"goal": {"exact": "4 * x = 168"}, "outcome": {"close_at_tactic": 0}},
    {"goal": {"substring": "gcd (21*n + 4)"}, "outcome": {"close_by_hammer":
      "by (smt (z3) BitM_plus_one ab_semigroup_add_class.add_ac(1) add.assoc c0 gcd.commute gcd_add2)"}},
    {"goal": {"glob": "x = *"}, "outcome": {"close_at_tactic": "simp"}},
    {"goal": {"exact": "slow"}, "outcome": {"timeout_ms": 10000}}
  ],
  "default": {"outcome": {"fail": "nothing applies"}}
})js";

pv::ProverConfig scaled() {
  pv::ProverConfig cfg;
  cfg.tactic_timeout_ms = 50;
  cfg.hammer_timeout_ms = 600;
  cfg.per_gap_budget_ms = 11 * 50 + 600 + 100;
  cfg.grace_ms = 500;
  return cfg;
}

}  // namespace

TEST(ProverConfig, Defaults) {
  const pv::ProverConfig cfg;
  ASSERT_EQ(cfg.tactic_list.size(), 11U);
  EXPECT_EQ(cfg.tactic_list.front(), "auto");
  EXPECT_EQ(cfg.tactic_list.back(), "auto simp: field_simps");
  EXPECT_EQ(cfg.tactic_timeout_ms, 10000);
  EXPECT_EQ(cfg.hammer_timeout_ms, 120000);
  EXPECT_EQ(cfg.per_gap_budget_ms, 235000);
  EXPECT_EQ(pv::tactic_step("auto"), "by auto");
  EXPECT_EQ(pv::tactic_step("auto simp: field_simps"), "by (auto simp: field_simps)");
  pv::ProverConfig bad;
  bad.tactic_timeout_ms = 0;
  EXPECT_THROW(pv::validate(bad), pv::ConfigError);
}

TEST(Script, RejectsMalformedRules) {
  EXPECT_THROW(pv::parse_script(R"({"schema_version":1,"rules":[]})"), pv::ScriptError);
  EXPECT_THROW(pv::parse_script(R"({"schema_version":1,"default":{"outcome":{"explode":1}}})"), pv::ScriptError);
  EXPECT_THROW(pv::parse_script(R"({"schema_version":1,"default":{"outcome":{"close_at_tactic":11}}})"),
               pv::ScriptError);
  EXPECT_THROW(pv::parse_script(R"({"schema_version":1,"default":{"outcome":{"fail":true}},
      "rules":[{"outcome":{"fail":true}}]})"),
               pv::ScriptError);
  EXPECT_THROW(pv::parse_script(R"({"schema_version":1,"default":{"outcome":{"fail":true}},
      "rules":[{"goal":{"regex":"x"},"outcome":{"fail":true}}]})"),
               pv::ScriptError);
  EXPECT_THROW(pv::parse_script("not json"), pv::ScriptError);
  EXPECT_NO_THROW(pv::parse_script(kBasicScript));
}

TEST(Script, Matchers) {
  pv::Matcher glob{pv::Matcher::Kind::Glob, "a*b?d"};
  EXPECT_TRUE(glob.matches("aXXbcd"));
  EXPECT_TRUE(glob.matches("abcd"));
  EXPECT_FALSE(glob.matches("abd"));
  pv::Matcher exact{pv::Matcher::Kind::Exact, "x = 1"};
  EXPECT_TRUE(exact.matches("  x  =\n1 "));
  EXPECT_FALSE(exact.matches("x = 12"));
  pv::Matcher sub{pv::Matcher::Kind::Substring, "gcd"};
  EXPECT_TRUE(sub.matches("gcd a b = 1"));
}

TEST(Cascade, FirstTacticCloses) {
  auto r = rig(kBasicScript);
  const auto res = r.session->close_gap(site_for("4 * x = 168"), "ctx");
  const auto* c = std::get_if<pv::Closed>(&res);
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->closing_step, "by auto");
  EXPECT_EQ(c->tactic_index, 0U);
  EXPECT_EQ(tactic_log(res), std::vector<std::string>{"auto"});
  EXPECT_EQ(r.session->state(), pv::ProverSession::State::Idle);
}

TEST(Cascade, ShortCircuitsAtSimp) {
  auto r = rig(kBasicScript);
  const auto res = r.session->close_gap(site_for("x = 42"), "ctx");
  ASSERT_TRUE(pv::is_closed(res));
  EXPECT_EQ(std::get<pv::Closed>(res).tactic_index, 1U);
  EXPECT_EQ(tactic_log(res), (std::vector<std::string>{"auto", "simp"}));
}

TEST(Cascade, HammerReconstructionIsTakenVerbatim) {
  auto r = rig(kBasicScript);
  const auto res = r.session->close_gap(site_for("gcd (21*n + 4) (14*n + 3) = 1"), "ctx");
  const auto* c = std::get_if<pv::Closed>(&res);
  ASSERT_NE(c, nullptr);
  EXPECT_FALSE(c->tactic_index.has_value());
  EXPECT_EQ(c->closing_step.rfind("by (smt (z3) BitM_plus_one", 0), 0U);
  EXPECT_EQ(c->attempts.size(), 12U);
  EXPECT_EQ(c->attempts.back().tactic, "sledgehammer");
}

TEST(Cascade, EverythingFails) {
  auto r = rig(kBasicScript);
  const auto res = r.session->close_gap(site_for("False"), "ctx");
  const auto* f = std::get_if<pv::Failed>(&res);
  ASSERT_NE(f, nullptr);
  ASSERT_EQ(f->attempts.size(), 12U);
  auto expected = pv::default_tactics();
  expected.emplace_back("sledgehammer");
  EXPECT_EQ(tactic_log(res), expected);
  EXPECT_EQ(f->attempts.back().reason, "nothing applies");
}

TEST(Cascade, TimeoutsRespectBudget) {
  auto r = rig(kBasicScript, scaled());
  const auto start = std::chrono::steady_clock::now();
  const auto res = r.session->close_gap(site_for("slow"), "ctx");
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(std::holds_alternative<pv::TimedOut>(res));
  EXPECT_EQ(pv::attempts_of(res).size(), 12U);
  for (const auto& a : pv::attempts_of(res)) {
    EXPECT_EQ(a.outcome, pv::Outcome::Timeout);
  }
  EXPECT_LE(ms, scaled().per_gap_budget_ms);
  EXPECT_GE(ms, 11 * 50 + 600 - 20);
}

TEST(Cascade, BudgetCutsTheCascadeShort) {
  auto cfg = scaled();
  cfg.per_gap_budget_ms = 120;
  auto r = rig(kBasicScript, cfg);
  const auto start = std::chrono::steady_clock::now();
  const auto res = r.session->close_gap(site_for("slow"), "ctx");
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(std::holds_alternative<pv::TimedOut>(res));
  EXPECT_LT(pv::attempts_of(res).size(), 12U);
  EXPECT_LE(ms, 120 + 15);
}

namespace {

const char* kSevenGapScript = R"js({
  "schema_version": 1,
  "rules": [
    {"goal": {"exact": "0 \\<le> 28*a^2 - 10*a + 28*((5/28)*(5/28))"}, "outcome": {"FAILSLOT": 0}}
  ],
  "default": {"outcome": {"close_at_tactic": "auto simp: field_simps"}}
})js";

std::string seven_gap_script(bool fail_third) {
  std::string s = kSevenGapScript;
  const std::string slot = "{\"FAILSLOT\": 0}";
  s.replace(s.find(slot), slot.size(), fail_third ? "{\"fail\": \"no\"}" : "{\"close_at_tactic\": 4}");
  return s;
}

}  // namespace

TEST(ProveSketch, SevenGapSketchAllClose) {
  const auto ast = sk::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy")));
  auto r = rig(seven_gap_script(false));
  const auto out = r.session->prove_sketch(ast);
  const auto* full = std::get_if<pv::FullProofResult>(&out);
  ASSERT_NE(full, nullptr);
  ASSERT_EQ(full->per_gap.size(), 7U);
  for (const auto& g : full->per_gap) {
    EXPECT_TRUE(pv::is_closed(g));
  }
  EXPECT_EQ(full->proof_text.find("sledgehammer"), std::string::npos);
  EXPECT_NE(full->proof_text.find("by (auto simp: field_simps)"), std::string::npos);
  EXPECT_NE(full->proof_text.find("by force"), std::string::npos);
  EXPECT_TRUE(full->verdict.valid) << full->verdict.reason;
  EXPECT_EQ(r.backend->verify_calls(), 1U);
}

TEST(ProveSketch, StopsAtFirstFailure) {
  // The fourth gap (c4) is unprovable under this script; gaps are 0-indexed.
  const auto ast = sk::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy")));
  auto r = rig(seven_gap_script(true));
  const auto out = r.session->prove_sketch(ast);
  const auto* fail = std::get_if<pv::SketchFailure>(&out);
  ASSERT_NE(fail, nullptr);
  EXPECT_EQ(fail->failed_site, 3U);
  ASSERT_EQ(fail->partial.size(), 4U);
  EXPECT_TRUE(pv::is_closed(fail->partial[2]));
  EXPECT_TRUE(std::holds_alternative<pv::Failed>(fail->partial[3]));
  EXPECT_EQ(r.backend->verify_calls(), 0U);
}

TEST(ProveSketch, FailingThirdOfSevenKeepsThreeResults) {
  const auto ast = sk::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy")));
  const auto gaps = sk::extract_gaps(ast);
  ASSERT_EQ(gaps.size(), 7U);
  const nlohmann::json script = {
      {"schema_version", 1},
      {"rules", {{{"goal", {{"exact", gaps[2].goal}}}, {"outcome", {{"fail", "no"}}}}}},
      {"default", {{"outcome", {{"close_at_tactic", 0}}}}}};
  auto r = rig(script.dump());
  const auto out = r.session->prove_sketch(ast);
  const auto* fail = std::get_if<pv::SketchFailure>(&out);
  ASSERT_NE(fail, nullptr);
  EXPECT_EQ(fail->failed_site, 2U);
  ASSERT_EQ(fail->partial.size(), 3U);
  EXPECT_TRUE(pv::is_closed(fail->partial[0]));
  EXPECT_TRUE(pv::is_closed(fail->partial[1]));
  EXPECT_TRUE(std::holds_alternative<pv::Failed>(fail->partial[2]));
}

TEST(ProveSketch, GapFreeProofOnlyVerifies) {
  const auto ast = sk::parse_sketch(read_text(fixture("sketches/imo_1959_p1_filled.thy")));
  auto r = rig(kBasicScript);
  const auto out = r.session->prove_sketch(ast);
  const auto* full = std::get_if<pv::FullProofResult>(&out);
  ASSERT_NE(full, nullptr);
  EXPECT_TRUE(full->per_gap.empty());
  EXPECT_TRUE(full->verdict.valid);
}

TEST(Verify, CheatGateNeverConsultsBackend) {
  auto r = rig(kBasicScript);
  const auto v = r.session->verify_full("theorem t: shows \"P\"\nproof -\n  show ?thesis sorry\nqed\n");
  EXPECT_FALSE(v.valid);
  EXPECT_EQ(v.reason, "cheating keyword");
  EXPECT_EQ(r.backend->verify_calls(), 0U);
  const auto ok = r.session->verify_full("theorem t: shows \"P\"\n(* sorry *)\n  by auto\n");
  EXPECT_TRUE(ok.valid);
  EXPECT_EQ(r.backend->verify_calls(), 1U);
}

TEST(Verify, ScriptedRejection) {
  auto r = rig(R"({"schema_version":1,"default":{"outcome":{"fail":true}},
      "verify":[{"proof":{"substring":"by blast"},"reject":"blast step failed"}]})");
  const auto v = r.session->verify_full("theorem t: shows \"P\"\n  by blast\n");
  EXPECT_FALSE(v.valid);
  EXPECT_EQ(v.reason, "blast step failed");
  EXPECT_FALSE(r.session->verify_full("theorem t: shows \"P\"\n  sledgehammer\n").valid);
}

TEST(DirectProve, ValidAndInvalid) {
  auto r = rig(kBasicScript);
  const auto ok = r.session->direct_prove("theorem t: shows \"4 * x = 168\"");
  EXPECT_TRUE(ok.valid);
  EXPECT_EQ(ok.proof_text, "theorem t:\n  shows \"4 * x = 168\"\n  by auto\n");
  const auto bad = r.session->direct_prove("theorem u: shows \"False\"");
  EXPECT_FALSE(bad.valid);
  EXPECT_EQ(pv::attempts_of(bad.gap).size(), 12U);
}

TEST(Sessions, IndependentStateOnSharedScript) {
  auto script = std::make_shared<const pv::Script>(pv::parse_script(kBasicScript));
  auto b1 = std::make_shared<pv::ScriptedProver>(script);
  auto b2 = std::make_shared<pv::ScriptedProver>(script);
  pv::ProverSession s1(pv::make_loopback_transport(b1), {}, "a");
  pv::ProverSession s2(pv::make_loopback_transport(b2), {}, "b");
  EXPECT_TRUE(pv::is_closed(s1.close_gap(site_for("4 * x = 168"), "")));
  EXPECT_FALSE(pv::is_closed(s2.close_gap(site_for("False"), "")));
  EXPECT_TRUE(pv::is_closed(s1.close_gap(site_for("x = 1"), "")));
}

TEST(Sessions, ScriptedBackendFromFile) {
  const auto spec = pv::parse_backend("scripted:" + fixture("scripts/corpus.json").string());
  EXPECT_EQ(spec.kind, pv::BackendSpec::Kind::Scripted);
  auto s = pv::open_session(spec, {});
  EXPECT_EQ(s->state(), pv::ProverSession::State::Idle);
  EXPECT_THROW(pv::open_session(pv::parse_backend("scripted:/nonexistent.json"), {}), pv::ScriptError);
  EXPECT_THROW(pv::parse_backend("isabelle:whatever"), pv::ConfigError);
}

TEST(Transport, ExecBackendSpeaksProtocol) {
  const std::string script = (std::filesystem::temp_directory_path() / "dsp_exec_script.json").string();
  {
    std::ofstream(script) << kBasicScript;
  }
  auto s = pv::open_session(pv::parse_backend(std::string("external:exec:") + SCRIPTED_BACKEND_BIN + " " + script), {});
  const auto res = s->close_gap(site_for("x = 7"), "ctx");
  ASSERT_TRUE(pv::is_closed(res));
  EXPECT_EQ(std::get<pv::Closed>(res).closing_step, "by simp");
  EXPECT_TRUE(s->verify_full("theorem t: shows \"P\"\n  by simp\n").valid);
}

TEST(Transport, ExecBackendThatCannotStart) {
  EXPECT_THROW(pv::open_session(pv::parse_backend("external:exec:/nonexistent/prover"), {}), pv::ConnectError);
}

TEST(Transport, BackendDeathMarksSessionDead) {
  // Answers the init frame, then exits.
  auto cfg = pv::ProverConfig{};
  auto s = pv::open_session(
      pv::parse_backend(R"(external:exec:read l; echo '{"id":1,"status":"ok","state_id":"s1"}')"), cfg);
  EXPECT_THROW(s->close_gap(site_for("x = 1"), ""), pv::SessionDead);
  EXPECT_EQ(s->state(), pv::ProverSession::State::Dead);
  EXPECT_THROW(s->verify_full("theorem t: shows \"P\" by auto"), pv::SessionDead);
}

TEST(Transport, UnresponsiveBackendHitsDeadline) {
  pv::ProverConfig cfg;
  cfg.tactic_timeout_ms = 50;
  cfg.grace_ms = 50;
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(pv::open_session(pv::parse_backend("external:exec:sleep 5"), cfg), pv::ConnectError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(2));
}

TEST(Transport, TcpBackend) {
  EXPECT_THROW(pv::open_session(pv::parse_backend("external:tcp:127.0.0.1:1"), {}), pv::ConnectError);

  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  ASSERT_EQ(::listen(listener, 1), 0);
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  std::thread server([&] {
    const int conn = ::accept(listener, nullptr, nullptr);
    pv::ScriptedProver prover(std::make_shared<const pv::Script>(pv::parse_script(kBasicScript)));
    pv::serve_stream(prover, conn, conn);
    ::close(conn);
  });
  {
    auto s = pv::open_session(pv::parse_backend("external:tcp:127.0.0.1:" + std::to_string(port)), {});
    const auto res = s->close_gap(site_for("4 * x = 168"), "ctx");
    EXPECT_TRUE(pv::is_closed(res));
  }
  server.join();
  ::close(listener);
}
