// Black-box tests of the dsp executable: output files and exit codes.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "dsp/sketch.hpp"
#include "support/test_paths.hpp"

using dsp::testing::fixture;
using dsp::testing::read_text;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + DSP_CLI_BIN + " " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    return r;
  }
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) {
    r.out.append(buf, n);
  }
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string corpus_flags() {
  return "--dataset " + fixture("corpus/problems.jsonl").string() + " --pool " + fixture("pool/pool.json").string() +
         " --cache " + fixture("corpus/cache.jsonl").string() + " --prover scripted:" +
         fixture("scripts/corpus.json").string() +
         " --cache-mode replay --drafts 4 --sketches-per-draft 2 --budget 8 --seed 2022";
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dsp_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A one-problem dataset whose canned sketch is the seven-gap sketch body.
fs::path seven_gap_setup(const std::string& completion) {
  const auto dir = scratch("seven_gap");
  const auto ast = dsp::sketch::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy")));
  nlohmann::json problem = {{"id", *ast.header.name},
                            {"split", "test"},
                            {"category", "algebra"},
                            {"informal_statement", "Show that for any real a, 10a <= 28a^2 + 1."},
                            {"informal_proof", "It suffices to show 0 <= 28a^2 - 10a + 1."},
                            {"formal_statement", dsp::sketch::serialize_header(ast.header)}};
  std::ofstream(dir / "problems.jsonl") << "{\"schema_version\":1}\n" << problem.dump() << "\n";
  nlohmann::json canned = {{"drafts", {{*ast.header.name, {"draft"}}}},
                           {"sketches", {{*ast.header.name, {completion}}}}};
  std::ofstream(dir / "canned.json") << canned.dump();
  return dir;
}

std::string seven_gap_name() {
  return *dsp::sketch::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy"))).header.name;
}

std::string seven_gap_flags(const fs::path& dir) {
  return "--dataset " + (dir / "problems.jsonl").string() + " --pool " + fixture("pool/pool.json").string() +
         " --cache-mode live --endpoint canned:" + (dir / "canned.json").string();
}

}  // namespace

TEST(Cli, RunMatchesGoldenAndWritesManifest) {
  const auto out = scratch("run");
  const auto r = run(corpus_flags() + " run --jobs 4 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(read_text(out / "records.jsonl"), read_text(fixture("corpus/golden_records.jsonl")));
  const auto manifest = nlohmann::json::parse(read_text(out / "manifest.json"));
  EXPECT_EQ(manifest["config"]["drafts"], 4);
  EXPECT_EQ(manifest["config"]["jobs"], 4);
  EXPECT_EQ(manifest["wall_ms"].size(), 20U);
  EXPECT_TRUE(manifest.contains("started_at"));
  EXPECT_NE(r.out.find("solved 12/20"), std::string::npos);
}

TEST(Cli, ConfigFileLayering) {
  const auto dir = scratch("config");
  std::ofstream(dir / "dsp.ini") << "drafts=1\nsketches-per-draft=2\nbudget=8\nseed=5\n";
  const auto out = dir / "out";
  const auto r = run(corpus_flags() + " --config " + (dir / "dsp.ini").string() + " --seed 2022 run --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto config = nlohmann::json::parse(read_text(out / "manifest.json"))["config"];
  // Flags on the command line win over the file, including ones that
  // appear before --config.
  EXPECT_EQ(config["drafts"], 4);
  EXPECT_EQ(config["seed"], 2022);
  const auto base = run("--dataset " + fixture("corpus/problems.jsonl").string() + " --pool " +
                        fixture("pool/pool.json").string() + " --cache " + fixture("corpus/cache.jsonl").string() +
                        " --prover scripted:" + fixture("scripts/corpus.json").string() + " --config " +
                        (dir / "dsp.ini").string() + " --cache-mode replay run --out " + (dir / "out2").string());
  // Seed 5 was never recorded: every attempt misses the cache and is marked infra.
  ASSERT_EQ(base.code, 0) << base.out;
  EXPECT_NE(read_text(dir / "out2" / "records.jsonl").find("\"failure_stage\":\"infra\""), std::string::npos);
  const auto file_config = nlohmann::json::parse(read_text(dir / "out2" / "manifest.json"))["config"];
  EXPECT_EQ(file_config["drafts"], 1);
  EXPECT_EQ(file_config["seed"], 5);
}

TEST(Cli, EvalCurveGrid) {
  const auto golden = fixture("corpus/golden_records.jsonl").string();
  auto r = run(corpus_flags() + " eval --records " + golden);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all,12,20,12/20,60.0%"), std::string::npos);
  r = run("curve --records " + golden + " --max-attempts 100");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 101);
  EXPECT_NE(r.out.find("\n100,12\n"), std::string::npos);
  r = run("grid --records " + fixture("corpus/golden_full_records.jsonl").string() +
          " --draft-counts 1,4 --sketch-counts 1,2 --cap 8");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("4,2,12\n"), std::string::npos);
  r = run("grid --records " + golden + " --draft-counts 4 --sketch-counts 2");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error [grid]"), std::string::npos);
}

TEST(Cli, SketchReportsGaps) {
  const auto ast = dsp::sketch::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy")));
  const auto dir = seven_gap_setup(dsp::sketch::serialize_body(ast));
  const auto r = run(seven_gap_flags(dir) + " sketch --problem " + *ast.header.name + " --draft human");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("parse: ok\ngaps: 7\n"), std::string::npos) << r.out;
}

TEST(Cli, SketchReportsParseErrors) {
  const std::string completion = "proof -\n  have c0: \"x = 1\"\n    sledgehammer\n  qux\nqed";
  const auto dir = seven_gap_setup(completion);
  const auto r = run(seven_gap_flags(dir) + " sketch --problem " + seven_gap_name() + " --draft human");
  EXPECT_EQ(r.code, 0) << r.out;
  const auto where = "parse: error at offset " + std::to_string(completion.find("qux"));
  EXPECT_NE(r.out.find(where), std::string::npos) << r.out;
}

TEST(Cli, NoCommentsPromptPreview) {
  const auto ast = dsp::sketch::parse_sketch(read_text(fixture("sketches/binomnegdiscrineq_sketch.thy")));
  const auto dir = seven_gap_setup(dsp::sketch::serialize_body(ast));
  const auto r = run(seven_gap_flags(dir) + " --mode no-comments sketch --problem " + seven_gap_name() + " --draft 0 --show-prompt");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto prompt = r.out.substr(0, r.out.find("=== end prompt ==="));
  EXPECT_EQ(prompt.find("(*"), std::string::npos);
  EXPECT_NE(prompt.find("Formal Proof Sketch:"), std::string::npos);
}

TEST(Cli, DraftCommand) {
  const auto out = scratch("draft");
  auto r = run(corpus_flags() + " draft --problem mini_algebra_amgm_sq --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(read_text(out / "drafts" / "mini_algebra_amgm_sq.json"));
  ASSERT_EQ(j["drafts"].size(), 3U);
  EXPECT_EQ(j["drafts"][2]["id"], "mini_algebra_amgm_sq/d2");
  const auto again = scratch("draft2");
  r = run(corpus_flags() + " draft --problem mini_algebra_amgm_sq --out " + again.string());
  EXPECT_EQ(read_text(again / "drafts" / "mini_algebra_amgm_sq.json"),
            read_text(out / "drafts" / "mini_algebra_amgm_sq.json"));
  r = run(corpus_flags() + " draft -n 0 --problem mini_algebra_amgm_sq");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("\"drafts\":[]"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("--no-such-flag run").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run(corpus_flags() + " --drafts 9 run --out /tmp/x").code, 2);  // 9 x 2 > 8
  EXPECT_EQ(run(corpus_flags() + " --mode nonsense run --out /tmp/x").code, 2);
  // Live mode without credentials.
  auto r = run(corpus_flags() + " --cache-mode live --endpoint http://127.0.0.1:9/v1/completions"
                                " --auth-env DSP_CLI_TEST_UNSET draft --problem mini_algebra_ratio",
               "env -u DSP_CLI_TEST_UNSET");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("error [draft]"), std::string::npos);
  // Replay with a seed that was never recorded is an infrastructure failure.
  r = run(corpus_flags() + " --seed 1 draft --problem mini_algebra_ratio -n 5");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_EQ(run(corpus_flags() + " --prover scripted:/nonexistent.json run --out /tmp/x").code, 2);
}

TEST(Cli, ProveCommand) {
  const auto dir = scratch("prove");
  const std::string head = "theorem t:\n  fixes x :: real\n  assumes h0: \"2 * x + 3 = 11\"\n  shows \"x = 4\"\nproof -\n";
  std::ofstream(dir / "good.thy") << head << "  have c0: \"2 * x = 8\" using h0\n    sledgehammer\n"
                                  << "  show ?thesis using c0\n    sledgehammer\nqed\n";
  std::ofstream(dir / "bad.thy") << head << "  have c0: \"2 * x = 14\" using h0\n    sledgehammer\n"
                                 << "  show ?thesis using c0\n    sledgehammer\nqed\n";
  const std::string flags = "--prover scripted:" + fixture("scripts/corpus.json").string() + " prove ";
  auto r = run(flags + (dir / "good.thy").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("gap 1: closed by"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("result: valid"), std::string::npos) << r.out;
  r = run(flags + (dir / "bad.thy").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("gap 0: failed after 12 attempt(s)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("result: gap 0 not closed"), std::string::npos) << r.out;
  EXPECT_EQ(run(flags + "/nonexistent.thy").code, 2);
}

TEST(Cli, ServeScriptSpeaksProtocol) {
  const auto dir = scratch("serve");
  std::ofstream(dir / "in.jsonl") << R"({"id":1,"cmd":"init","theory":"Main","statement":"x","goal":"2 * x = 8"})" "\n"
                                  << R"({"id":2,"cmd":"hammer","timeout_ms":1000})" "\n"
                                  << R"({"id":3,"cmd":"quit"})" "\n";
  const auto r = run("serve-script " + fixture("scripts/corpus.json").string() + " < " + (dir / "in.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("\"id\":2"), std::string::npos) << r.out;
}
