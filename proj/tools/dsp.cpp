// dsp: command-line driver for the draft / sketch / prove pipeline.
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "dsp/eval.hpp"
#include "dsp/llm.hpp"
#include "dsp/prompting.hpp"
#include "dsp/prover.hpp"
#include "dsp/scheduler.hpp"
#include "dsp/sketch.hpp"

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitInfra = 1;
constexpr int kExitConfig = 2;

// Raised for bad flag combinations the parser cannot catch on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string dataset;
  std::string pool;
  std::string cache;
  std::string cache_mode;  // empty: DSP_CACHE_MODE, then replay
  std::string endpoint;
  std::string endpoint_id = "default";
  std::string auth_env = "DSP_API_KEY";
  std::string model;
  std::size_t max_in_flight = 4;

  std::size_t drafts = 100;
  std::size_t sketches_per_draft = 1;
  std::size_t budget = 100;
  std::string draft_source = "model";
  bool full_run = false;

  std::string mode = "full";
  std::string pipeline = "dsp";
  std::size_t k_examples = 3;
  std::size_t char_budget = 0;

  std::string prover;
  std::int64_t tactic_timeout_ms = 10000;
  std::int64_t hammer_timeout_ms = 120000;
  std::int64_t gap_budget_ms = 235000;

  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

Json effective_config(const Options& o, dsp::llm::CacheMode mode) {
  Json j;
  j["dataset"] = o.dataset;
  j["pool"] = o.pool;
  j["cache"] = o.cache;
  j["cache_mode"] = dsp::llm::to_string(mode);
  j["endpoint"] = o.endpoint;
  j["endpoint_id"] = o.endpoint_id;
  j["auth_env"] = o.auth_env;
  j["model"] = o.model;
  j["drafts"] = o.drafts;
  j["sketches_per_draft"] = o.sketches_per_draft;
  j["budget"] = o.budget;
  j["draft_source"] = o.draft_source;
  j["stop_on_first_success"] = !o.full_run;
  j["mode"] = o.mode;
  j["pipeline"] = o.pipeline;
  j["k_examples"] = o.k_examples;
  j["char_budget"] = o.char_budget;
  j["prover"] = o.prover;
  j["tactic_timeout_ms"] = o.tactic_timeout_ms;
  j["hammer_timeout_ms"] = o.hammer_timeout_ms;
  j["gap_budget_ms"] = o.gap_budget_ms;
  j["seed"] = o.seed;
  j["jobs"] = o.jobs;
  return j;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Everything a pipeline command needs, built lazily from Options.
class Env {
 public:
  explicit Env(const Options& o) : o_(o) {}

  dsp::llm::CacheMode cache_mode() const {
    return o_.cache_mode.empty() ? dsp::llm::cache_mode_from_env(dsp::llm::CacheMode::Replay)
                                 : dsp::llm::parse_cache_mode(o_.cache_mode);
  }

  const std::vector<dsp::Problem>& problems() {
    if (!dataset_) {
      if (o_.dataset.empty()) {
        throw UsageError("--dataset is required");
      }
      dataset_ = dsp::eval::load_dataset(o_.dataset);
      for (const auto& w : dataset_->warnings) {
        std::cerr << "warning: " << w << "\n";
      }
    }
    return dataset_->problems;
  }

  const dsp::Problem& problem(const std::string& id) {
    for (const auto& p : problems()) {
      if (p.id == id) {
        return p;
      }
    }
    throw UsageError("no problem with id " + id + " in " + o_.dataset);
  }

  const dsp::prompting::ExamplePool& pool() {
    if (!pool_) {
      if (o_.pool.empty()) {
        throw UsageError("--pool is required");
      }
      pool_ = dsp::prompting::load_pool(o_.pool);
    }
    return *pool_;
  }

  dsp::llm::LlmClient& client() {
    if (!client_) {
      const auto mode = cache_mode();
      std::shared_ptr<dsp::llm::Endpoint> endpoint;
      if (mode != dsp::llm::CacheMode::Replay || !o_.endpoint.empty()) {
        endpoint = make_endpoint();
      }
      auto cache = o_.cache.empty() ? std::make_shared<dsp::llm::ResponseCache>()
                                    : std::make_shared<dsp::llm::ResponseCache>(o_.cache);
      dsp::llm::ClientOptions opts;
      opts.mode = mode;
      opts.max_in_flight = o_.max_in_flight;
      client_ = std::make_unique<dsp::llm::LlmClient>(endpoint, cache, opts);
    }
    return *client_;
  }

  dsp::prover::ProverConfig prover_config() const {
    dsp::prover::ProverConfig c;
    c.tactic_timeout_ms = o_.tactic_timeout_ms;
    c.hammer_timeout_ms = o_.hammer_timeout_ms;
    c.per_gap_budget_ms = o_.gap_budget_ms;
    dsp::prover::validate(c);
    return c;
  }

  dsp::sched::SessionFactory session_factory() {
    if (o_.prover.empty()) {
      throw UsageError("--prover is required");
    }
    auto spec = dsp::prover::parse_backend(o_.prover);
    auto config = prover_config();
    return [spec, config] { return dsp::prover::open_session(spec, config); };
  }

  dsp::prompting::PromptConfig prompt_config() const {
    dsp::prompting::PromptConfig c;
    c.k_examples = o_.k_examples;
    c.mode = dsp::prompting::parse_mode(o_.mode);
    c.char_budget = o_.char_budget;
    return c;
  }

  dsp::sched::BudgetPolicy policy() const {
    dsp::sched::BudgetPolicy p;
    p.drafts_per_problem = o_.drafts;
    p.sketches_per_draft = o_.sketches_per_draft;
    p.total_budget = o_.budget;
    p.stop_on_first_success = !o_.full_run;
    p.draft_source = dsp::sched::parse_draft_source(o_.draft_source);
    return dsp::sched::normalize(p);
  }

  std::vector<std::string> drafts_for(const dsp::Problem& p, std::size_t n) {
    if (n == 0) {
      return {};
    }
    const auto resp =
        client().complete({dsp::prompting::build_draft_prompt(p, {}), dsp::llm::draft_preset(n), o_.endpoint_id});
    return dsp::llm::dedup(resp.completions);
  }

 private:
  std::shared_ptr<dsp::llm::Endpoint> make_endpoint() {
    if (o_.endpoint.empty()) {
      throw UsageError("--endpoint is required in live and record modes");
    }
    if (o_.endpoint.rfind("canned:", 0) == 0) {
      return std::make_shared<dsp::llm::CannedEndpoint>(o_.endpoint.substr(7), problems());
    }
    if (o_.endpoint.rfind("http://", 0) == 0 || o_.endpoint.rfind("https://", 0) == 0) {
      dsp::llm::HttpEndpointOptions h;
      h.url = o_.endpoint;
      h.auth_env_var = o_.auth_env;
      h.model = o_.model;
      return std::make_shared<dsp::llm::HttpEndpoint>(h);
    }
    throw UsageError("--endpoint must be canned:<file> or an http(s) URL");
  }

  const Options& o_;
  std::optional<dsp::eval::Dataset> dataset_;
  std::optional<dsp::prompting::ExamplePool> pool_;
  std::unique_ptr<dsp::llm::LlmClient> client_;
};

std::vector<const dsp::Problem*> select_problems(Env& env, const std::vector<std::string>& ids) {
  std::vector<const dsp::Problem*> out;
  if (ids.empty()) {
    for (const auto& p : env.problems()) {
      out.push_back(&p);
    }
  } else {
    for (const auto& id : ids) {
      out.push_back(&env.problem(id));
    }
  }
  return out;
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    dsp::eval::write_file(out_path, content);
  }
}

// ---- subcommands ----

int cmd_draft(Env& env, const Options& o, const std::vector<std::string>& ids, std::optional<std::size_t> n) {
  const std::size_t count = n.value_or(o.drafts);
  for (const auto* p : select_problems(env, ids)) {
    const auto drafts = env.drafts_for(*p, count);
    Json j;
    j["problem_id"] = p->id;
    j["requested"] = count;
    Json arr = Json::array();
    for (std::size_t k = 0; k < drafts.size(); ++k) {
      arr.push_back({{"id", p->id + "/d" + std::to_string(k)}, {"text", drafts[k]}});
    }
    j["drafts"] = std::move(arr);
    if (o.out.empty()) {
      std::cout << j.dump() << "\n";
    } else {
      dsp::eval::write_file(fs::path(o.out) / "drafts" / (p->id + ".json"), j.dump(1) + "\n");
    }
    std::cerr << p->id << ": " << drafts.size() << " distinct draft(s)\n";
  }
  return kExitOk;
}

int cmd_sketch(Env& env, const Options& o, const std::string& id, const std::string& draft_id,
               std::size_t sketch_index, bool show_prompt) {
  const auto& p = env.problem(id);
  std::string draft;
  std::size_t draft_index = 0;
  if (draft_id == "human") {
    if (!p.informal_proof) {
      throw UsageError("problem " + id + " has no human informal proof");
    }
    draft = *p.informal_proof;
  } else {
    try {
      draft_index = std::stoul(draft_id);
    } catch (const std::exception&) {
      throw UsageError("--draft must be 'human' or a draft index");
    }
    const auto drafts = env.drafts_for(p, o.drafts);
    if (draft_index >= drafts.size()) {
      throw UsageError("only " + std::to_string(drafts.size()) + " distinct draft(s) for " + id);
    }
    draft = drafts[draft_index];
  }
  const auto config = env.prompt_config();
  const auto seed = dsp::sched::attempt_seed(o.seed, p.id, draft_index, sketch_index);
  std::mt19937_64 rng(seed);
  const auto examples = dsp::prompting::select_examples(env.pool(), p.id, p.category, config, rng);
  const auto prompt = dsp::prompting::build_sketch_prompt(examples, p, draft, config);
  if (show_prompt) {
    std::cout << "=== prompt ===\n" << prompt << "=== end prompt ===\n";
  }
  const auto resp = env.client().complete({prompt, dsp::llm::sketch_preset(), o.endpoint_id});
  const std::string completion = resp.completions.empty() ? std::string() : resp.completions.front();
  std::cout << "=== sketch ===\n" << completion << "\n=== end sketch ===\n";
  try {
    const auto ast = dsp::sketch::parse_with_statement(p.formal_statement, completion);
    std::cout << "parse: ok\n"
              << "gaps: " << dsp::sketch::count_gaps(ast) << "\n"
              << "comments: " << dsp::sketch::count_comments(ast) << "\n";
  } catch (const dsp::sketch::ParseError& e) {
    // Offsets count from the start of the completion, not the statement.
    const auto shift = p.formal_statement.size() + 1;
    const auto off = e.offset() >= shift ? e.offset() - shift : e.offset();
    std::cout << "parse: error at offset " << off << ": " << e.what() << "\n";
  }
  return kExitOk;
}

int cmd_prove(Env& env, const std::string& sketch_file) {
  const auto ast = dsp::sketch::parse_sketch(dsp::eval::read_file(sketch_file));
  auto session = env.session_factory()();
  const auto outcome = session->prove_sketch(ast);
  auto report_gaps = [](const std::vector<dsp::prover::GapResult>& gaps) {
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      const auto& g = gaps[i];
      std::cout << "gap " << i << ": ";
      if (const auto* c = std::get_if<dsp::prover::Closed>(&g)) {
        std::cout << "closed by " << c->closing_step << "\n";
      } else if (std::holds_alternative<dsp::prover::TimedOut>(g)) {
        std::cout << "timed out after " << dsp::prover::attempts_of(g).size() << " attempt(s)\n";
      } else {
        std::cout << "failed after " << dsp::prover::attempts_of(g).size() << " attempt(s)\n";
      }
    }
  };
  if (const auto* f = std::get_if<dsp::prover::SketchFailure>(&outcome)) {
    report_gaps(f->partial);
    std::cout << "result: gap " << f->failed_site << " not closed\n";
    return kExitOk;
  }
  const auto& full = std::get<dsp::prover::FullProofResult>(outcome);
  report_gaps(full.per_gap);
  std::cout << "=== proof ===\n" << full.proof_text << "=== end proof ===\n";
  std::cout << "result: " << (full.verdict.valid ? "valid" : "invalid: " + full.verdict.reason) << "\n";
  return kExitOk;
}

int cmd_run(Env& env, const Options& o) {
  if (o.out.empty()) {
    throw UsageError("--out is required for run");
  }
  const auto started = utc_now();
  dsp::sched::Components components{&env.pool(), &env.client(), env.session_factory()};
  dsp::sched::PipelineConfig pipeline;
  pipeline.mode = dsp::sched::parse_mode(o.pipeline);
  pipeline.prompt = env.prompt_config();
  pipeline.endpoint_id = o.endpoint_id;
  const auto result =
      dsp::sched::run_experiment(env.problems(), env.policy(), o.seed, components, pipeline, o.jobs);

  const auto stream = dsp::eval::records_stream(result.results);
  const fs::path out(o.out);
  dsp::eval::write_file(out / "records.jsonl", stream);

  Json manifest;
  const Json config = effective_config(o, env.cache_mode());
  manifest["config"] = config;
  manifest["config_sha256"] = dsp::llm::sha256_hex(config.dump());
  manifest["records_sha256"] = dsp::llm::sha256_hex(stream);
  Json aborted = Json::array();
  for (const auto& a : result.aborted) {
    aborted.push_back({{"problem_id", a.problem_id}, {"reason", a.reason}});
  }
  manifest["aborted"] = aborted;
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_now();
  manifest["wall_ms"] = dsp::eval::timings(result.results);
  dsp::eval::write_file(out / "manifest.json", manifest.dump(1) + "\n");

  const auto rate = dsp::eval::success_rate(result.results, env.problems(), std::nullopt);
  std::cerr << "solved " << rate.ratio() << " (" << rate.percent() << ")\n";
  for (const auto& a : result.aborted) {
    std::cerr << "error [prove]: " << a.problem_id << " aborted: " << a.reason << "\n";
  }
  return result.aborted.empty() ? kExitOk : kExitInfra;
}

std::vector<dsp::eval::ProblemResult> records_arg(const std::string& path) {
  if (path.empty()) {
    throw UsageError("--records is required");
  }
  return dsp::eval::load_records(path);
}

// Bad input (flags, config, dataset, pool, script, sketch file, records that
// do not cover the request) exits 2;
// everything else is an infrastructure failure and exits 1.
int report(const std::string& stage, const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const std::invalid_argument& e) {  // config, policy and precondition errors
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::eval::SchemaError& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::eval::DuplicateId& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::prompting::PoolError& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::prover::ScriptError& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::sketch::ParseError& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::eval::CoverageError& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsp::eval::MissingResults& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return kExitInfra;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Draft, sketch and prove pipeline for formal theorem proving."};
  app.set_config("--config", "", "INI or TOML file with option defaults");
  app.fallthrough();
  // A repeated flag overrides the earlier one, so wrappers can append.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  Options o;

  app.add_option("--dataset", o.dataset, "Problem dataset (JSON lines)");
  app.add_option("--pool", o.pool, "Few-shot example pool (JSON)");
  app.add_option("--cache", o.cache, "Completion cache file (JSON lines)");
  app.add_option("--cache-mode", o.cache_mode, "live, record or replay (default: $DSP_CACHE_MODE, then replay)")
      ->check(CLI::IsMember({"live", "record", "replay"}));
  app.add_option("--endpoint", o.endpoint, "canned:<file> or an http(s) completion URL");
  app.add_option("--endpoint-id", o.endpoint_id, "Endpoint name mixed into cache keys");
  app.add_option("--auth-env", o.auth_env, "Environment variable holding the bearer token");
  app.add_option("--model", o.model, "Model name forwarded to the endpoint");
  app.add_option("--max-in-flight", o.max_in_flight, "Concurrent endpoint requests")->check(CLI::PositiveNumber);
  app.add_option("--drafts", o.drafts, "Drafts per problem");
  app.add_option("--sketches-per-draft", o.sketches_per_draft, "Sketches per draft");
  app.add_option("--budget", o.budget, "Attempt cap per problem");
  app.add_option("--draft-source", o.draft_source, "human or model")->check(CLI::IsMember({"human", "model"}));
  app.add_flag("--full-run", o.full_run, "Run every planned attempt instead of stopping at the first success");
  app.add_option("--mode", o.mode, "Prompt mode")->check(CLI::IsMember({"full", "no-comments", "no-informal", "full-proof"}));
  app.add_option("--pipeline", o.pipeline, "dsp or direct")->check(CLI::IsMember({"dsp", "direct"}));
  app.add_option("--k-examples", o.k_examples, "Few-shot examples per sketch prompt");
  app.add_option("--char-budget", o.char_budget, "Prompt length cap in characters (0: none)");
  app.add_option("--prover", o.prover, "scripted:<rules.json>, external:tcp:<host:port> or external:exec:<command>");
  app.add_option("--tactic-timeout-ms", o.tactic_timeout_ms);
  app.add_option("--hammer-timeout-ms", o.hammer_timeout_ms);
  app.add_option("--gap-budget-ms", o.gap_budget_ms);
  app.add_option("--seed", o.seed, "Experiment seed");
  app.add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", o.out, "Output directory (or file for eval/curve/grid)");

  auto* draft = app.add_subcommand("draft", "Sample informal drafts");
  std::vector<std::string> draft_ids;
  std::optional<std::size_t> draft_n;
  draft->add_option("--problem", draft_ids, "Problem id (repeatable; default all)");
  draft->add_option("-n", draft_n, "Samples per problem (default --drafts)");

  auto* sketch = app.add_subcommand("sketch", "Produce and parse one formal sketch");
  std::string sketch_problem;
  std::string sketch_draft = "0";
  std::size_t sketch_index = 0;
  bool show_prompt = false;
  sketch->add_option("--problem", sketch_problem)->required();
  sketch->add_option("--draft", sketch_draft, "'human' or a draft index");
  sketch->add_option("--sketch-index", sketch_index, "Selects the prompt seed");
  sketch->add_flag("--show-prompt", show_prompt, "Print the prompt before the sketch");

  auto* prove = app.add_subcommand("prove", "Close the gaps of a sketch file and verify the result");
  std::string sketch_file;
  prove->add_option("sketch", sketch_file)->required()->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Run the full pipeline over a dataset");

  std::string records;
  std::size_t max_attempts = 100;
  auto* eval = app.add_subcommand("eval", "Success-rate table from a records stream");
  eval->add_option("--records", records);
  auto* curve = app.add_subcommand("curve", "Cumulative success curve from a records stream");
  curve->add_option("--records", records);
  curve->add_option("--max-attempts", max_attempts);
  auto* grid = app.add_subcommand("grid", "Budget grid from a full-run records stream");
  std::vector<std::size_t> draft_counts;
  std::vector<std::size_t> sketch_counts;
  std::size_t cap = 100;
  grid->add_option("--records", records);
  grid->add_option("--draft-counts", draft_counts)->required()->delimiter(',');
  grid->add_option("--sketch-counts", sketch_counts)->required()->delimiter(',');
  grid->add_option("--cap", cap);

  auto* serve = app.add_subcommand("serve-script", "Serve scripted prover rules over the wire protocol");
  std::string serve_script;
  serve->add_option("script", serve_script)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::string stage = "config";
  try {
    Env env(o);
    if (*draft) {
      stage = "draft";
      return cmd_draft(env, o, draft_ids, draft_n);
    }
    if (*sketch) {
      stage = "sketch";
      return cmd_sketch(env, o, sketch_problem, sketch_draft, sketch_index, show_prompt);
    }
    if (*prove) {
      stage = "prove";
      return cmd_prove(env, sketch_file);
    }
    if (*run) {
      stage = "run";
      return cmd_run(env, o);
    }
    if (*eval) {
      stage = "eval";
      const auto results = records_arg(records);
      emit(o.out, dsp::eval::table_csv(results, env.problems()));
      return kExitOk;
    }
    if (*curve) {
      stage = "curve";
      emit(o.out, dsp::eval::curve_csv(dsp::eval::cumulative_curve(records_arg(records), max_attempts)));
      return kExitOk;
    }
    if (*grid) {
      stage = "grid";
      emit(o.out, dsp::eval::grid_csv(dsp::eval::budget_grid(records_arg(records), draft_counts, sketch_counts, cap)));
      return kExitOk;
    }
    if (*serve) {
      stage = "serve";
      dsp::prover::ScriptedProver prover(
          std::make_shared<const dsp::prover::Script>(dsp::prover::load_script(serve_script)));
      dsp::prover::serve_stream(prover, STDIN_FILENO, STDOUT_FILENO);
      return kExitOk;
    }
  } catch (...) {
    return report(stage, std::current_exception());
  }
  return kExitConfig;
}
