#include <atomic>
#include <chrono>
#include <mutex>
#include <random>
#include <thread>
#include <type_traits>

#include "dsp/scheduler.hpp"
#include "dsp/sketch.hpp"

namespace dsp::sched {

using eval::AttemptRecord;
using eval::FailureStage;

std::string_view to_string(DraftSource s) { return s == DraftSource::Human ? "human" : "model"; }

DraftSource parse_draft_source(std::string_view s) {
  if (s == "human") {
    return DraftSource::Human;
  }
  if (s == "model") {
    return DraftSource::Model;
  }
  throw PolicyError("unknown draft source: " + std::string(s));
}

std::string_view to_string(Mode m) { return m == Mode::Dsp ? "dsp" : "direct"; }

Mode parse_mode(std::string_view s) {
  if (s == "dsp") {
    return Mode::Dsp;
  }
  if (s == "direct") {
    return Mode::DirectProve;
  }
  throw PolicyError("unknown pipeline mode: " + std::string(s));
}

BudgetPolicy normalize(BudgetPolicy policy) {
  if (policy.draft_source == DraftSource::Human) {
    policy.drafts_per_problem = 1;
  }
  return policy;
}

void validate(const BudgetPolicy& policy) {
  if (policy.drafts_per_problem == 0 || policy.sketches_per_draft == 0 || policy.total_budget == 0) {
    throw PolicyError("drafts, sketches per draft and total budget must all be positive");
  }
  // Division avoids overflow on absurd inputs.
  if (policy.drafts_per_problem > policy.total_budget / policy.sketches_per_draft) {
    throw BudgetExceeded(std::to_string(policy.drafts_per_problem) + " drafts x " +
                         std::to_string(policy.sketches_per_draft) + " sketches exceeds the budget of " +
                         std::to_string(policy.total_budget));
  }
}

std::uint64_t attempt_seed(std::uint64_t experiment_seed, std::string_view problem_id, std::size_t draft_index,
                           std::size_t sketch_index) {
  std::string canon = "dsp-attempt-v1;";
  auto field = [&](std::string_view v) {
    canon += std::to_string(v.size());
    canon += ':';
    canon += v;
    canon += ';';
  };
  field(std::to_string(experiment_seed));
  field(problem_id);
  field(std::to_string(draft_index));
  field(std::to_string(sketch_index));
  const std::string hex = llm::sha256_hex(canon);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

AttemptPlan make_plan(const BudgetPolicy& raw, std::uint64_t experiment_seed, std::string_view problem_id) {
  const BudgetPolicy policy = normalize(raw);
  validate(policy);
  AttemptPlan plan;
  plan.entries.reserve(policy.drafts_per_problem * policy.sketches_per_draft);
  for (std::size_t d = 0; d < policy.drafts_per_problem; ++d) {
    for (std::size_t s = 0; s < policy.sketches_per_draft; ++s) {
      plan.entries.push_back({d, s, attempt_seed(experiment_seed, problem_id, d, s)});
    }
  }
  return plan;
}

namespace {

using Clock = std::chrono::steady_clock;

bool is_infra(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const llm::CacheMiss&) {
    return true;
  } catch (const llm::EndpointError&) {
    return true;
  } catch (const llm::Timeout&) {
    return true;
  } catch (...) {
    return false;
  }
}

std::size_t closed_count(const std::vector<prover::GapResult>& results) {
  std::size_t n = 0;
  for (const auto& r : results) {
    n += prover::is_closed(r) ? 1 : 0;
  }
  return n;
}

class ProblemRunner {
 public:
  ProblemRunner(const Problem& problem, const Components& components, const PipelineConfig& config,
                std::unique_ptr<prover::ProverSession>& session)
      : problem_(problem), components_(components), config_(config), session_(session) {}

  eval::ProblemResult run(const BudgetPolicy& raw_policy, std::uint64_t seed) {
    const BudgetPolicy policy = normalize(raw_policy);
    if (config_.mode == Mode::DirectProve) {
      return direct(seed);
    }
    if (policy.draft_source == DraftSource::Human && !problem_.informal_proof) {
      throw PreconditionError("problem " + problem_.id + " has no human informal proof");
    }
    const AttemptPlan plan = make_plan(policy, seed, problem_.id);
    load_drafts(policy);

    std::vector<AttemptRecord> records;
    records.reserve(plan.entries.size());
    bool stopped = false;
    for (std::size_t i = 0; i < plan.entries.size(); ++i) {
      const auto& e = plan.entries[i];
      AttemptRecord r = blank(e);
      if (stopped) {
        r.failure_stage = FailureStage::NotRun;
        records.push_back(std::move(r));
        continue;
      }
      try {
        attempt(e, r);
      } catch (const prover::SessionDead& dead) {
        r.failure_stage = FailureStage::Infra;
        records.push_back(r);
        for (std::size_t j = i + 1; j < plan.entries.size(); ++j) {
          AttemptRecord rest = blank(plan.entries[j]);
          rest.failure_stage = FailureStage::Infra;
          records.push_back(std::move(rest));
        }
        throw ProblemAborted(dead.what(), eval::summarize(problem_.id, std::move(records)));
      }
      stopped = r.success && policy.stop_on_first_success;
      records.push_back(std::move(r));
    }
    return eval::summarize(problem_.id, std::move(records));
  }

 private:
  AttemptRecord blank(const PlanEntry& e) const {
    AttemptRecord r;
    r.problem_id = problem_.id;
    r.draft_index = e.draft_index;
    r.sketch_index = e.sketch_index;
    r.prompt_seed = e.prompt_seed;
    return r;
  }

  void load_drafts(const BudgetPolicy& policy) {
    if (policy.draft_source == DraftSource::Human) {
      drafts_ = {*problem_.informal_proof};
      return;
    }
    if (config_.prompt.mode == prompting::PromptMode::NoInformalProof) {
      // The draft never reaches the prompt, so none is sampled.
      drafts_.assign(policy.drafts_per_problem, std::string());
      return;
    }
    try {
      const auto resp = components_.client->complete(
          {prompting::build_draft_prompt(problem_, config_.draft_examples),
           llm::draft_preset(policy.drafts_per_problem), config_.endpoint_id});
      drafts_ = llm::dedup(resp.completions);
    } catch (...) {
      if (!is_infra(std::current_exception())) {
        throw;
      }
      draft_infra_ = true;
    }
  }

  // Fills `r` in place so a SessionDead escaping mid-attempt leaves the
  // stages reached so far on record.
  void attempt(const PlanEntry& e, AttemptRecord& r) {
    const auto start = Clock::now();
    struct Stamp {
      AttemptRecord& r;
      Clock::time_point start;
      ~Stamp() { r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count(); }
    } stamp{r, start};

    if (draft_infra_) {
      r.failure_stage = FailureStage::Infra;
      return;
    }
    if (e.draft_index >= drafts_.size()) {
      r.failure_stage = FailureStage::Draft;  // dedup shortfall
      return;
    }

    std::string prompt;
    try {
      std::mt19937_64 rng(e.prompt_seed);
      const auto examples = prompting::select_examples(*components_.pool, problem_.id, problem_.category,
                                                       config_.prompt, rng);
      prompt = prompting::build_sketch_prompt(examples, problem_, drafts_[e.draft_index], config_.prompt);
    } catch (const prompting::PoolTooSmall&) {
      r.failure_stage = FailureStage::PromptBuild;
      return;
    } catch (const prompting::PromptTooLong&) {
      r.failure_stage = FailureStage::PromptBuild;
      return;
    } catch (const prompting::MissingFullProof&) {
      r.failure_stage = FailureStage::PromptBuild;
      return;
    }

    std::string completion;
    try {
      const auto resp = components_.client->complete({prompt, llm::sketch_preset(), config_.endpoint_id});
      if (!resp.completions.empty()) {
        completion = resp.completions.front();
      }
    } catch (...) {
      if (!is_infra(std::current_exception())) {
        throw;
      }
      r.failure_stage = FailureStage::Infra;
      return;
    }

    sketch::SketchAst ast;
    try {
      ast = sketch::parse_with_statement(problem_.formal_statement, completion);
    } catch (const sketch::ParseError&) {
      r.failure_stage = FailureStage::Parse;
      return;
    }
    if (!sketch::has_proof(ast)) {
      r.failure_stage = FailureStage::Parse;  // statement only, no proof
      return;
    }
    r.parse_ok = true;
    r.gaps_total = sketch::count_gaps(ast);

    const auto outcome = with_session([&](prover::ProverSession& s) { return s.prove_sketch(ast); });
    if (const auto* fail = std::get_if<prover::SketchFailure>(&outcome)) {
      r.gaps_closed = closed_count(fail->partial);
      r.failure_stage = FailureStage::Prove;
      return;
    }
    const auto& full = std::get<prover::FullProofResult>(outcome);
    r.gaps_closed = closed_count(full.per_gap);
    if (full.verdict.valid && r.gaps_closed == r.gaps_total) {
      r.success = true;
    } else {
      r.failure_stage = FailureStage::Verify;
    }
  }

  eval::ProblemResult direct(std::uint64_t seed) {
    AttemptRecord r = blank({0, 0, attempt_seed(seed, problem_.id, 0, 0)});
    r.parse_ok = true;
    r.gaps_total = 1;
    const auto start = Clock::now();
    try {
      const auto res = with_session([&](prover::ProverSession& s) { return s.direct_prove(problem_.formal_statement); });
      r.gaps_closed = prover::is_closed(res.gap) ? 1 : 0;
      if (res.valid && r.gaps_closed == 1) {
        r.success = true;
      } else {
        r.failure_stage = r.gaps_closed == 1 ? FailureStage::Verify : FailureStage::Prove;
      }
    } catch (const sketch::ParseError&) {
      r.parse_ok = false;
      r.gaps_total = 0;
      r.failure_stage = FailureStage::Parse;
    } catch (const prover::SessionDead& dead) {
      r.failure_stage = FailureStage::Infra;
      throw ProblemAborted(dead.what(), eval::summarize(problem_.id, {r}));
    }
    r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
    return eval::summarize(problem_.id, {r});
  }

  template <typename Fn>
  std::invoke_result_t<Fn, prover::ProverSession&> with_session(Fn&& fn) {
    for (int reopened = 0;; ++reopened) {
      try {
        if (!session_ || session_->state() == prover::ProverSession::State::Dead) {
          session_.reset();
          session_ = components_.open_session();
        }
        return fn(*session_);
      } catch (const prover::SessionDead&) {
        session_.reset();
        if (reopened >= config_.session_reopens) {
          throw;
        }
      } catch (const prover::ConnectError& e) {
        session_.reset();
        if (reopened >= config_.session_reopens) {
          throw prover::SessionDead(std::string("cannot reopen prover session: ") + e.what());
        }
      }
    }
  }

  const Problem& problem_;
  const Components& components_;
  const PipelineConfig& config_;
  std::unique_ptr<prover::ProverSession>& session_;
  std::vector<std::string> drafts_;
  bool draft_infra_ = false;
};

}  // namespace

eval::ProblemResult run_problem(const Problem& problem, const BudgetPolicy& policy, std::uint64_t experiment_seed,
                                const Components& components, const PipelineConfig& config,
                                std::unique_ptr<prover::ProverSession>& session) {
  if (components.client == nullptr || components.pool == nullptr || !components.open_session) {
    throw PreconditionError("pipeline components are incomplete");
  }
  return ProblemRunner(problem, components, config, session).run(policy, experiment_seed);
}

ExperimentResult run_experiment(const std::vector<Problem>& problems, const BudgetPolicy& policy,
                                std::uint64_t experiment_seed, const Components& components,
                                const PipelineConfig& config, std::size_t parallelism) {
  if (parallelism == 0) {
    throw PolicyError("parallelism must be at least 1");
  }
  if (config.mode == Mode::Dsp) {
    validate(normalize(policy));
    if (normalize(policy).draft_source == DraftSource::Human) {
      for (const auto& p : problems) {
        if (!p.informal_proof) {
          throw PreconditionError("problem " + p.id + " has no human informal proof");
        }
      }
    }
  }

  std::vector<eval::ProblemResult> results(problems.size());
  std::vector<std::optional<std::string>> abort_reason(problems.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr fatal;

  auto work = [&] {
    std::unique_ptr<prover::ProverSession> session;
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= problems.size()) {
        return;
      }
      try {
        results[i] = run_problem(problems[i], policy, experiment_seed, components, config, session);
      } catch (const ProblemAborted& e) {
        results[i] = e.partial();
        abort_reason[i] = e.what();
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!fatal) {
          fatal = std::current_exception();
        }
        next.store(problems.size());
        return;
      }
    }
  };

  const std::size_t workers = std::min(parallelism, std::max<std::size_t>(problems.size(), 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(work);
    }
  }
  if (fatal) {
    std::rethrow_exception(fatal);
  }

  ExperimentResult out;
  out.results = std::move(results);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (abort_reason[i]) {
      out.aborted.push_back({problems[i].id, *abort_reason[i]});
    }
  }
  return out;
}

}  // namespace dsp::sched
