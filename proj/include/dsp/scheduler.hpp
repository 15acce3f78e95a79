#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dsp/eval.hpp"
#include "dsp/llm.hpp"
#include "dsp/problem.hpp"
#include "dsp/prompting.hpp"
#include "dsp/prover.hpp"

namespace dsp::sched {

enum class DraftSource { Human, Model };
enum class Mode { Dsp, DirectProve };

std::string_view to_string(DraftSource s);
DraftSource parse_draft_source(std::string_view s);
std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct BudgetPolicy {
  std::size_t drafts_per_problem = 100;
  std::size_t sketches_per_draft = 1;
  std::size_t total_budget = 100;
  bool stop_on_first_success = true;
  DraftSource draft_source = DraftSource::Model;
  bool operator==(const BudgetPolicy&) const = default;
};

class PolicyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class BudgetExceeded : public PolicyError {
 public:
  using PolicyError::PolicyError;
};

/// Human drafts force a single draft per problem.
BudgetPolicy normalize(BudgetPolicy policy);
/// Throws PolicyError for zero counts and BudgetExceeded when the grid is
/// larger than total_budget.
void validate(const BudgetPolicy& policy);

struct PlanEntry {
  std::size_t draft_index = 0;
  std::size_t sketch_index = 0;
  std::uint64_t prompt_seed = 0;
  bool operator==(const PlanEntry&) const = default;
};

struct AttemptPlan {
  std::vector<PlanEntry> entries;
  bool operator==(const AttemptPlan&) const = default;
};

/// First 8 bytes (big-endian) of SHA-256 over a length-prefixed encoding of
/// the four inputs.
std::uint64_t attempt_seed(std::uint64_t experiment_seed, std::string_view problem_id, std::size_t draft_index,
                           std::size_t sketch_index);

/// Draft-major enumeration of the normalized policy's grid.
AttemptPlan make_plan(const BudgetPolicy& policy, std::uint64_t experiment_seed, std::string_view problem_id);

using SessionFactory = std::function<std::unique_ptr<prover::ProverSession>()>;

struct PipelineConfig {
  Mode mode = Mode::Dsp;
  prompting::PromptConfig prompt;
  std::string endpoint_id = "default";
  /// Few-shot pairs for the draft prompt; empty means zero-shot.
  std::vector<prompting::DraftExample> draft_examples;
  /// How many times a dead prover session is reopened within one problem.
  int session_reopens = 2;
};

struct Components {
  const prompting::ExamplePool* pool = nullptr;
  llm::LlmClient* client = nullptr;
  SessionFactory open_session;
};

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The session died more often than PipelineConfig::session_reopens allows.
/// Carries the records gathered so far; unexecuted entries are marked Infra.
class ProblemAborted : public prover::SessionDead {
 public:
  ProblemAborted(const std::string& what, eval::ProblemResult partial)
      : prover::SessionDead(what), partial_(std::move(partial)) {}
  [[nodiscard]] const eval::ProblemResult& partial() const { return partial_; }

 private:
  eval::ProblemResult partial_;
};

/// Runs one problem's plan. `session` is reused and (re)opened on demand
/// through components.open_session.
eval::ProblemResult run_problem(const Problem& problem, const BudgetPolicy& policy, std::uint64_t experiment_seed,
                                const Components& components, const PipelineConfig& config,
                                std::unique_ptr<prover::ProverSession>& session);

struct Abort {
  std::string problem_id;
  std::string reason;
};

struct ExperimentResult {
  std::vector<eval::ProblemResult> results;  // input order
  std::vector<Abort> aborted;                // input order
};

/// Bounded worker pool, one prover session per worker. Checks the policy
/// and preconditions for every problem before starting any work.
ExperimentResult run_experiment(const std::vector<Problem>& problems, const BudgetPolicy& policy,
                                std::uint64_t experiment_seed, const Components& components,
                                const PipelineConfig& config, std::size_t parallelism);

}  // namespace dsp::sched
