#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsp/problem.hpp"

namespace dsp::prompting {

struct ExampleQuad {
  std::string id;
  Category category = Category::Unknown;
  std::string informal_statement;
  std::string informal_proof;
  std::string formal_statement;
  std::string formal_sketch;              // proof part only, statement excluded
  std::optional<std::string> full_proof;  // gap-free alternative, used by FullProof mode
  bool operator==(const ExampleQuad&) const = default;
};

struct ExamplePool {
  std::vector<ExampleQuad> quads;
};

enum class PromptMode { Full, NoComments, NoInformalProof, FullProof };

std::string_view to_string(PromptMode m);
/// Accepts "full", "no-comments", "no-informal", "full-proof".
PromptMode parse_mode(std::string_view s);

struct PromptConfig {
  std::size_t k_examples = 3;
  PromptMode mode = PromptMode::Full;
  std::uint64_t rng_seed = 0;
  std::size_t char_budget = 0;  // 0 disables the limit
};

class PoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PoolTooSmall : public std::runtime_error {
 public:
  PoolTooSmall(std::size_t available, std::size_t wanted);
  std::size_t available;
  std::size_t wanted;
};

class MissingFullProof : public std::runtime_error {
 public:
  explicit MissingFullProof(const std::string& id) : std::runtime_error("example " + id + " has no full proof") {}
};

class PromptTooLong : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Validates ids, categories, and that every sketch parses with at least one
/// gap and one comment. Full proofs, when present, must parse gap-free.
ExamplePool load_pool(const std::filesystem::path& path);
ExamplePool parse_pool(std::string_view json_text);

Category infer_category(std::string_view problem_name);

/// Uniform sample of k distinct quads without replacement from the quads
/// matching `category` (all quads for Unknown), never including `problem_id`.
/// The draw depends only on the generator's raw output, so a given seed picks
/// the same examples on every platform.
std::vector<ExampleQuad> select_examples(const ExamplePool& pool, std::string_view problem_id, Category category,
                                         const PromptConfig& config, std::mt19937_64& rng);

ExampleQuad apply_mode(const ExampleQuad& quad, PromptMode mode);

/// Few-shot sketch prompt. Examples are rendered after apply_mode; the
/// target block ends with the sketch header so the model continues with a
/// proof. In NoInformalProof mode the draft is ignored.
std::string build_sketch_prompt(const std::vector<ExampleQuad>& examples, const Problem& problem,
                                std::string_view draft, const PromptConfig& config);

struct DraftExample {
  std::string informal_statement;
  std::string informal_proof;
};

std::string build_draft_prompt(const Problem& problem, const std::vector<DraftExample>& examples);

inline constexpr std::string_view kInformalStatementHeader = "Informal Statement:";
inline constexpr std::string_view kInformalProofHeader = "Informal Proof:";
inline constexpr std::string_view kFormalStatementHeader = "Formal Statement:";
inline constexpr std::string_view kSketchHeader = "Formal Proof Sketch:";

}  // namespace dsp::prompting
