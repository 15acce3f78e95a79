#pragma once

// Declarative proof sketches: a small Isar-style grammar covering theorem
// headers, proof blocks with case splits, have/show/obtain/assume steps,
// using/unfolding clauses, comments, and open gaps.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dsp/box.hpp"

namespace dsp::sketch {

/// Canonical rendering of an open gap. Always emitted on its own line.
inline constexpr std::string_view kGapToken = "sledgehammer";

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

/// Child indices from the root. Within a proof block, indices below
/// children.size() address children and the rest address cases; a step whose
/// justification is a nested proof has that block as its only child (index 0).
using NodePath = std::vector<std::size_t>;

struct FixedVar {
  std::string name;
  std::string sort;  // empty when the sort was omitted
  bool operator==(const FixedVar&) const = default;
};

struct Assumption {
  std::optional<std::string> label;
  std::string proposition;
  bool operator==(const Assumption&) const = default;
};

struct TheoremHeader {
  std::optional<std::string> name;
  std::vector<FixedVar> fixes;
  std::vector<Assumption> assumes;
  std::string shows;
  bool operator==(const TheoremHeader&) const = default;
};

/// Forward-chaining keyword in front of a step. `hence`/`thus` parse as
/// Then + have/show.
enum class Chain { None, Then, Also, Finally, Moreover, Ultimately };

struct ProofBlock;

struct Gap {
  bool operator==(const Gap&) const = default;
};

/// A concrete closing step, e.g. "by auto" or "by (smt (z3) foo bar)".
/// Whitespace inside the text is normalized to single spaces.
struct Tactic {
  std::string text;
  bool operator==(const Tactic&) const = default;
};

struct Nested {
  Box<ProofBlock> block;
  bool operator==(const Nested&) const = default;
};

using Justification = std::variant<Gap, Tactic, Nested>;

struct HaveStep {
  Chain chain = Chain::None;
  std::optional<std::string> label;
  std::string proposition;
  std::vector<std::string> facts_used;
  std::vector<std::string> unfolded;
  Justification justification;
  bool operator==(const HaveStep&) const = default;
};

struct ShowStep {
  Chain chain = Chain::None;
  std::string target;  // "?thesis", "?case", or a proposition
  std::vector<std::string> facts_used;
  std::vector<std::string> unfolded;
  Justification justification;
  bool operator==(const ShowStep&) const = default;
};

struct ObtainStep {
  Chain chain = Chain::None;
  std::vector<std::string> bound_vars;
  std::optional<std::string> label;
  std::string proposition;
  std::vector<std::string> facts_used;
  std::vector<std::string> unfolded;
  Justification justification;
  bool operator==(const ObtainStep&) const = default;
};

struct AssumeStep {
  std::optional<std::string> label;
  std::string proposition;
  bool operator==(const AssumeStep&) const = default;
};

struct Comment {
  std::string text;  // raw text between the comment delimiters
  bool operator==(const Comment&) const = default;
};

/// A theorem discharged directly, without a proof block
/// (`theorem t: "P" by auto`). Only valid at the top level.
struct TerminalStep {
  std::vector<std::string> facts_used;
  std::vector<std::string> unfolded;
  Justification justification;
  bool operator==(const TerminalStep&) const = default;
};

struct ProofNode;

struct ProofCase {
  std::string name;  // "True", "0", "(Suc n)"
  std::vector<ProofNode> children;
  friend bool operator==(const ProofCase&, const ProofCase&);
};

struct ProofBlock {
  std::optional<std::string> method;  // "-", "(induct n)", ...
  std::vector<ProofNode> children;
  std::vector<ProofCase> cases;
  friend bool operator==(const ProofBlock&, const ProofBlock&);
};

struct ProofNode {
  using Value = std::variant<HaveStep, ShowStep, ObtainStep, AssumeStep, ProofBlock, Comment, TerminalStep>;
  Value value;

  template <typename T>
  [[nodiscard]] bool is() const {
    return std::holds_alternative<T>(value);
  }
  template <typename T>
  [[nodiscard]] const T* as() const {
    return std::get_if<T>(&value);
  }
  template <typename T>
  [[nodiscard]] T* as() {
    return std::get_if<T>(&value);
  }
  friend bool operator==(const ProofNode&, const ProofNode&);
};

struct SketchAst {
  TheoremHeader header;
  std::vector<ProofNode> body;
  std::map<NodePath, Span> raw_span_map;

  /// Structural equality; source spans are not compared.
  friend bool operator==(const SketchAst& a, const SketchAst& b) {
    return a.header == b.header && a.body == b.body;
  }
};

struct GapSite {
  NodePath path;
  std::optional<std::string> label;
  std::string proposition;  // as written: the have/obtain proposition or the show target
  std::string goal;         // proposition with ?thesis resolved against the enclosing goal
  std::vector<std::string> facts_in_scope;
  std::optional<std::string> preceding_comment;
  bool operator==(const GapSite&) const = default;
};

struct CheatHit {
  std::string keyword;
  std::size_t offset = 0;
  bool operator==(const CheatHit&) const = default;
};

struct CheatReport {
  bool clean = true;
  std::vector<CheatHit> offending;
};

struct UnresolvedFact {
  NodePath path;
  std::string name;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, std::string message, std::vector<std::string> expected = {});

  [[nodiscard]] std::size_t offset() const { return offset_; }
  [[nodiscard]] const std::string& detail() const { return detail_; }
  [[nodiscard]] const std::vector<std::string>& expected() const { return expected_; }

 private:
  std::size_t offset_;
  std::string detail_;
  std::vector<std::string> expected_;
};

class InvalidSite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a complete sketch: a theorem header followed by an optional proof.
/// Throws ParseError on malformed input.
SketchAst parse_sketch(std::string_view source);

/// Parses `statement` and `proof` as one document joined by a newline.
SketchAst parse_with_statement(std::string_view statement, std::string_view proof);

/// Parses a single justification ("by auto", "sledgehammer", "proof ... qed").
Justification parse_justification(std::string_view text);

std::string serialize(const SketchAst& ast);
std::string serialize_header(const TheoremHeader& header);
/// The proof part only (everything after the header).
std::string serialize_body(const SketchAst& ast);
/// Serialized text up to and including the head of the step at `path`,
/// without its justification. Used as the proof context for closing a gap.
std::string serialize_prefix(const SketchAst& ast, const NodePath& path);
std::string render_justification(const Justification& j);

std::vector<GapSite> extract_gaps(const SketchAst& ast);
SketchAst fill_gap(const SketchAst& ast, const GapSite& site, std::string_view closing_step);
SketchAst strip_comments(const SketchAst& ast);
CheatReport check_no_cheat(std::string_view source);

/// Fact names in using/unfolding clauses that do not refer to a visible
/// label. These are usually library lemmas; they are reported, not rejected.
std::vector<UnresolvedFact> unresolved_facts(const SketchAst& ast);

/// Visits every proof node in document order. Case pseudo-nodes are not
/// reported, but their children are.
void for_each_node(const SketchAst& ast, const std::function<void(const NodePath&, const ProofNode&)>& fn);

std::size_t count_gaps(const SketchAst& ast);
std::size_t count_comments(const SketchAst& ast);
std::size_t count_tactics(const SketchAst& ast);
/// False when the body holds nothing but comments.
bool has_proof(const SketchAst& ast);

}  // namespace dsp::sketch
