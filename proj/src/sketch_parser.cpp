#include <algorithm>
#include <array>
#include <set>
#include <string>

#include "dsp/sketch.hpp"
#include "sketch_lexer.hpp"
#include "text_util.hpp"

namespace dsp::sketch {

namespace {

using detail::Token;
using detail::TokenKind;

constexpr std::array<std::string_view, 30> kKeywords = {
    "theorem", "fixes",     "assumes", "shows",   "and",        "proof",   "qed",  "next",
    "case",    "have",      "show",    "obtain",  "assume",     "then",    "also", "finally",
    "moreover", "ultimately", "hence", "thus",    "using",      "unfolding", "by", "sledgehammer",
    "where",   "ATP",       "sorry",   "oops",    "lemma",      "from",
};

bool is_keyword(std::string_view word) {
  return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

std::string unquote(std::string_view quoted) { return std::string(quoted.substr(1, quoted.size() - 2)); }

std::string comment_text(std::string_view raw) { return std::string(raw.substr(2, raw.size() - 4)); }

NodePath child_path(const NodePath& parent, std::size_t index) {
  NodePath p = parent;
  p.push_back(index);
  return p;
}

class Parser {
 public:
  Parser(std::string_view source, std::map<NodePath, Span>* spans)
      : source_(source), tokens_(detail::tokenize(source)), spans_(spans) {}

  SketchAst parse_document() {
    SketchAst ast;
    ast.header = parse_header();
    bool have_proof = false;
    while (!at_end()) {
      const std::size_t index = ast.body.size();
      const NodePath path{index};
      const std::size_t begin = peek().begin;
      if (peek().kind == TokenKind::Comment) {
        ast.body.push_back(ProofNode{Comment{comment_text(take().text)}});
      } else if (!have_proof && peek().is_word("proof")) {
        ast.body.push_back(ProofNode{parse_block(path)});
        have_proof = true;
      } else if (!have_proof && starts_terminal()) {
        TerminalStep step;
        parse_facts(step.facts_used, step.unfolded);
        step.justification = parse_justification_at(path);
        ast.body.push_back(ProofNode{std::move(step)});
        have_proof = true;
      } else {
        fail(have_proof ? std::vector<std::string>{"comment", "end of input"}
                        : std::vector<std::string>{"proof", "by", "sledgehammer", "using", "comment", "end of input"});
      }
      record(path, begin);
    }
    if (spans_ != nullptr) {
      ast.raw_span_map = std::move(*spans_);
    }
    return ast;
  }

  Justification parse_lone_justification() {
    auto j = parse_justification_at(NodePath{0});
    if (!at_end()) {
      fail({"end of input"});
    }
    return j;
  }

 private:
  // Token access.
  [[nodiscard]] const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  [[nodiscard]] bool at_end() const { return peek().kind == TokenKind::End; }
  const Token& take() {
    const Token& t = tokens_[pos_];
    if (t.kind != TokenKind::End) {
      ++pos_;
    }
    last_end_ = t.end;
    return t;
  }

  [[noreturn]] void fail(std::vector<std::string> expected) const {
    const Token& t = peek();
    std::string found = t.kind == TokenKind::End ? std::string("end of input") : "'" + std::string(t.text) + "'";
    std::string msg = "unexpected " + found;
    if (!expected.empty()) {
      msg += ", expected one of:";
      for (const auto& e : expected) {
        msg += " " + e;
      }
    }
    throw ParseError(t.begin, msg, std::move(expected));
  }

  void expect_word(std::string_view word) {
    if (!peek().is_word(word)) {
      fail({std::string(word)});
    }
    take();
  }

  std::string expect_string() {
    if (peek().kind != TokenKind::String) {
      fail({"quoted proposition"});
    }
    return unquote(take().text);
  }

  void record(const NodePath& path, std::size_t begin) {
    if (spans_ != nullptr) {
      (*spans_)[path] = Span{begin, last_end_};
    }
  }

  [[nodiscard]] bool at_label() const {
    return peek().kind == TokenKind::Ident && !is_keyword(peek().text) && peek(1).is_symbol(":");
  }

  std::optional<std::string> parse_label() {
    if (!at_label()) {
      return std::nullopt;
    }
    std::string label(take().text);
    take();  // ':'
    return label;
  }

  // Header.
  TheoremHeader parse_header() {
    TheoremHeader h;
    expect_word("theorem");
    if (peek().kind == TokenKind::Ident && !is_keyword(peek().text)) {
      h.name = std::string(take().text);
    }
    if (peek().is_symbol(":")) {
      take();
    }
    if (peek().kind == TokenKind::String) {
      h.shows = unquote(take().text);
      return h;
    }
    std::set<std::string> seen_vars;
    while (true) {
      if (peek().is_word("fixes")) {
        take();
        parse_fixes(h, seen_vars);
      } else if (peek().is_word("assumes")) {
        take();
        parse_assumes(h);
      } else if (peek().is_word("shows")) {
        if (!h.shows.empty()) {
          fail({"proof", "by"});
        }
        take();
        h.shows = expect_string();
      } else {
        break;
      }
    }
    if (h.shows.empty()) {
      fail({"shows"});
    }
    return h;
  }

  void parse_fixes(TheoremHeader& h, std::set<std::string>& seen) {
    while (true) {
      std::vector<std::string> names;
      while (peek().kind == TokenKind::Ident && !is_keyword(peek().text)) {
        const Token& t = take();
        std::string name(t.text);
        if (!seen.insert(name).second) {
          throw ParseError(t.begin, "duplicate fixed variable '" + name + "'");
        }
        names.push_back(std::move(name));
      }
      if (names.empty()) {
        fail({"variable name"});
      }
      std::string sort;
      if (peek().is_symbol("::")) {
        take();
        if (peek().kind == TokenKind::String) {
          sort = unquote(take().text);
        } else if (peek().kind == TokenKind::Ident && !is_keyword(peek().text)) {
          sort = std::string(take().text);
        } else {
          fail({"sort"});
        }
      }
      for (auto& n : names) {
        h.fixes.push_back(FixedVar{std::move(n), sort});
      }
      if (!peek().is_word("and")) {
        return;
      }
      take();
    }
  }

  void parse_assumes(TheoremHeader& h) {
    while (true) {
      auto label = parse_label();
      h.assumes.push_back(Assumption{std::move(label), expect_string()});
      while (peek().kind == TokenKind::String) {
        h.assumes.push_back(Assumption{std::nullopt, unquote(take().text)});
      }
      if (!peek().is_word("and")) {
        return;
      }
      take();
    }
  }

  // Facts.
  [[nodiscard]] bool at_fact_name() const {
    const Token& t = peek();
    return (t.kind == TokenKind::Ident && !is_keyword(t.text)) || t.kind == TokenKind::Cartouche;
  }

  std::string parse_fact_name() {
    const Token& t = take();
    std::string name(t.text);
    if (t.kind == TokenKind::Ident && peek().is_symbol("(") && peek().begin == t.end) {
      // Selection suffix such as assms(1) or numerals(1).
      const std::size_t begin = peek().begin;
      skip_balanced("(", ")");
      name += source_.substr(begin, last_end_ - begin);
    }
    return name;
  }

  void parse_facts(std::vector<std::string>& used, std::vector<std::string>& unfolded) {
    while (peek().is_word("using") || peek().is_word("unfolding")) {
      auto& dest = take().text == "using" ? used : unfolded;
      if (!at_fact_name()) {
        fail({"fact name"});
      }
      while (at_fact_name()) {
        dest.push_back(parse_fact_name());
      }
    }
  }

  // Methods and justifications.
  void skip_balanced(std::string_view open, std::string_view close) {
    int depth = 0;
    do {
      if (at_end()) {
        fail({std::string(close)});
      }
      const Token& t = take();
      if (t.is_symbol(open)) {
        ++depth;
      } else if (t.is_symbol(close)) {
        --depth;
      }
    } while (depth > 0);
  }

  std::optional<std::string> parse_method() {
    const Token& t = peek();
    if (t.is_symbol("-")) {
      take();
      return "-";
    }
    if (t.is_symbol("(")) {
      const std::size_t begin = t.begin;
      skip_balanced("(", ")");
      return text::collapse_whitespace(source_.substr(begin, last_end_ - begin));
    }
    if (t.kind == TokenKind::Ident && !is_keyword(t.text)) {
      return std::string(take().text);
    }
    return std::nullopt;
  }

  [[nodiscard]] bool starts_justification() const {
    const Token& t = peek();
    return t.is_word("by") || t.is_word("sledgehammer") || t.is_word("proof") || t.is_word("ATP") ||
           t.is_word("sorry") || t.is_word("oops") || t.kind == TokenKind::GapMark || t.kind == TokenKind::AtpOpen;
  }

  [[nodiscard]] bool starts_terminal() const {
    return starts_justification() || peek().is_word("using") || peek().is_word("unfolding");
  }

  Justification parse_justification_at(const NodePath& owner) {
    const Token& t = peek();
    if (t.is_word("sledgehammer") || t.is_word("ATP") || t.kind == TokenKind::GapMark) {
      take();
      return Gap{};
    }
    if (t.kind == TokenKind::AtpOpen) {
      take();
      if (peek().kind == TokenKind::AtpClose) {
        take();
        return Gap{};
      }
      if (peek().is_word("proof")) {
        fail({"by", "sledgehammer", "</ATP>"});
      }
      auto inner = parse_justification_at(owner);
      if (peek().kind != TokenKind::AtpClose) {
        fail({"</ATP>"});
      }
      take();
      return inner;
    }
    if (t.is_word("sorry") || t.is_word("oops")) {
      return Tactic{std::string(take().text)};
    }
    if (t.is_word("by")) {
      take();
      auto first = parse_method();
      if (!first || *first == "-") {
        fail({"proof method"});
      }
      std::string text = "by " + *first;
      if (peek().is_symbol("(") || (peek().kind == TokenKind::Ident && !is_keyword(peek().text))) {
        text += " " + *parse_method();
      }
      return Tactic{std::move(text)};
    }
    if (t.is_word("proof")) {
      return Nested{parse_block(child_path(owner, 0))};
    }
    fail({"by", "proof", "sledgehammer", "<...>", "<ATP>"});
  }

  // Steps.
  [[nodiscard]] bool starts_step() const {
    static constexpr std::array<std::string_view, 11> kStarts = {
        "then", "also", "finally", "moreover", "ultimately", "hence", "thus", "have", "show", "obtain", "assume"};
    const Token& t = peek();
    return t.kind == TokenKind::Ident && std::find(kStarts.begin(), kStarts.end(), t.text) != kStarts.end();
  }

  ProofNode parse_step(const NodePath& path) {
    Chain chain = Chain::None;
    std::string_view verb;
    const Token& t = take();
    if (t.text == "hence" || t.text == "thus") {
      chain = Chain::Then;
      verb = t.text == "hence" ? "have" : "show";
    } else if (t.text == "assume") {
      AssumeStep step;
      step.label = parse_label();
      step.proposition = expect_string();
      return ProofNode{std::move(step)};
    } else if (t.text == "have" || t.text == "show" || t.text == "obtain") {
      verb = t.text;
    } else {
      if (t.text == "then") {
        chain = Chain::Then;
      } else if (t.text == "also") {
        chain = Chain::Also;
      } else if (t.text == "finally") {
        chain = Chain::Finally;
      } else if (t.text == "moreover") {
        chain = Chain::Moreover;
      } else {
        chain = Chain::Ultimately;
      }
      if (peek().is_word("have") || peek().is_word("show") || peek().is_word("obtain")) {
        verb = take().text;
      } else {
        fail({"have", "show", "obtain"});
      }
    }

    if (verb == "have") {
      HaveStep step;
      step.chain = chain;
      step.label = parse_label();
      step.proposition = expect_string();
      parse_facts(step.facts_used, step.unfolded);
      step.justification = parse_justification_at(path);
      return ProofNode{std::move(step)};
    }
    if (verb == "show") {
      ShowStep step;
      step.chain = chain;
      if (peek().kind == TokenKind::Var) {
        step.target = std::string(take().text);
      } else {
        step.target = expect_string();
      }
      parse_facts(step.facts_used, step.unfolded);
      step.justification = parse_justification_at(path);
      return ProofNode{std::move(step)};
    }
    ObtainStep step;
    step.chain = chain;
    while (peek().kind == TokenKind::Ident && !is_keyword(peek().text)) {
      step.bound_vars.emplace_back(take().text);
    }
    if (step.bound_vars.empty()) {
      fail({"variable name"});
    }
    expect_word("where");
    step.label = parse_label();
    step.proposition = expect_string();
    parse_facts(step.facts_used, step.unfolded);
    step.justification = parse_justification_at(path);
    return ProofNode{std::move(step)};
  }

  // Parses statements until one of the terminators (not consumed).
  void parse_statements(std::vector<ProofNode>& out, const NodePath& parent, std::size_t index_offset) {
    while (true) {
      const NodePath path = child_path(parent, index_offset + out.size());
      const std::size_t begin = peek().begin;
      if (peek().kind == TokenKind::Comment) {
        out.push_back(ProofNode{Comment{comment_text(take().text)}});
      } else if (starts_step()) {
        out.push_back(parse_step(path));
      } else if (peek().is_word("qed") || peek().is_word("case") || peek().is_word("next")) {
        return;
      } else {
        fail({"have", "show", "obtain", "assume", "then", "case", "next", "qed", "comment"});
      }
      record(path, begin);
    }
  }

  std::string parse_case_name() {
    const Token& t = peek();
    if (t.is_symbol("(")) {
      const std::size_t begin = t.begin;
      skip_balanced("(", ")");
      return text::collapse_whitespace(source_.substr(begin, last_end_ - begin));
    }
    if (t.kind == TokenKind::Ident && !is_keyword(t.text)) {
      return std::string(take().text);
    }
    fail({"case name"});
  }

  ProofBlock parse_block(const NodePath& path) {
    const std::size_t begin = peek().begin;
    expect_word("proof");
    ProofBlock block;
    block.method = parse_method();
    parse_statements(block.children, path, 0);
    while (peek().is_word("case") || peek().is_word("next")) {
      if (peek().is_word("next")) {
        if (block.cases.empty()) {
          fail({"case", "qed"});
        }
        take();
      } else if (!block.cases.empty()) {
        fail({"next", "qed"});
      }
      // Comments between `next` and `case` open the following case.
      const NodePath case_path = child_path(path, block.children.size() + block.cases.size());
      std::vector<ProofNode> leading;
      while (peek().kind == TokenKind::Comment) {
        const std::size_t comment_begin = peek().begin;
        leading.push_back(ProofNode{Comment{comment_text(take().text)}});
        record(child_path(case_path, leading.size() - 1), comment_begin);
      }
      const std::size_t case_begin = peek().begin;
      expect_word("case");
      ProofCase pc;
      pc.name = parse_case_name();
      pc.children = std::move(leading);
      parse_statements(pc.children, case_path, 0);
      if (spans_ != nullptr) {
        (*spans_)[case_path] = Span{case_begin, last_end_};
      }
      block.cases.push_back(std::move(pc));
    }
    expect_word("qed");
    if (spans_ != nullptr) {
      (*spans_)[path] = Span{begin, last_end_};
    }
    return block;
  }

  std::string_view source_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::size_t last_end_ = 0;
  std::map<NodePath, Span>* spans_;
};

}  // namespace

ParseError::ParseError(std::size_t offset, std::string message, std::vector<std::string> expected)
    : std::runtime_error("parse error at byte " + std::to_string(offset) + ": " + message),
      offset_(offset),
      detail_(std::move(message)),
      expected_(std::move(expected)) {}

SketchAst parse_sketch(std::string_view source) {
  std::map<NodePath, Span> spans;
  Parser parser(source, &spans);
  return parser.parse_document();
}

SketchAst parse_with_statement(std::string_view statement, std::string_view proof) {
  std::string joined(statement);
  joined += '\n';
  joined += proof;
  return parse_sketch(joined);
}

Justification parse_justification(std::string_view text) {
  Parser parser(text, nullptr);
  return parser.parse_lone_justification();
}

}  // namespace dsp::sketch
