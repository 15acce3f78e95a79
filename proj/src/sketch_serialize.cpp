#include <string>

#include "dsp/sketch.hpp"
#include "sketch_lexer.hpp"

namespace dsp::sketch {

namespace {

std::string_view chain_word(Chain c) {
  switch (c) {
    case Chain::None:
      return "";
    case Chain::Then:
      return "then";
    case Chain::Also:
      return "also";
    case Chain::Finally:
      return "finally";
    case Chain::Moreover:
      return "moreover";
    case Chain::Ultimately:
      return "ultimately";
  }
  return "";
}

bool is_bare_word(std::string_view s) {
  if (s.empty()) {
    return false;
  }
  for (char c : s) {
    if (!detail::is_ident_char(static_cast<unsigned char>(c)) && c != '.') {
      return false;
    }
  }
  return true;
}

bool is_schematic(std::string_view s) { return s.size() > 1 && s.front() == '?' && is_bare_word(s.substr(1)); }

std::string quoted(std::string_view s) {
  std::string out = "\"";
  out += s;
  out += '"';
  return out;
}

std::string fact_clauses(const std::vector<std::string>& used, const std::vector<std::string>& unfolded) {
  std::string out;
  if (!used.empty()) {
    out += " using";
    for (const auto& f : used) {
      out += " " + f;
    }
  }
  if (!unfolded.empty()) {
    out += " unfolding";
    for (const auto& f : unfolded) {
      out += " " + f;
    }
  }
  return out;
}

class Writer {
 public:
  explicit Writer(const NodePath* stop) : stop_(stop) {}

  void line(std::size_t indent, std::string_view s) {
    if (done_) {
      return;
    }
    out_.append(indent, ' ');
    out_ += s;
    out_ += '\n';
  }

  void list(const std::vector<ProofNode>& nodes, const NodePath& parent, std::size_t indent) {
    for (std::size_t i = 0; i < nodes.size() && !done_; ++i) {
      NodePath path = parent;
      path.push_back(i);
      node(nodes[i], path, indent);
    }
  }

  void block(const ProofBlock& b, const NodePath& path, std::size_t indent) {
    line(indent, b.method ? "proof " + *b.method : std::string("proof"));
    list(b.children, path, indent + 2);
    for (std::size_t c = 0; c < b.cases.size(); ++c) {
      if (c > 0) {
        line(indent, "next");
      }
      NodePath case_path = path;
      case_path.push_back(b.children.size() + c);
      line(indent + 2, "case " + b.cases[c].name);
      list(b.cases[c].children, case_path, indent + 2);
    }
    line(indent, "qed");
  }

  void justification(const Justification& j, const NodePath& owner, std::size_t indent) {
    if (std::holds_alternative<Gap>(j)) {
      line(indent + 2, kGapToken);
    } else if (const auto* t = std::get_if<Tactic>(&j)) {
      line(indent + 2, t->text);
    } else {
      NodePath path = owner;
      path.push_back(0);
      block(*std::get<Nested>(j).block, path, indent);
    }
  }

  void step(std::string head, const Justification& j, const NodePath& path, std::size_t indent) {
    line(indent, head);
    if (stop_ != nullptr && *stop_ == path) {
      done_ = true;
      return;
    }
    justification(j, path, indent);
  }

  void node(const ProofNode& n, const NodePath& path, std::size_t indent) {
    if (const auto* c = n.as<Comment>()) {
      line(indent, "(*" + c->text + "*)");
    } else if (const auto* h = n.as<HaveStep>()) {
      std::string head = prefix(h->chain) + "have";
      if (h->label) {
        head += " " + *h->label + ":";
      }
      head += " " + quoted(h->proposition) + fact_clauses(h->facts_used, h->unfolded);
      step(std::move(head), h->justification, path, indent);
    } else if (const auto* s = n.as<ShowStep>()) {
      std::string head = prefix(s->chain) + "show ";
      head += is_schematic(s->target) ? s->target : quoted(s->target);
      head += fact_clauses(s->facts_used, s->unfolded);
      step(std::move(head), s->justification, path, indent);
    } else if (const auto* o = n.as<ObtainStep>()) {
      std::string head = prefix(o->chain) + "obtain";
      for (const auto& v : o->bound_vars) {
        head += " " + v;
      }
      head += " where";
      if (o->label) {
        head += " " + *o->label + ":";
      }
      head += " " + quoted(o->proposition) + fact_clauses(o->facts_used, o->unfolded);
      step(std::move(head), o->justification, path, indent);
    } else if (const auto* a = n.as<AssumeStep>()) {
      std::string head = "assume";
      if (a->label) {
        head += " " + *a->label + ":";
      }
      line(indent, head + " " + quoted(a->proposition));
    } else if (const auto* b = n.as<ProofBlock>()) {
      block(*b, path, indent);
    } else if (const auto* t = n.as<TerminalStep>()) {
      const std::string facts = fact_clauses(t->facts_used, t->unfolded);
      if (!facts.empty()) {
        line(indent + 2, facts.substr(1));
      }
      if (stop_ != nullptr && *stop_ == path) {
        done_ = true;
        return;
      }
      justification(t->justification, path, indent);
    }
  }

  std::string take() { return std::move(out_); }
  [[nodiscard]] bool done() const { return done_; }

 private:
  static std::string prefix(Chain c) {
    auto w = chain_word(c);
    return w.empty() ? std::string() : std::string(w) + " ";
  }

  const NodePath* stop_;
  std::string out_;
  bool done_ = false;
};

}  // namespace

std::string serialize_header(const TheoremHeader& header) {
  std::string out = header.name ? "theorem " + *header.name + ":\n" : std::string("theorem\n");
  if (!header.fixes.empty()) {
    out += "  fixes";
    for (std::size_t i = 0; i < header.fixes.size(); ++i) {
      const auto& f = header.fixes[i];
      out += i == 0 ? " " : " and ";
      out += f.name;
      if (!f.sort.empty()) {
        out += " :: " + (is_bare_word(f.sort) ? f.sort : quoted(f.sort));
      }
    }
    out += '\n';
  }
  for (std::size_t i = 0; i < header.assumes.size(); ++i) {
    const auto& a = header.assumes[i];
    out += i == 0 ? "  assumes " : "    and ";
    if (a.label) {
      out += *a.label + ": ";
    }
    out += quoted(a.proposition) + "\n";
  }
  out += "  shows " + quoted(header.shows) + "\n";
  return out;
}

std::string serialize_body(const SketchAst& ast) {
  Writer w(nullptr);
  w.list(ast.body, {}, 0);
  return w.take();
}

std::string serialize(const SketchAst& ast) { return serialize_header(ast.header) + serialize_body(ast); }

std::string serialize_prefix(const SketchAst& ast, const NodePath& path) {
  Writer w(&path);
  w.list(ast.body, {}, 0);
  return serialize_header(ast.header) + w.take();
}

std::string render_justification(const Justification& j) {
  if (std::holds_alternative<Gap>(j)) {
    return std::string(kGapToken);
  }
  if (const auto* t = std::get_if<Tactic>(&j)) {
    return t->text;
  }
  Writer w(nullptr);
  w.block(*std::get<Nested>(j).block, {0}, 0);
  return w.take();
}

}  // namespace dsp::sketch
