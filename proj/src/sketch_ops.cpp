#include <algorithm>
#include <array>
#include <string>

#include "dsp/sketch.hpp"
#include "sketch_lexer.hpp"

namespace dsp::sketch {

namespace {

NodePath extend(const NodePath& p, std::size_t i) {
  NodePath out = p;
  out.push_back(i);
  return out;
}

const Justification* justification_of(const ProofNode& n) {
  if (const auto* h = n.as<HaveStep>()) {
    return &h->justification;
  }
  if (const auto* s = n.as<ShowStep>()) {
    return &s->justification;
  }
  if (const auto* o = n.as<ObtainStep>()) {
    return &o->justification;
  }
  if (const auto* t = n.as<TerminalStep>()) {
    return &t->justification;
  }
  return nullptr;
}

Justification* justification_of(ProofNode& n) {
  return const_cast<Justification*>(justification_of(static_cast<const ProofNode&>(n)));
}

struct FactLists {
  const std::vector<std::string>* used = nullptr;
  const std::vector<std::string>* unfolded = nullptr;
};

FactLists facts_of(const ProofNode& n) {
  if (const auto* h = n.as<HaveStep>()) {
    return {&h->facts_used, &h->unfolded};
  }
  if (const auto* s = n.as<ShowStep>()) {
    return {&s->facts_used, &s->unfolded};
  }
  if (const auto* o = n.as<ObtainStep>()) {
    return {&o->facts_used, &o->unfolded};
  }
  if (const auto* t = n.as<TerminalStep>()) {
    return {&t->facts_used, &t->unfolded};
  }
  return {};
}

std::optional<std::string> label_of(const ProofNode& n) {
  if (const auto* h = n.as<HaveStep>()) {
    return h->label;
  }
  if (const auto* o = n.as<ObtainStep>()) {
    return o->label;
  }
  if (const auto* a = n.as<AssumeStep>()) {
    return a->label;
  }
  return std::nullopt;
}

// "(Suc n)" binds the fact name "Suc"; "True" binds "True".
std::string case_fact_name(std::string_view name) {
  std::size_t i = 0;
  while (i < name.size() && (name[i] == '(' || name[i] == ' ')) {
    ++i;
  }
  std::size_t j = i;
  while (j < name.size() && detail::is_ident_char(static_cast<unsigned char>(name[j]))) {
    ++j;
  }
  return std::string(name.substr(i, j - i));
}

// Visits the tree with lexical scope: which labels are visible, the enclosing
// goal that ?thesis refers to, and the comment immediately before each node.
struct ScopedVisit {
  const NodePath& path;
  const ProofNode& node;
  const std::vector<std::string>& scope;
  const std::string& goal;
  const std::optional<std::string>& preceding_comment;
};

class ScopedWalker {
 public:
  explicit ScopedWalker(std::function<void(const ScopedVisit&)> fn) : fn_(std::move(fn)) {}

  void walk(const SketchAst& ast) {
    std::vector<std::string> scope;
    if (!ast.header.assumes.empty()) {
      scope.emplace_back("assms");
    }
    for (const auto& a : ast.header.assumes) {
      if (a.label) {
        scope.push_back(*a.label);
      }
    }
    walk_list(ast.body, {}, scope, ast.header.shows);
  }

 private:
  void walk_list(const std::vector<ProofNode>& nodes, const NodePath& parent, std::vector<std::string>& scope,
                 const std::string& goal) {
    std::optional<std::string> prev_comment;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const ProofNode& n = nodes[i];
      const NodePath path = extend(parent, i);
      fn_(ScopedVisit{path, n, scope, goal, prev_comment});
      if (const auto* c = n.as<Comment>()) {
        prev_comment = c->text;
        continue;
      }
      prev_comment.reset();
      if (const auto* b = n.as<ProofBlock>()) {
        walk_block(*b, path, scope, goal);
      } else if (const auto* j = justification_of(n); j != nullptr) {
        if (const auto* nested = std::get_if<Nested>(j)) {
          walk_block(*nested->block, extend(path, 0), scope, resolve_goal(n, goal));
        }
      }
      if (auto label = label_of(n)) {
        scope.push_back(*label);
      }
    }
  }

  void walk_block(const ProofBlock& b, const NodePath& path, const std::vector<std::string>& outer,
                  const std::string& goal) {
    std::vector<std::string> scope = outer;
    walk_list(b.children, path, scope, goal);
    for (std::size_t c = 0; c < b.cases.size(); ++c) {
      std::vector<std::string> case_scope = scope;
      if (auto fact = case_fact_name(b.cases[c].name); !fact.empty()) {
        case_scope.push_back(std::move(fact));
      }
      walk_list(b.cases[c].children, extend(path, b.children.size() + c), case_scope, goal);
    }
  }

 public:
  static std::string resolve_goal(const ProofNode& n, const std::string& enclosing) {
    if (const auto* h = n.as<HaveStep>()) {
      return h->proposition;
    }
    if (const auto* o = n.as<ObtainStep>()) {
      return o->proposition;
    }
    if (const auto* s = n.as<ShowStep>()) {
      return s->target == "?thesis" ? enclosing : s->target;
    }
    return enclosing;
  }

 private:
  std::function<void(const ScopedVisit&)> fn_;
};

std::string proposition_of(const ProofNode& n, const SketchAst& ast) {
  if (const auto* h = n.as<HaveStep>()) {
    return h->proposition;
  }
  if (const auto* s = n.as<ShowStep>()) {
    return s->target;
  }
  if (const auto* o = n.as<ObtainStep>()) {
    return o->proposition;
  }
  return ast.header.shows;
}

// Resolves a path to a proof node. Returns null when the path is out of
// range or ends on a nested block or a case rather than a node.
const ProofNode* find_node(const SketchAst& ast, const NodePath& path) {
  const std::vector<ProofNode>* list = &ast.body;
  const ProofBlock* block = nullptr;
  const ProofNode* node = nullptr;
  for (std::size_t idx : path) {
    if (node != nullptr) {
      if (const auto* b = node->as<ProofBlock>()) {
        block = b;
      } else if (const auto* j = justification_of(*node); j != nullptr && std::holds_alternative<Nested>(*j)) {
        if (idx != 0) {
          return nullptr;
        }
        block = &*std::get<Nested>(*j).block;
        node = nullptr;
        continue;
      } else {
        return nullptr;
      }
      node = nullptr;
    }
    if (block != nullptr) {
      if (idx < block->children.size()) {
        node = &block->children[idx];
      } else if (idx - block->children.size() < block->cases.size()) {
        list = &block->cases[idx - block->children.size()].children;
      } else {
        return nullptr;
      }
      block = nullptr;
    } else if (list != nullptr) {
      if (idx >= list->size()) {
        return nullptr;
      }
      node = &(*list)[idx];
      list = nullptr;
    } else {
      return nullptr;
    }
  }
  return node;
}

void walk_plain(const std::vector<ProofNode>& nodes, const NodePath& parent,
                const std::function<void(const NodePath&, const ProofNode&)>& fn);

void walk_plain_block(const ProofBlock& b, const NodePath& path,
                      const std::function<void(const NodePath&, const ProofNode&)>& fn) {
  walk_plain(b.children, path, fn);
  for (std::size_t c = 0; c < b.cases.size(); ++c) {
    walk_plain(b.cases[c].children, extend(path, b.children.size() + c), fn);
  }
}

void walk_plain(const std::vector<ProofNode>& nodes, const NodePath& parent,
                const std::function<void(const NodePath&, const ProofNode&)>& fn) {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodePath path = extend(parent, i);
    fn(path, nodes[i]);
    if (const auto* b = nodes[i].as<ProofBlock>()) {
      walk_plain_block(*b, path, fn);
    } else if (const auto* j = justification_of(nodes[i]); j != nullptr) {
      if (const auto* nested = std::get_if<Nested>(j)) {
        walk_plain_block(*nested->block, extend(path, 0), fn);
      }
    }
  }
}

using SpanMap = std::map<NodePath, Span>;

void copy_span(const SpanMap& from, SpanMap& to, const NodePath& old_path, const NodePath& new_path) {
  if (auto it = from.find(old_path); it != from.end()) {
    to[new_path] = it->second;
  }
}

void strip_list(const std::vector<ProofNode>& in, std::vector<ProofNode>& out, const NodePath& old_parent,
                const NodePath& new_parent, const SpanMap& old_spans, SpanMap& new_spans);

ProofBlock strip_block(const ProofBlock& b, const NodePath& old_path, const NodePath& new_path,
                       const SpanMap& old_spans, SpanMap& new_spans) {
  ProofBlock out;
  out.method = b.method;
  strip_list(b.children, out.children, old_path, new_path, old_spans, new_spans);
  for (std::size_t c = 0; c < b.cases.size(); ++c) {
    const NodePath old_case = extend(old_path, b.children.size() + c);
    const NodePath new_case = extend(new_path, out.children.size() + c);
    copy_span(old_spans, new_spans, old_case, new_case);
    ProofCase pc;
    pc.name = b.cases[c].name;
    strip_list(b.cases[c].children, pc.children, old_case, new_case, old_spans, new_spans);
    out.cases.push_back(std::move(pc));
  }
  return out;
}

void strip_list(const std::vector<ProofNode>& in, std::vector<ProofNode>& out, const NodePath& old_parent,
                const NodePath& new_parent, const SpanMap& old_spans, SpanMap& new_spans) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i].is<Comment>()) {
      continue;
    }
    const NodePath old_path = extend(old_parent, i);
    const NodePath new_path = extend(new_parent, out.size());
    copy_span(old_spans, new_spans, old_path, new_path);
    ProofNode node = in[i];
    if (auto* b = node.as<ProofBlock>()) {
      *b = strip_block(*b, old_path, new_path, old_spans, new_spans);
    } else if (auto* j = justification_of(node); j != nullptr) {
      if (auto* nested = std::get_if<Nested>(j)) {
        const NodePath old_nested = extend(old_path, 0);
        const NodePath new_nested = extend(new_path, 0);
        copy_span(old_spans, new_spans, old_nested, new_nested);
        *nested->block = strip_block(*nested->block, old_nested, new_nested, old_spans, new_spans);
      }
    }
    out.push_back(std::move(node));
  }
}

bool is_builtin_fact(std::string_view name) {
  return name == "this" || name == "calculation" || name == "that";
}

std::string fact_base(std::string_view name) {
  const auto paren = name.find('(');
  return std::string(name.substr(0, paren));
}

}  // namespace

bool operator==(const ProofCase& a, const ProofCase& b) { return a.name == b.name && a.children == b.children; }

bool operator==(const ProofBlock& a, const ProofBlock& b) {
  return a.method == b.method && a.children == b.children && a.cases == b.cases;
}

bool operator==(const ProofNode& a, const ProofNode& b) { return a.value == b.value; }

void for_each_node(const SketchAst& ast, const std::function<void(const NodePath&, const ProofNode&)>& fn) {
  walk_plain(ast.body, {}, fn);
}

std::vector<GapSite> extract_gaps(const SketchAst& ast) {
  std::vector<GapSite> sites;
  ScopedWalker walker([&](const ScopedVisit& v) {
    const auto* j = justification_of(v.node);
    if (j == nullptr || !std::holds_alternative<Gap>(*j)) {
      return;
    }
    GapSite site;
    site.path = v.path;
    site.label = label_of(v.node);
    site.proposition = proposition_of(v.node, ast);
    site.goal = v.node.is<TerminalStep>() ? ast.header.shows : ScopedWalker::resolve_goal(v.node, v.goal);
    site.facts_in_scope = v.scope;
    site.preceding_comment = v.preceding_comment;
    sites.push_back(std::move(site));
  });
  walker.walk(ast);
  return sites;
}

SketchAst fill_gap(const SketchAst& ast, const GapSite& site, std::string_view closing_step) {
  const ProofNode* target = find_node(ast, site.path);
  if (target == nullptr) {
    throw InvalidSite("gap site path does not address a proof step");
  }
  const Justification* j = justification_of(*target);
  if (j == nullptr || !std::holds_alternative<Gap>(*j)) {
    throw InvalidSite("gap site does not address an open gap");
  }
  if (proposition_of(*target, ast) != site.proposition) {
    throw InvalidSite("gap site proposition does not match the addressed step");
  }
  Justification closing = parse_justification(closing_step);
  if (std::holds_alternative<Gap>(closing)) {
    throw InvalidSite("closing step must not be a gap");
  }
  SketchAst out = ast;
  // find_node on the copy yields a node owned by `out`.
  auto* node = const_cast<ProofNode*>(find_node(out, site.path));
  *justification_of(*node) = std::move(closing);
  return out;
}

SketchAst strip_comments(const SketchAst& ast) {
  SketchAst out;
  out.header = ast.header;
  strip_list(ast.body, out.body, {}, {}, ast.raw_span_map, out.raw_span_map);
  return out;
}

std::vector<UnresolvedFact> unresolved_facts(const SketchAst& ast) {
  std::vector<UnresolvedFact> out;
  ScopedWalker walker([&](const ScopedVisit& v) {
    const auto lists = facts_of(v.node);
    for (const auto* list : {lists.used, lists.unfolded}) {
      if (list == nullptr) {
        continue;
      }
      for (const auto& fact : *list) {
        if (fact.empty() || !detail::is_ident_char(static_cast<unsigned char>(fact.front()))) {
          continue;  // literal fact such as a cartouche
        }
        const std::string base = fact_base(fact);
        if (is_builtin_fact(base) || std::find(v.scope.begin(), v.scope.end(), base) != v.scope.end()) {
          continue;
        }
        out.push_back(UnresolvedFact{v.path, fact});
      }
    }
  });
  walker.walk(ast);
  return out;
}

std::size_t count_gaps(const SketchAst& ast) {
  std::size_t n = 0;
  for_each_node(ast, [&](const NodePath&, const ProofNode& node) {
    if (const auto* j = justification_of(node); j != nullptr && std::holds_alternative<Gap>(*j)) {
      ++n;
    }
  });
  return n;
}

std::size_t count_comments(const SketchAst& ast) {
  std::size_t n = 0;
  for_each_node(ast, [&](const NodePath&, const ProofNode& node) { n += node.is<Comment>() ? 1 : 0; });
  return n;
}

std::size_t count_tactics(const SketchAst& ast) {
  std::size_t n = 0;
  for_each_node(ast, [&](const NodePath&, const ProofNode& node) {
    if (const auto* j = justification_of(node); j != nullptr && std::holds_alternative<Tactic>(*j)) {
      ++n;
    }
  });
  return n;
}

bool has_proof(const SketchAst& ast) {
  return std::any_of(ast.body.begin(), ast.body.end(), [](const ProofNode& n) { return n.as<Comment>() == nullptr; });
}

}  // namespace dsp::sketch
