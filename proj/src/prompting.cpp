#include "dsp/prompting.hpp"

#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

#include "dsp/sketch.hpp"
#include "text_util.hpp"

namespace dsp::prompting {

namespace {

using nlohmann::json;

std::string required_string(const json& obj, const char* field, std::size_t index) {
  if (!obj.contains(field) || !obj[field].is_string()) {
    throw PoolError("quad " + std::to_string(index) + ": missing or non-string field '" + field + "'");
  }
  return obj[field].get<std::string>();
}

// Uniform integer in [0, n) from raw engine output. Rejection sampling keeps
// the result independent of the standard library's distribution code.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
  while (true) {
    const std::uint64_t x = rng();
    if (x < limit) {
      return x % n;
    }
  }
}

void section(std::string& out, std::string_view header, std::string_view body) {
  out += header;
  out += '\n';
  out += text::trim(body);
  out += "\n\n";
}

std::string render_sketch(const ExampleQuad& q) {
  return sketch::serialize_body(sketch::parse_with_statement(q.formal_statement, q.formal_sketch));
}

std::string render_example(const ExampleQuad& q, PromptMode mode) {
  std::string out;
  section(out, kInformalStatementHeader, q.informal_statement);
  if (mode != PromptMode::NoInformalProof) {
    section(out, kInformalProofHeader, q.informal_proof);
  }
  section(out, kFormalStatementHeader, q.formal_statement);
  section(out, kSketchHeader, render_sketch(q));
  return out;
}

std::string render_target(const Problem& p, std::string_view draft, PromptMode mode) {
  std::string out;
  section(out, kInformalStatementHeader, p.informal_statement);
  if (mode != PromptMode::NoInformalProof) {
    section(out, kInformalProofHeader, draft);
  }
  section(out, kFormalStatementHeader, p.formal_statement);
  out += kSketchHeader;
  out += '\n';
  return out;
}

}  // namespace

std::string_view to_string(PromptMode m) {
  switch (m) {
    case PromptMode::Full:
      return "full";
    case PromptMode::NoComments:
      return "no-comments";
    case PromptMode::NoInformalProof:
      return "no-informal";
    case PromptMode::FullProof:
      return "full-proof";
  }
  return "full";
}

PromptMode parse_mode(std::string_view s) {
  for (auto m : {PromptMode::Full, PromptMode::NoComments, PromptMode::NoInformalProof, PromptMode::FullProof}) {
    if (to_string(m) == s) {
      return m;
    }
  }
  throw std::invalid_argument("unknown prompt mode '" + std::string(s) + "'");
}

PoolTooSmall::PoolTooSmall(std::size_t available_, std::size_t wanted_)
    : std::runtime_error("example pool too small: " + std::to_string(available_) + " eligible, " +
                         std::to_string(wanted_) + " requested"),
      available(available_),
      wanted(wanted_) {}

ExamplePool parse_pool(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw PoolError(std::string("pool is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("quads") || !doc["quads"].is_array()) {
    throw PoolError("pool must be an object with a 'quads' array");
  }
  if (doc.value("schema_version", 0) != 1) {
    throw PoolError("unsupported pool schema_version");
  }
  ExamplePool pool;
  std::set<std::string> ids;
  std::size_t index = 0;
  for (const auto& item : doc["quads"]) {
    ExampleQuad q;
    q.id = required_string(item, "id", index);
    try {
      q.category = parse_category(required_string(item, "category", index));
    } catch (const std::invalid_argument& e) {
      throw PoolError("quad " + q.id + ": " + e.what());
    }
    q.informal_statement = required_string(item, "informal_statement", index);
    q.informal_proof = required_string(item, "informal_proof", index);
    q.formal_statement = required_string(item, "formal_statement", index);
    q.formal_sketch = required_string(item, "formal_sketch", index);
    if (item.contains("full_proof") && !item["full_proof"].is_null()) {
      q.full_proof = required_string(item, "full_proof", index);
    }
    if (!ids.insert(q.id).second) {
      throw PoolError("duplicate quad id " + q.id);
    }
    try {
      const auto ast = sketch::parse_with_statement(q.formal_statement, q.formal_sketch);
      if (sketch::count_gaps(ast) == 0) {
        throw PoolError("quad " + q.id + ": formal_sketch has no gaps");
      }
      if (sketch::count_comments(ast) == 0) {
        throw PoolError("quad " + q.id + ": formal_sketch has no comments");
      }
      if (q.full_proof && sketch::count_gaps(sketch::parse_with_statement(q.formal_statement, *q.full_proof)) != 0) {
        throw PoolError("quad " + q.id + ": full_proof has gaps");
      }
    } catch (const sketch::ParseError& e) {
      throw PoolError("quad " + q.id + ": " + e.what());
    }
    pool.quads.push_back(std::move(q));
    ++index;
  }
  return pool;
}

ExamplePool load_pool(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw PoolError("cannot open pool file " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pool(ss.str());
}

Category infer_category(std::string_view name) {
  const bool algebra = name.find("algebra") != std::string_view::npos;
  const bool nt = name.find("numbertheory") != std::string_view::npos;
  if (algebra == nt) {
    return Category::Unknown;
  }
  return algebra ? Category::Algebra : Category::NumberTheory;
}

std::vector<ExampleQuad> select_examples(const ExamplePool& pool, std::string_view problem_id, Category category,
                                         const PromptConfig& config, std::mt19937_64& rng) {
  std::vector<const ExampleQuad*> eligible;
  for (const auto& q : pool.quads) {
    if (q.id == problem_id) {
      continue;
    }
    if (category != Category::Unknown && q.category != category) {
      continue;
    }
    eligible.push_back(&q);
  }
  if (config.k_examples == 0 || eligible.size() < config.k_examples) {
    throw PoolTooSmall(eligible.size(), config.k_examples);
  }
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset in
  // uniformly random order.
  for (std::size_t i = 0; i < config.k_examples; ++i) {
    const std::size_t j = i + uniform_below(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  std::vector<ExampleQuad> out;
  out.reserve(config.k_examples);
  for (std::size_t i = 0; i < config.k_examples; ++i) {
    out.push_back(*eligible[i]);
  }
  return out;
}

ExampleQuad apply_mode(const ExampleQuad& quad, PromptMode mode) {
  ExampleQuad out = quad;
  switch (mode) {
    case PromptMode::Full:
      return out;
    case PromptMode::NoInformalProof:
      out.informal_proof.clear();
      [[fallthrough]];
    case PromptMode::NoComments: {
      const auto ast = sketch::parse_with_statement(quad.formal_statement, quad.formal_sketch);
      out.formal_sketch = sketch::serialize_body(sketch::strip_comments(ast));
      return out;
    }
    case PromptMode::FullProof:
      if (!quad.full_proof) {
        throw MissingFullProof(quad.id);
      }
      out.formal_sketch = *quad.full_proof;
      return out;
  }
  return out;
}

std::string build_sketch_prompt(const std::vector<ExampleQuad>& examples, const Problem& problem,
                                std::string_view draft, const PromptConfig& config) {
  std::vector<std::string> blocks;
  blocks.reserve(examples.size());
  for (const auto& q : examples) {
    blocks.push_back(render_example(apply_mode(q, config.mode), config.mode));
  }
  const std::string target = render_target(problem, draft, config.mode);
  std::size_t total = target.size();
  for (const auto& b : blocks) {
    total += b.size();
  }
  std::size_t first = 0;
  if (config.char_budget > 0) {
    while (total > config.char_budget && blocks.size() - first > 1) {
      total -= blocks[first].size();
      ++first;
    }
    if (total > config.char_budget) {
      throw PromptTooLong("prompt for " + problem.id + " needs " + std::to_string(total) +
                          " characters with a single example; budget is " + std::to_string(config.char_budget));
    }
  }
  std::string out;
  out.reserve(total);
  for (std::size_t i = first; i < blocks.size(); ++i) {
    out += blocks[i];
  }
  out += target;
  return out;
}

std::string build_draft_prompt(const Problem& problem, const std::vector<DraftExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    section(out, kInformalStatementHeader, e.informal_statement);
    section(out, kInformalProofHeader, e.informal_proof);
  }
  section(out, kInformalStatementHeader, problem.informal_statement);
  out += kInformalProofHeader;
  out += '\n';
  return out;
}

}  // namespace dsp::prompting
