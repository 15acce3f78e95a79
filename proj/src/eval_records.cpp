#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dsp/eval.hpp"
#include "dsp/prompting.hpp"

namespace dsp::eval {

using Json = nlohmann::json;

namespace {

constexpr std::array<std::pair<FailureStage, std::string_view>, 7> kStages = {{
    {FailureStage::Draft, "draft"},
    {FailureStage::PromptBuild, "prompt_build"},
    {FailureStage::Parse, "parse"},
    {FailureStage::Prove, "prove"},
    {FailureStage::Verify, "verify"},
    {FailureStage::Infra, "infra"},
    {FailureStage::NotRun, "not_run"},
}};

std::string require_string(const Json& obj, const char* field, std::size_t line, bool allow_empty = false) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    throw SchemaError(line, field, "missing or not a string");
  }
  auto s = it->get<std::string>();
  if (!allow_empty && s.empty()) {
    throw SchemaError(line, field, "must not be empty");
  }
  return s;
}

std::uint64_t require_uint(const Json& obj, const char* field, std::size_t line) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_number_unsigned()) {
    throw SchemaError(line, field, "missing or not a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

bool require_bool(const Json& obj, const char* field, std::size_t line) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_boolean()) {
    throw SchemaError(line, field, "missing or not a boolean");
  }
  return it->get<bool>();
}

Json parse_line(std::string_view text, std::size_t line) {
  try {
    auto j = Json::parse(text);
    if (!j.is_object()) {
      throw SchemaError(line, "", "not an object");
    }
    return j;
  } catch (const Json::parse_error& e) {
    throw SchemaError(line, "", e.what());
  }
}

void check_header(const Json& j, std::size_t line, int version) {
  const auto it = j.find("schema_version");
  if (it == j.end() || !it->is_number_integer() || it->get<int>() != version) {
    throw SchemaError(line, "schema_version", "expected " + std::to_string(version));
  }
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    ++line;
    auto l = text.substr(pos, end - pos);
    if (!l.empty() && l.back() == '\r') {
      l.remove_suffix(1);
    }
    pos = end + 1;
    if (l.find_first_not_of(" \t") == std::string_view::npos) {
      continue;
    }
    fn(l, line);
  }
}

}  // namespace

std::string_view to_string(FailureStage s) {
  for (const auto& [stage, name] : kStages) {
    if (stage == s) {
      return name;
    }
  }
  return "?";
}

FailureStage parse_failure_stage(std::string_view s) {
  for (const auto& [stage, name] : kStages) {
    if (name == s) {
      return stage;
    }
  }
  throw std::invalid_argument("unknown failure stage: " + std::string(s));
}

bool consistent(const AttemptRecord& r) {
  if (r.gaps_closed > r.gaps_total) {
    return false;
  }
  if (r.success) {
    return r.parse_ok && r.gaps_closed == r.gaps_total && !r.failure_stage;
  }
  return r.failure_stage.has_value();
}

ProblemResult summarize(std::string problem_id, std::vector<AttemptRecord> attempts) {
  ProblemResult r;
  r.problem_id = std::move(problem_id);
  r.attempts = std::move(attempts);
  r.first_success_index = first_success(r);
  r.solved = r.first_success_index.has_value();
  return r;
}

SchemaError::SchemaError(std::size_t line, std::string field, const std::string& detail)
    : std::runtime_error("line " + std::to_string(line) + (field.empty() ? "" : ", field '" + field + "'") + ": " +
                         detail),
      line_(line),
      field_(std::move(field)) {}

DuplicateId::DuplicateId(std::string id) : std::runtime_error("duplicate problem id: " + id), id_(std::move(id)) {}

Dataset parse_dataset(std::string_view text) {
  Dataset ds;
  bool header = false;
  std::set<std::string> ids;
  for_each_line(text, [&](std::string_view l, std::size_t line) {
    const Json j = parse_line(l, line);
    if (!header) {
      check_header(j, line, kDatasetSchemaVersion);
      header = true;
      return;
    }
    Problem p;
    p.id = require_string(j, "id", line);
    try {
      p.split = parse_split(require_string(j, "split", line));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(line, "split", e.what());
    }
    if (const auto it = j.find("category"); it != j.end() && !it->is_null()) {
      try {
        p.category = parse_category(require_string(j, "category", line));
      } catch (const std::invalid_argument& e) {
        throw SchemaError(line, "category", e.what());
      }
    } else {
      p.category = prompting::infer_category(p.id);
    }
    p.informal_statement = require_string(j, "informal_statement", line);
    if (const auto it = j.find("informal_proof"); it != j.end() && !it->is_null()) {
      p.informal_proof = require_string(j, "informal_proof", line);
    }
    p.formal_statement = require_string(j, "formal_statement", line);
    if (!ids.insert(p.id).second) {
      throw DuplicateId(p.id);
    }
    (p.split == Split::Valid ? ds.valid_count : ds.test_count)++;
    ds.problems.push_back(std::move(p));
  });
  if (!header) {
    throw SchemaError(1, "schema_version", "missing header line");
  }
  if (ds.valid_count != 244 || ds.test_count != 244) {
    ds.warnings.push_back("split sizes are " + std::to_string(ds.valid_count) + " valid / " +
                          std::to_string(ds.test_count) + " test, not the full 244/244 benchmark");
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(read_file(path)); }

void write_dataset(std::ostream& out, const std::vector<Problem>& problems) {
  out << Json{{"schema_version", kDatasetSchemaVersion}}.dump() << '\n';
  for (const auto& p : problems) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["split"] = to_string(p.split);
    j["category"] = to_string(p.category);
    j["informal_statement"] = p.informal_statement;
    j["informal_proof"] = p.informal_proof ? Json(*p.informal_proof) : Json(nullptr);
    j["formal_statement"] = p.formal_statement;
    out << j.dump() << '\n';
  }
}

void write_records(std::ostream& out, const std::vector<ProblemResult>& results) {
  for (const auto& res : results) {
    for (const auto& r : res.attempts) {
      nlohmann::ordered_json j;
      j["schema_version"] = kRecordsSchemaVersion;
      j["problem_id"] = r.problem_id;
      j["draft_index"] = r.draft_index;
      j["sketch_index"] = r.sketch_index;
      j["parse_ok"] = r.parse_ok;
      j["gaps_total"] = r.gaps_total;
      j["gaps_closed"] = r.gaps_closed;
      j["success"] = r.success;
      j["failure_stage"] = r.failure_stage ? Json(to_string(*r.failure_stage)) : Json(nullptr);
      j["prompt_seed"] = r.prompt_seed;
      out << j.dump() << '\n';
    }
  }
}

std::string records_stream(const std::vector<ProblemResult>& results) {
  std::ostringstream out;
  write_records(out, results);
  return out.str();
}

std::vector<ProblemResult> read_records(std::istream& in) {
  std::vector<std::pair<std::string, std::vector<AttemptRecord>>> groups;
  std::map<std::string, std::size_t> index;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for_each_line(text, [&](std::string_view l, std::size_t line) {
    const Json j = parse_line(l, line);
    check_header(j, line, kRecordsSchemaVersion);
    AttemptRecord r;
    r.problem_id = require_string(j, "problem_id", line);
    r.draft_index = require_uint(j, "draft_index", line);
    r.sketch_index = require_uint(j, "sketch_index", line);
    r.parse_ok = require_bool(j, "parse_ok", line);
    r.gaps_total = require_uint(j, "gaps_total", line);
    r.gaps_closed = require_uint(j, "gaps_closed", line);
    r.success = require_bool(j, "success", line);
    const auto fs = j.find("failure_stage");
    if (fs == j.end()) {
      throw SchemaError(line, "failure_stage", "missing");
    }
    if (!fs->is_null()) {
      try {
        r.failure_stage = parse_failure_stage(require_string(j, "failure_stage", line));
      } catch (const std::invalid_argument& e) {
        throw SchemaError(line, "failure_stage", e.what());
      }
    }
    r.prompt_seed = require_uint(j, "prompt_seed", line);
    if (!consistent(r)) {
      throw SchemaError(line, "success", "record violates success/gap invariants");
    }
    auto [it, fresh] = index.emplace(r.problem_id, groups.size());
    if (fresh) {
      groups.emplace_back(r.problem_id, std::vector<AttemptRecord>{});
    }
    groups[it->second].second.push_back(std::move(r));
  });
  std::vector<ProblemResult> out;
  out.reserve(groups.size());
  for (auto& [id, attempts] : groups) {
    out.push_back(summarize(id, std::move(attempts)));
  }
  return out;
}

std::vector<ProblemResult> load_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return read_records(in);
}

Json timings(const std::vector<ProblemResult>& results) {
  Json j = Json::object();
  for (const auto& res : results) {
    Json arr = Json::array();
    for (const auto& r : res.attempts) {
      arr.push_back(r.wall_ms);
    }
    j[res.problem_id] = std::move(arr);
  }
  return j;
}

void apply_timings(std::vector<ProblemResult>& results, const Json& timing) {
  for (auto& res : results) {
    const auto it = timing.find(res.problem_id);
    if (it == timing.end() || !it->is_array()) {
      continue;
    }
    for (std::size_t i = 0; i < res.attempts.size() && i < it->size(); ++i) {
      res.attempts[i].wall_ms = (*it)[i].get<std::int64_t>();
    }
  }
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace dsp::eval
