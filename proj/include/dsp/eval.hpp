#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dsp/problem.hpp"

namespace dsp::eval {

inline constexpr int kRecordsSchemaVersion = 1;
inline constexpr int kDatasetSchemaVersion = 1;

enum class FailureStage { Draft, PromptBuild, Parse, Prove, Verify, Infra, NotRun };

std::string_view to_string(FailureStage s);
FailureStage parse_failure_stage(std::string_view s);

struct AttemptRecord {
  std::string problem_id;
  std::size_t draft_index = 0;
  std::size_t sketch_index = 0;
  bool parse_ok = false;
  std::size_t gaps_total = 0;
  std::size_t gaps_closed = 0;
  bool success = false;
  std::optional<FailureStage> failure_stage;
  std::int64_t wall_ms = 0;
  std::uint64_t prompt_seed = 0;
  bool operator==(const AttemptRecord&) const = default;
};

/// success => parse_ok, all gaps closed, no failure stage; gaps_closed <= gaps_total;
/// a failed attempt always names its stage.
bool consistent(const AttemptRecord& r);

struct ProblemResult {
  std::string problem_id;
  std::vector<AttemptRecord> attempts;  // plan order
  bool solved = false;
  std::optional<std::size_t> first_success_index;
  bool operator==(const ProblemResult&) const = default;
};

/// Builds a result whose solved/first_success_index are derived from `attempts`.
ProblemResult summarize(std::string problem_id, std::vector<AttemptRecord> attempts);

// ---- dataset ----

class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::size_t line, std::string field, const std::string& detail);
  [[nodiscard]] std::size_t line() const { return line_; }
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class DuplicateId : public std::runtime_error {
 public:
  explicit DuplicateId(std::string id);
  [[nodiscard]] const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<Problem> problems;
  std::size_t valid_count = 0;
  std::size_t test_count = 0;
  std::vector<std::string> warnings;
};

/// JSON lines: a {"schema_version": 1} header, then one object per problem
/// with id, split, category (optional, inferred from the id), informal_statement,
/// informal_proof (optional or null) and formal_statement.
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view text);
void write_dataset(std::ostream& out, const std::vector<Problem>& problems);

// ---- metrics ----

struct Fraction {
  std::uint64_t solved = 0;
  std::uint64_t total = 0;
  [[nodiscard]] double value() const { return total == 0 ? 0.0 : static_cast<double>(solved) / static_cast<double>(total); }
  /// "39.3%"
  [[nodiscard]] std::string percent() const;
  /// "96/244"
  [[nodiscard]] std::string ratio() const;
  bool operator==(const Fraction&) const = default;
};

class MissingResults : public std::runtime_error {
 public:
  explicit MissingResults(std::vector<std::string> ids);
  [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

/// Solved fraction over the problems of `split` (all problems when nullopt).
Fraction success_rate(const std::vector<ProblemResult>& results, const std::vector<Problem>& problems,
                      std::optional<Split> split);

/// Index of the earliest successful attempt, ignoring NotRun records.
std::optional<std::size_t> first_success(const ProblemResult& r);

struct Curve {
  /// points[k-1] = problems solved within the first k attempts.
  std::vector<std::size_t> points;
  bool operator==(const Curve&) const = default;
};

Curve cumulative_curve(const std::vector<ProblemResult>& results, std::size_t max_attempts);

class CoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BudgetGrid {
  std::vector<std::size_t> draft_counts;
  std::vector<std::size_t> sketch_counts;
  /// cells[i][j] for (draft_counts[i], sketch_counts[j]); empty when over the cap.
  std::vector<std::vector<std::optional<std::size_t>>> cells;
};

/// Regroups full-run records: cell (d, s) counts problems with a success among
/// attempts with draft_index < d and sketch_index < s.
BudgetGrid budget_grid(const std::vector<ProblemResult>& results, const std::vector<std::size_t>& draft_counts,
                       const std::vector<std::size_t>& sketch_counts, std::size_t budget_cap);

// ---- export ----

/// One JSON object per attempt per line. wall_ms is left out so the stream is
/// reproducible; it lives in the timing sidecar instead.
void write_records(std::ostream& out, const std::vector<ProblemResult>& results);
std::string records_stream(const std::vector<ProblemResult>& results);
/// Groups records by problem in order of first appearance.
std::vector<ProblemResult> read_records(std::istream& in);
std::vector<ProblemResult> load_records(const std::filesystem::path& path);

/// {"problem_id": [wall_ms, ...], ...}
nlohmann::json timings(const std::vector<ProblemResult>& results);
void apply_timings(std::vector<ProblemResult>& results, const nlohmann::json& timing);

/// Columns: split,solved,total,fraction,percent. Rows valid, test, all.
std::string table_csv(const std::vector<ProblemResult>& results, const std::vector<Problem>& problems);
/// Columns: attempts,solved. One row per attempt count 1..max_attempts.
std::string curve_csv(const Curve& curve);
/// Columns: drafts,sketches,solved. Cells over the cap are omitted.
std::string grid_csv(const BudgetGrid& grid);

void write_file(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace dsp::eval
