#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "dsp/eval.hpp"

namespace dsp::eval {

std::string Fraction::percent() const {
  // Rounded half-up on the exact ratio, one decimal.
  const std::uint64_t tenths = total == 0 ? 0 : (solved * 2000 + total) / (2 * total);
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10) + "%";
}

std::string Fraction::ratio() const { return std::to_string(solved) + "/" + std::to_string(total); }

MissingResults::MissingResults(std::vector<std::string> ids)
    : std::runtime_error([&] {
        std::string msg = "no result for " + std::to_string(ids.size()) + " problem(s):";
        for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
          msg += " " + ids[i];
        }
        return msg;
      }()),
      ids_(std::move(ids)) {}

std::optional<std::size_t> first_success(const ProblemResult& r) {
  for (std::size_t i = 0; i < r.attempts.size(); ++i) {
    const auto& a = r.attempts[i];
    if (a.success && a.failure_stage != FailureStage::NotRun) {
      return i;
    }
  }
  return std::nullopt;
}

Fraction success_rate(const std::vector<ProblemResult>& results, const std::vector<Problem>& problems,
                      std::optional<Split> split) {
  std::map<std::string, const ProblemResult*> by_id;
  for (const auto& r : results) {
    by_id.emplace(r.problem_id, &r);
  }
  Fraction f;
  std::vector<std::string> missing;
  for (const auto& p : problems) {
    if (split && p.split != *split) {
      continue;
    }
    ++f.total;
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) {
      missing.push_back(p.id);
    } else if (first_success(*it->second)) {
      ++f.solved;
    }
  }
  if (!missing.empty()) {
    throw MissingResults(std::move(missing));
  }
  return f;
}

Curve cumulative_curve(const std::vector<ProblemResult>& results, std::size_t max_attempts) {
  Curve c;
  c.points.assign(max_attempts, 0);
  for (const auto& r : results) {
    const auto first = first_success(r);
    if (!first) {
      continue;
    }
    for (std::size_t k = *first; k < max_attempts; ++k) {
      ++c.points[k];
    }
  }
  return c;
}

BudgetGrid budget_grid(const std::vector<ProblemResult>& results, const std::vector<std::size_t>& draft_counts,
                       const std::vector<std::size_t>& sketch_counts, std::size_t budget_cap) {
  BudgetGrid g{draft_counts, sketch_counts, {}};
  // Per problem: the (draft, sketch) cells that ran, and the ones that succeeded.
  struct Cells {
    std::set<std::pair<std::size_t, std::size_t>> ran;
    std::vector<std::pair<std::size_t, std::size_t>> wins;
  };
  std::vector<Cells> per_problem(results.size());
  for (std::size_t p = 0; p < results.size(); ++p) {
    for (const auto& a : results[p].attempts) {
      if (a.failure_stage == FailureStage::NotRun) {
        continue;
      }
      per_problem[p].ran.emplace(a.draft_index, a.sketch_index);
      if (a.success) {
        per_problem[p].wins.emplace_back(a.draft_index, a.sketch_index);
      }
    }
  }
  g.cells.assign(draft_counts.size(), std::vector<std::optional<std::size_t>>(sketch_counts.size()));
  for (std::size_t i = 0; i < draft_counts.size(); ++i) {
    for (std::size_t j = 0; j < sketch_counts.size(); ++j) {
      const std::size_t d = draft_counts[i];
      const std::size_t s = sketch_counts[j];
      if (d * s > budget_cap) {
        continue;
      }
      std::size_t solved = 0;
      for (std::size_t p = 0; p < results.size(); ++p) {
        const auto& cells = per_problem[p];
        for (std::size_t di = 0; di < d; ++di) {
          for (std::size_t si = 0; si < s; ++si) {
            if (!cells.ran.contains({di, si})) {
              throw CoverageError("records for " + results[p].problem_id + " do not cover draft " +
                                  std::to_string(di) + ", sketch " + std::to_string(si) + " (needed by cell " +
                                  std::to_string(d) + "x" + std::to_string(s) + ")");
            }
          }
        }
        if (std::any_of(cells.wins.begin(), cells.wins.end(),
                        [&](const auto& w) { return w.first < d && w.second < s; })) {
          ++solved;
        }
      }
      g.cells[i][j] = solved;
    }
  }
  return g;
}

std::string table_csv(const std::vector<ProblemResult>& results, const std::vector<Problem>& problems) {
  std::string out = "split,solved,total,fraction,percent\n";
  const std::pair<std::string_view, std::optional<Split>> rows[] = {
      {"valid", Split::Valid}, {"test", Split::Test}, {"all", std::nullopt}};
  for (const auto& [name, split] : rows) {
    const auto f = success_rate(results, problems, split);
    out += std::string(name) + "," + std::to_string(f.solved) + "," + std::to_string(f.total) + "," + f.ratio() +
           "," + f.percent() + "\n";
  }
  return out;
}

std::string curve_csv(const Curve& curve) {
  std::string out = "attempts,solved\n";
  for (std::size_t k = 0; k < curve.points.size(); ++k) {
    out += std::to_string(k + 1) + "," + std::to_string(curve.points[k]) + "\n";
  }
  return out;
}

std::string grid_csv(const BudgetGrid& grid) {
  std::string out = "drafts,sketches,solved\n";
  for (std::size_t i = 0; i < grid.draft_counts.size(); ++i) {
    for (std::size_t j = 0; j < grid.sketch_counts.size(); ++j) {
      if (grid.cells[i][j]) {
        out += std::to_string(grid.draft_counts[i]) + "," + std::to_string(grid.sketch_counts[j]) + "," +
               std::to_string(*grid.cells[i][j]) + "\n";
      }
    }
  }
  return out;
}

}  // namespace dsp::eval
