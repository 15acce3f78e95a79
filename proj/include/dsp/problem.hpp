#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dsp {

enum class Split { Valid, Test };
enum class Category { Algebra, NumberTheory, Unknown };

std::string_view to_string(Split s);
std::string_view to_string(Category c);
/// Accepts "valid"/"test". Throws std::invalid_argument otherwise.
Split parse_split(std::string_view s);
/// Accepts "algebra", "number_theory", "unknown".
Category parse_category(std::string_view s);

struct Problem {
  std::string id;
  Split split = Split::Valid;
  Category category = Category::Unknown;
  std::string informal_statement;
  std::optional<std::string> informal_proof;
  std::string formal_statement;
  bool operator==(const Problem&) const = default;
};

}  // namespace dsp
