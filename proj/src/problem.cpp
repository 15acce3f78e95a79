#include "dsp/problem.hpp"

namespace dsp {

std::string_view to_string(Split s) { return s == Split::Valid ? "valid" : "test"; }

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Algebra:
      return "algebra";
    case Category::NumberTheory:
      return "number_theory";
    case Category::Unknown:
      return "unknown";
  }
  return "unknown";
}

Split parse_split(std::string_view s) {
  if (s == "valid") {
    return Split::Valid;
  }
  if (s == "test") {
    return Split::Test;
  }
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Category parse_category(std::string_view s) {
  if (s == "algebra") {
    return Category::Algebra;
  }
  if (s == "number_theory") {
    return Category::NumberTheory;
  }
  if (s == "unknown") {
    return Category::Unknown;
  }
  throw std::invalid_argument("unknown category '" + std::string(s) + "'");
}

}  // namespace dsp
