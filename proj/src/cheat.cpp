#include <array>

#include "dsp/sketch.hpp"
#include "sketch_lexer.hpp"

namespace dsp::sketch {

namespace {

constexpr std::array<std::string_view, 2> kCheatWords = {"sorry", "oops"};

// Returns the offset just past a delimited region starting at `pos`, or npos
// if the region is unterminated. Unterminated regions are scanned as code so
// a dangling "(*" cannot hide a keyword.
std::size_t skip_comment(std::string_view s, std::size_t pos) {
  int depth = 0;
  while (pos < s.size()) {
    if (s.compare(pos, 2, "(*") == 0) {
      ++depth;
      pos += 2;
    } else if (s.compare(pos, 2, "*)") == 0) {
      pos += 2;
      if (--depth == 0) {
        return pos;
      }
    } else {
      ++pos;
    }
  }
  return std::string_view::npos;
}

std::size_t skip_until(std::string_view s, std::size_t pos, std::string_view open, std::string_view close) {
  const auto end = s.find(close, pos + open.size());
  return end == std::string_view::npos ? std::string_view::npos : end + close.size();
}

}  // namespace

CheatReport check_no_cheat(std::string_view source) {
  CheatReport report;
  std::size_t i = 0;
  while (i < source.size()) {
    std::size_t skipped = std::string_view::npos;
    if (source.compare(i, 2, "(*") == 0) {
      skipped = skip_comment(source, i);
    } else if (source[i] == '"') {
      skipped = skip_until(source, i, "\"", "\"");
    } else if (source.compare(i, 3, "\xE2\x80\xB9") == 0) {
      skipped = skip_until(source, i, "\xE2\x80\xB9", "\xE2\x80\xBA");
    } else if (source.compare(i, 7, "\\<open>") == 0) {
      skipped = skip_until(source, i, "\\<open>", "\\<close>");
    }
    if (skipped != std::string_view::npos) {
      i = skipped;
      continue;
    }
    const auto c = static_cast<unsigned char>(source[i]);
    if (!detail::is_ident_char(c)) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (i < source.size() && detail::is_ident_char(static_cast<unsigned char>(source[i]))) {
      ++i;
    }
    const std::string_view word = source.substr(begin, i - begin);
    for (auto kw : kCheatWords) {
      if (word == kw) {
        report.clean = false;
        report.offending.push_back(CheatHit{std::string(kw), begin});
      }
    }
  }
  return report;
}

}  // namespace dsp::sketch
