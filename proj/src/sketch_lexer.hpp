#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace dsp::sketch::detail {

enum class TokenKind {
  Ident,      // identifiers, numerals, keywords
  String,     // "..."
  Cartouche,  // ‹...›, \<open>...\<close>, `...`
  Var,        // ?thesis, ?case
  Comment,    // (* ... *), nested
  GapMark,    // <...>, <⋯>, <…>, <\cdots>
  AtpOpen,    // <ATP>
  AtpClose,   // </ATP>
  Symbol,     // any other single character, or "::"
  End,
};

struct Token {
  TokenKind kind = TokenKind::End;
  std::string_view text;  // raw slice of the source
  std::size_t begin = 0;
  std::size_t end = 0;

  [[nodiscard]] bool is(TokenKind k, std::string_view t) const { return kind == k && text == t; }
  [[nodiscard]] bool is_word(std::string_view t) const { return kind == TokenKind::Ident && text == t; }
  [[nodiscard]] bool is_symbol(std::string_view t) const { return kind == TokenKind::Symbol && text == t; }
};

/// Splits `source` into tokens. The last token is always End. Throws
/// ParseError on unterminated strings, cartouches, or comments.
std::vector<Token> tokenize(std::string_view source);

bool is_ident_char(unsigned char c);

}  // namespace dsp::sketch::detail
