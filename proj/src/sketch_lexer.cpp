#include "sketch_lexer.hpp"

#include <array>

#include "dsp/sketch.hpp"

namespace dsp::sketch::detail {

namespace {

constexpr std::string_view kOpenCartouche = "\xE2\x80\xB9";   // ‹
constexpr std::string_view kCloseCartouche = "\xE2\x80\xBA";  // ›
constexpr std::string_view kSymOpen = "\\<open>";
constexpr std::string_view kSymClose = "\\<close>";

constexpr std::array<std::string_view, 5> kGapMarks = {
    "<...>",
    "<\xE2\x8B\xAF>",  // <⋯>
    "<\xE2\x80\xA6>",  // <…>
    "<\\cdots>",
    "<\\dots>",
};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ident_start(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      if (pos_ >= src_.size()) {
        out.push_back(Token{TokenKind::End, {}, src_.size(), src_.size()});
        return out;
      }
      out.push_back(next());
    }
  }

 private:
  [[nodiscard]] bool starts_with(std::string_view s) const { return src_.substr(pos_).starts_with(s); }

  void skip_space() {
    while (pos_ < src_.size() && is_space(static_cast<unsigned char>(src_[pos_]))) {
      ++pos_;
    }
  }

  Token make(TokenKind kind, std::size_t begin) const {
    return Token{kind, src_.substr(begin, pos_ - begin), begin, pos_};
  }

  Token next() {
    const std::size_t begin = pos_;
    const auto c = static_cast<unsigned char>(src_[pos_]);

    if (starts_with("(*")) {
      return comment(begin);
    }
    if (c == '"') {
      const auto close = src_.find('"', pos_ + 1);
      if (close == std::string_view::npos) {
        throw ParseError(begin, "unterminated string literal");
      }
      pos_ = close + 1;
      return make(TokenKind::String, begin);
    }
    if (starts_with(kOpenCartouche)) {
      return delimited(begin, kOpenCartouche, kCloseCartouche);
    }
    if (starts_with(kSymOpen)) {
      return delimited(begin, kSymOpen, kSymClose);
    }
    if (c == '`') {
      const auto close = src_.find('`', pos_ + 1);
      if (close == std::string_view::npos) {
        throw ParseError(begin, "unterminated backquoted fact");
      }
      pos_ = close + 1;
      return make(TokenKind::Cartouche, begin);
    }
    if (c == '<') {
      if (starts_with("<ATP>")) {
        pos_ += 5;
        return make(TokenKind::AtpOpen, begin);
      }
      if (starts_with("</ATP>")) {
        pos_ += 6;
        return make(TokenKind::AtpClose, begin);
      }
      for (auto mark : kGapMarks) {
        if (starts_with(mark)) {
          pos_ += mark.size();
          return make(TokenKind::GapMark, begin);
        }
      }
    }
    if (c == '?' && pos_ + 1 < src_.size() && is_ident_start(static_cast<unsigned char>(src_[pos_ + 1]))) {
      ++pos_;
      consume_ident();
      return make(TokenKind::Var, begin);
    }
    if (is_ident_start(c)) {
      consume_ident();
      return make(TokenKind::Ident, begin);
    }
    if (starts_with("::")) {
      pos_ += 2;
      return make(TokenKind::Symbol, begin);
    }
    if (starts_with("\\<")) {
      const auto close = src_.find('>', pos_);
      if (close != std::string_view::npos) {
        pos_ = close + 1;
        return make(TokenKind::Symbol, begin);
      }
    }
    ++pos_;
    return make(TokenKind::Symbol, begin);
  }

  // A dot continues an identifier only when another identifier character
  // follows, so `foo.bar` is one token but a trailing `.` is not absorbed.
  void consume_ident() {
    while (pos_ < src_.size()) {
      const auto c = static_cast<unsigned char>(src_[pos_]);
      if (is_ident_char(c)) {
        ++pos_;
      } else if (c == '.' && pos_ + 1 < src_.size() && is_ident_start(static_cast<unsigned char>(src_[pos_ + 1]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  Token comment(std::size_t begin) {
    int depth = 0;
    while (pos_ < src_.size()) {
      if (starts_with("(*")) {
        ++depth;
        pos_ += 2;
      } else if (starts_with("*)")) {
        --depth;
        pos_ += 2;
        if (depth == 0) {
          return make(TokenKind::Comment, begin);
        }
      } else {
        ++pos_;
      }
    }
    throw ParseError(begin, "unterminated comment");
  }

  Token delimited(std::size_t begin, std::string_view open, std::string_view close) {
    const auto end = src_.find(close, pos_ + open.size());
    if (end == std::string_view::npos) {
      throw ParseError(begin, "unterminated cartouche");
    }
    pos_ = end + close.size();
    return make(TokenKind::Cartouche, begin);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

}  // namespace

bool is_ident_char(unsigned char c) { return is_ident_start(c) || c == '\''; }

std::vector<Token> tokenize(std::string_view source) { return Lexer(source).run(); }

}  // namespace dsp::sketch::detail
