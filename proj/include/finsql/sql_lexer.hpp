#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "finsql/error.hpp"
#include "finsql/text.hpp"

namespace finsql::sql {

enum class TokenKind {
  Identifier,  // text as written (backticks stripped)
  Keyword,     // text uppercased
  Integer,
  Decimal,
  String,      // text is the unquoted, unescaped content
  Operator,    // = == != <> < <= > >= + - * /
  LParen,
  RParen,
  Comma,
  Dot,
  Semicolon,
  End,
};

struct Token {
  TokenKind kind = TokenKind::End;
  std::string text;
  std::size_t offset = 0;  // byte offset of the first character
  std::size_t length = 0;  // byte length in the source
  char quote = 0;          // quote character for String / quoted Identifier
};

inline constexpr std::array<std::string_view, 33> kReservedWords = {
    "SELECT", "DISTINCT", "FROM",   "AS",     "JOIN",    "INNER",    "LEFT",   "RIGHT",  "OUTER",
    "ON",     "WHERE",    "AND",    "OR",     "NOT",     "IN",       "BETWEEN", "LIKE",  "IS",
    "NULL",   "GROUP",    "BY",     "HAVING", "ORDER",   "ASC",      "DESC",   "LIMIT",  "UNION",
    "INSERT", "UPDATE",   "DELETE", "CREATE", "DROP",    "ALTER"};

inline bool is_reserved(std::string_view word) {
  for (auto k : kReservedWords)
    if (text::iequals(k, word)) return true;
  return false;
}

namespace detail {
inline bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
inline bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c == '$' || c >= 0x80; }
}  // namespace detail

// Splits SQL text into tokens. Unknown characters and unterminated quotes
// raise SyntaxError at their offset. The last token is always End.
inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = src.size();
  auto push = [&](TokenKind kind, std::string text, std::size_t start, char quote = 0) {
    out.push_back(Token{kind, std::move(text), start, i - start, quote});
  };

  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(src[i]);
    const std::size_t start = i;
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (detail::ident_start(c)) {
      while (i < n && detail::ident_char(static_cast<unsigned char>(src[i]))) ++i;
      std::string word(src.substr(start, i - start));
      if (is_reserved(word))
        push(TokenKind::Keyword, text::to_upper(word), start);
      else
        push(TokenKind::Identifier, std::move(word), start);
      continue;
    }
    if (std::isdigit(c)) {
      while (i < n && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      bool decimal = false;
      if (i + 1 < n && src[i] == '.' && std::isdigit(static_cast<unsigned char>(src[i + 1]))) {
        decimal = true;
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      }
      if (i < n && detail::ident_start(static_cast<unsigned char>(src[i])))
        throw SyntaxError(i, "operator or delimiter", std::string(1, src[i]));
      push(decimal ? TokenKind::Decimal : TokenKind::Integer, std::string(src.substr(start, i - start)),
           start);
      continue;
    }
    if (c == '\'' || c == '"' || c == '`') {
      const char q = static_cast<char>(c);
      std::string content;
      ++i;
      bool closed = false;
      while (i < n) {
        if (src[i] == q) {
          if (i + 1 < n && src[i + 1] == q) {  // doubled quote escapes itself
            content.push_back(q);
            i += 2;
            continue;
          }
          ++i;
          closed = true;
          break;
        }
        content.push_back(src[i++]);
      }
      if (!closed) throw SyntaxError(start, std::string("closing ") + q, std::string(src.substr(start)));
      if (q == '`') {
        if (content.empty()) throw SyntaxError(start, "identifier", "``");
        push(TokenKind::Identifier, std::move(content), start, q);
      } else {
        push(TokenKind::String, std::move(content), start, q);
      }
      continue;
    }
    ++i;
    switch (c) {
      case '(': push(TokenKind::LParen, "(", start); continue;
      case ')': push(TokenKind::RParen, ")", start); continue;
      case ',': push(TokenKind::Comma, ",", start); continue;
      case '.': push(TokenKind::Dot, ".", start); continue;
      case ';': push(TokenKind::Semicolon, ";", start); continue;
      case '+': case '-': case '*': case '/':
        push(TokenKind::Operator, std::string(1, static_cast<char>(c)), start);
        continue;
      case '=':
        if (i < n && src[i] == '=') ++i;
        push(TokenKind::Operator, std::string(src.substr(start, i - start)), start);
        continue;
      case '!':
        if (i < n && src[i] == '=') {
          ++i;
          push(TokenKind::Operator, "!=", start);
          continue;
        }
        break;
      case '<':
        if (i < n && (src[i] == '=' || src[i] == '>')) ++i;
        push(TokenKind::Operator, std::string(src.substr(start, i - start)), start);
        continue;
      case '>':
        if (i < n && src[i] == '=') ++i;
        push(TokenKind::Operator, std::string(src.substr(start, i - start)), start);
        continue;
      default:
        break;
    }
    throw SyntaxError(start, "token", std::string(1, static_cast<char>(c)));
  }
  out.push_back(Token{TokenKind::End, "", n, 0, 0});
  return out;
}

}  // namespace finsql::sql
