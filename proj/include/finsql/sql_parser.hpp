#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "finsql/error.hpp"
#include "finsql/sql_ast.hpp"
#include "finsql/sql_lexer.hpp"
#include "finsql/text.hpp"

namespace finsql::sql {

inline constexpr std::array<std::string_view, 5> kAggregateFunctions = {"count", "sum", "avg", "min", "max"};

inline bool is_aggregate_function(std::string_view name) {
  for (auto f : kAggregateFunctions)
    if (text::iequals(f, name)) return true;
  return false;
}

inline bool is_comparison_operator(std::string_view op) {
  return op == "=" || op == "!=" || op == "<>" || op == "<" || op == "<=" || op == ">" || op == ">=";
}

// Recursive-descent parser for the supported SELECT dialect:
//
//   select   := SELECT [DISTINCT] item {, item} FROM table {, table} {join}
//               [WHERE pred] [GROUP BY expr {, expr}] [HAVING pred]
//               [ORDER BY expr [ASC|DESC] {, ...}] [LIMIT integer]
//   item     := * | ident.* | expr [[AS] ident]
//   table    := ident [[AS] ident] | ( select ) [AS] ident
//   join     := [INNER | LEFT [OUTER] | RIGHT [OUTER]] JOIN table ON pred
//   pred     := conj {OR conj};  conj := neg {AND neg};  neg := NOT neg | atom
//   atom     := ( pred ) | expr cmp expr | expr [NOT] IN ( select | expr {, expr} )
//             | expr [NOT] BETWEEN expr AND expr | expr [NOT] LIKE expr | expr IS [NOT] NULL
//   expr     := term {(+|-) term};  term := factor {(*|/) factor}
//   factor   := literal | -number | NULL | ident[.ident] | agg([DISTINCT] expr | *) | ( expr )
class Parser {
 public:
  explicit Parser(std::string_view src) : tokens_(tokenize(src)) {}

  SqlAst parse_statement() {
    const Token& first = peek();
    if (first.kind == TokenKind::End) throw SyntaxError(first.offset, "SELECT", "");
    if (first.kind == TokenKind::Keyword &&
        (first.text == "INSERT" || first.text == "UPDATE" || first.text == "DELETE" ||
         first.text == "CREATE" || first.text == "DROP" || first.text == "ALTER"))
      throw UnsupportedConstruct("unsupported statement: " + first.text);
    SqlAst stmt = parse_select();
    if (peek().kind == TokenKind::Keyword && peek().text == "UNION")
      throw UnsupportedConstruct("unsupported construct: UNION");
    expect_end();
    return stmt;
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;

  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t i = std::min(pos_ + ahead, tokens_.size() - 1);
    return tokens_[i];
  }
  const Token& advance() {
    const Token& t = tokens_[pos_];
    if (pos_ + 1 < tokens_.size()) ++pos_;
    return t;
  }
  bool is_keyword(std::string_view kw, std::size_t ahead = 0) const {
    return peek(ahead).kind == TokenKind::Keyword && peek(ahead).text == kw;
  }
  bool accept_keyword(std::string_view kw) {
    if (!is_keyword(kw)) return false;
    advance();
    return true;
  }
  bool accept(TokenKind kind) {
    if (peek().kind != kind) return false;
    advance();
    return true;
  }
  [[noreturn]] void fail(std::string expected) const {
    const Token& t = peek();
    std::string found = t.kind == TokenKind::End ? "" : t.text;
    if (t.kind == TokenKind::String) found = std::string(1, t.quote) + t.text + t.quote;
    throw SyntaxError(t.offset, std::move(expected), std::move(found));
  }
  void expect_keyword(std::string_view kw) {
    if (!accept_keyword(kw)) fail(std::string(kw));
  }
  void expect(TokenKind kind, std::string_view what) {
    if (!accept(kind)) fail(std::string(what));
  }
  void expect_end() {
    if (peek().kind != TokenKind::End) fail("end of input");
  }
  std::string expect_identifier(std::string_view what = "identifier") {
    if (peek().kind != TokenKind::Identifier) fail(std::string(what));
    return advance().text;
  }

  SelectStmt parse_select() {
    SelectStmt stmt;
    expect_keyword("SELECT");
    stmt.distinct = accept_keyword("DISTINCT");
    do {
      stmt.select_items.push_back(parse_select_item());
    } while (accept(TokenKind::Comma));

    expect_keyword("FROM");
    do {
      stmt.from_tables.push_back(parse_table_ref());
    } while (accept(TokenKind::Comma));

    while (true) {
      JoinType type = JoinType::Inner;
      if (accept_keyword("INNER")) {
        type = JoinType::Inner;
      } else if (accept_keyword("LEFT")) {
        type = JoinType::Left;
        accept_keyword("OUTER");
      } else if (accept_keyword("RIGHT")) {
        type = JoinType::Right;
        accept_keyword("OUTER");
      } else if (!is_keyword("JOIN")) {
        break;
      }
      expect_keyword("JOIN");
      Join join;
      join.type = type;
      join.table = parse_table_ref();
      expect_keyword("ON");
      const std::size_t on_offset = peek().offset;
      join.on = parse_predicate();
      check_join_condition(join.on, on_offset);
      stmt.joins.push_back(std::move(join));
    }

    if (accept_keyword("WHERE")) stmt.where_clause = parse_predicate();
    if (accept_keyword("GROUP")) {
      expect_keyword("BY");
      do {
        stmt.group_by.push_back(parse_expr());
      } while (accept(TokenKind::Comma));
    }
    if (accept_keyword("HAVING")) stmt.having = parse_predicate();
    if (accept_keyword("ORDER")) {
      expect_keyword("BY");
      do {
        OrderItem item;
        item.expr = parse_expr();
        if (accept_keyword("ASC"))
          item.direction = SortDirection::Asc;
        else if (accept_keyword("DESC"))
          item.direction = SortDirection::Desc;
        stmt.order_by.push_back(std::move(item));
      } while (accept(TokenKind::Comma));
    }
    if (accept_keyword("LIMIT")) {
      if (peek().kind != TokenKind::Integer) fail("non-negative integer");
      const Token& t = advance();
      std::uint64_t value = 0;
      auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
      if (ec != std::errc{} || ptr != t.text.data() + t.text.size())
        throw SyntaxError(t.offset, "LIMIT value in range", t.text);
      stmt.limit = value;
    }
    return stmt;
  }

  static void check_join_condition(const Predicate& on, std::size_t offset) {
    auto is_atom = [](const Predicate& p) {
      return p.kind != PredKind::And && p.kind != PredKind::Or && p.kind != PredKind::Not;
    };
    if (is_atom(on)) return;
    if (on.kind == PredKind::And) {
      for (const auto& c : on.children)
        if (!is_atom(c)) throw SyntaxError(offset, "conjunction of join atoms", "nested OR/NOT");
      return;
    }
    throw SyntaxError(offset, "conjunction of join atoms", on.kind == PredKind::Or ? "OR" : "NOT");
  }

  SelectItem parse_select_item() {
    SelectItem item;
    if (peek().kind == TokenKind::Operator && peek().text == "*") {
      advance();
      item.expr = Expr::star();
      return item;
    }
    if (peek().kind == TokenKind::Identifier && peek(1).kind == TokenKind::Dot &&
        peek(2).kind == TokenKind::Operator && peek(2).text == "*") {
      std::string q = advance().text;
      advance();
      advance();
      item.expr = Expr::star(std::move(q));
      return item;
    }
    item.expr = parse_expr();
    if (accept_keyword("AS"))
      item.alias = expect_identifier("alias");
    else if (peek().kind == TokenKind::Identifier)
      item.alias = advance().text;
    return item;
  }

  TableRef parse_table_ref() {
    TableRef ref;
    if (peek().kind == TokenKind::LParen) {
      advance();
      if (!is_keyword("SELECT")) fail("SELECT");
      ref.derived.push_back(parse_select());
      expect(TokenKind::RParen, ")");
      accept_keyword("AS");
      ref.alias = expect_identifier("alias for derived table");
      return ref;
    }
    ref.name = expect_identifier("table name");
    if (peek().kind == TokenKind::Dot) fail("table alias or clause");
    if (accept_keyword("AS"))
      ref.alias = expect_identifier("alias");
    else if (peek().kind == TokenKind::Identifier)
      ref.alias = advance().text;
    return ref;
  }

  // ---- predicates --------------------------------------------------------

  Predicate parse_predicate() {
    Predicate first = parse_conjunction();
    if (!is_keyword("OR")) return first;
    Predicate node;
    node.kind = PredKind::Or;
    append_flat(node, std::move(first));
    while (accept_keyword("OR")) append_flat(node, parse_conjunction());
    return node;
  }

  Predicate parse_conjunction() {
    Predicate first = parse_negation();
    if (!is_keyword("AND")) return first;
    Predicate node;
    node.kind = PredKind::And;
    append_flat(node, std::move(first));
    while (accept_keyword("AND")) append_flat(node, parse_negation());
    return node;
  }

  static void append_flat(Predicate& parent, Predicate child) {
    if (child.kind == parent.kind) {
      for (auto& c : child.children) parent.children.push_back(std::move(c));
    } else {
      parent.children.push_back(std::move(child));
    }
  }

  Predicate parse_negation() {
    if (accept_keyword("NOT")) {
      Predicate node;
      node.kind = PredKind::Not;
      node.children.push_back(parse_negation());
      return node;
    }
    return parse_atom();
  }

  static bool starts_predicate_tail(const Token& t) {
    if (t.kind == TokenKind::Operator) return true;
    if (t.kind == TokenKind::Keyword)
      return t.text == "IN" || t.text == "BETWEEN" || t.text == "LIKE" || t.text == "IS" || t.text == "NOT";
    return false;
  }

  Predicate parse_atom() {
    if (peek().kind == TokenKind::LParen && !is_keyword("SELECT", 1)) {
      // "(" opens either a nested predicate or a parenthesised expression
      // such as "(a + b) > 3"; try the predicate reading first.
      const std::size_t saved = pos_;
      try {
        advance();
        Predicate inner = parse_predicate();
        expect(TokenKind::RParen, ")");
        if (!starts_predicate_tail(peek())) return inner;
      } catch (const SyntaxError&) {
      }
      pos_ = saved;
    }

    Expr lhs = parse_expr();
    Predicate p;
    const Token& t = peek();
    if (t.kind == TokenKind::Operator && is_comparison_operator(t.text)) {
      advance();
      p.kind = PredKind::Compare;
      p.op = t.text == "<>" ? "!=" : t.text;
      p.operands.push_back(std::move(lhs));
      p.operands.push_back(parse_expr());
      return p;
    }
    bool negated = false;
    if (is_keyword("NOT") && (is_keyword("IN", 1) || is_keyword("BETWEEN", 1) || is_keyword("LIKE", 1))) {
      advance();
      negated = true;
    }
    p.negated = negated;
    if (accept_keyword("IN")) {
      expect(TokenKind::LParen, "(");
      p.operands.push_back(std::move(lhs));
      if (is_keyword("SELECT")) {
        p.kind = PredKind::InSubquery;
        p.subquery.push_back(parse_select());
      } else {
        p.kind = PredKind::InList;
        do {
          p.operands.push_back(parse_expr());
        } while (accept(TokenKind::Comma));
      }
      expect(TokenKind::RParen, ")");
      return p;
    }
    if (accept_keyword("BETWEEN")) {
      p.kind = PredKind::Between;
      p.operands.push_back(std::move(lhs));
      p.operands.push_back(parse_expr());
      expect_keyword("AND");
      p.operands.push_back(parse_expr());
      return p;
    }
    if (accept_keyword("LIKE")) {
      p.kind = PredKind::Like;
      p.operands.push_back(std::move(lhs));
      p.operands.push_back(parse_expr());
      return p;
    }
    if (!negated && accept_keyword("IS")) {
      p.kind = PredKind::IsNull;
      p.negated = accept_keyword("NOT");
      expect_keyword("NULL");
      p.operands.push_back(std::move(lhs));
      return p;
    }
    fail("comparison operator, IN, BETWEEN, LIKE or IS");
  }

  // ---- expressions -------------------------------------------------------

  Expr parse_expr() {
    Expr lhs = parse_term();
    while (peek().kind == TokenKind::Operator && (peek().text == "+" || peek().text == "-")) {
      std::string op = advance().text;
      lhs = Expr::arithmetic(std::move(op), std::move(lhs), parse_term());
    }
    return lhs;
  }

  Expr parse_term() {
    Expr lhs = parse_factor();
    while (peek().kind == TokenKind::Operator && (peek().text == "*" || peek().text == "/")) {
      std::string op = advance().text;
      lhs = Expr::arithmetic(std::move(op), std::move(lhs), parse_factor());
    }
    return lhs;
  }

  Expr parse_factor() {
    const Token& t = peek();
    switch (t.kind) {
      case TokenKind::Integer:
        return Expr::literal_of(LiteralKind::Integer, advance().text);
      case TokenKind::Decimal:
        return Expr::literal_of(LiteralKind::Decimal, advance().text);
      case TokenKind::String: {
        const Token& s = advance();
        return Expr::literal_of(LiteralKind::String, s.text, s.quote);
      }
      case TokenKind::Operator:
        if (t.text == "-" && (peek(1).kind == TokenKind::Integer || peek(1).kind == TokenKind::Decimal) &&
            peek(1).offset == t.offset + 1) {
          advance();
          const Token& num = advance();
          return Expr::literal_of(num.kind == TokenKind::Integer ? LiteralKind::Integer : LiteralKind::Decimal,
                                  "-" + num.text);
        }
        break;
      case TokenKind::Keyword:
        if (t.text == "NULL") {
          advance();
          return Expr::literal_of(LiteralKind::Null, "NULL");
        }
        break;
      case TokenKind::LParen: {
        if (is_keyword("SELECT", 1)) throw UnsupportedConstruct("scalar subquery at offset " + std::to_string(t.offset));
        advance();
        Expr inner = parse_expr();
        expect(TokenKind::RParen, ")");
        return inner;
      }
      case TokenKind::Identifier: {
        if (peek(1).kind == TokenKind::LParen) {
          if (!is_aggregate_function(t.text))
            throw UnsupportedConstruct("unsupported function '" + t.text + "' at offset " + std::to_string(t.offset));
          std::string fn = text::to_lower(advance().text);
          advance();
          const bool distinct = accept_keyword("DISTINCT");
          Expr arg;
          if (!distinct && peek().kind == TokenKind::Operator && peek().text == "*") {
            advance();
            arg = Expr::star();
          } else {
            arg = parse_expr();
          }
          expect(TokenKind::RParen, ")");
          return Expr::aggregate(std::move(fn), std::move(arg), distinct);
        }
        std::string first = advance().text;
        if (accept(TokenKind::Dot)) return Expr::column(std::move(first), expect_identifier("column name"));
        return Expr::column({}, std::move(first));
      }
      default:
        break;
    }
    fail("expression");
  }
};

inline SqlAst parse_sql(std::string_view text) {
  if (text::trim(text).empty()) throw SyntaxError(0, "SELECT", "");
  return Parser(text).parse_statement();
}

}  // namespace finsql::sql
