#pragma once

#include <string>
#include <string_view>

#include "finsql/sql_ast.hpp"
#include "finsql/sql_lexer.hpp"

namespace finsql::sql {

namespace detail {

inline bool needs_quoting(std::string_view ident) {
  if (ident.empty() || !ident_start(static_cast<unsigned char>(ident[0]))) return true;
  for (unsigned char c : ident)
    if (!ident_char(c)) return true;
  return is_reserved(ident);
}

inline std::string render_identifier(std::string_view ident) {
  if (!needs_quoting(ident)) return std::string(ident);
  std::string out = "`";
  for (char c : ident) {
    out.push_back(c);
    if (c == '`') out.push_back('`');
  }
  out.push_back('`');
  return out;
}

inline int precedence(const Expr& e) {
  if (e.kind != ExprKind::Arithmetic) return 3;
  return (e.name == "+" || e.name == "-") ? 1 : 2;
}

}  // namespace detail

std::string render_sql(const SelectStmt& stmt);

inline std::string render_expr(const Expr& e) {
  switch (e.kind) {
    case ExprKind::Column:
      return e.qualifier.empty() ? detail::render_identifier(e.name)
                                 : detail::render_identifier(e.qualifier) + "." + detail::render_identifier(e.name);
    case ExprKind::Star:
      return e.qualifier.empty() ? "*" : detail::render_identifier(e.qualifier) + ".*";
    case ExprKind::Literal: {
      if (e.literal != LiteralKind::String) return e.value;
      std::string out(1, e.quote);
      for (char c : e.value) {
        out.push_back(c);
        if (c == e.quote) out.push_back(c);
      }
      out.push_back(e.quote);
      return out;
    }
    case ExprKind::Aggregate:
      return e.name + "(" + (e.distinct ? "DISTINCT " : "") + render_expr(e.args.at(0)) + ")";
    case ExprKind::Arithmetic: {
      const int prec = detail::precedence(e);
      std::string lhs = render_expr(e.args.at(0));
      std::string rhs = render_expr(e.args.at(1));
      if (detail::precedence(e.args[0]) < prec) lhs = "(" + lhs + ")";
      if (detail::precedence(e.args[1]) <= prec) rhs = "(" + rhs + ")";
      return lhs + " " + e.name + " " + rhs;
    }
  }
  return {};
}

inline std::string render_predicate(const Predicate& p) {
  auto operand = [&](std::size_t i) { return render_expr(p.operands.at(i)); };
  switch (p.kind) {
    case PredKind::And: {
      std::string out;
      for (std::size_t i = 0; i < p.children.size(); ++i) {
        if (i) out += " AND ";
        const auto& c = p.children[i];
        out += c.kind == PredKind::Or ? "(" + render_predicate(c) + ")" : render_predicate(c);
      }
      return out;
    }
    case PredKind::Or: {
      std::string out;
      for (std::size_t i = 0; i < p.children.size(); ++i) {
        if (i) out += " OR ";
        out += render_predicate(p.children[i]);
      }
      return out;
    }
    case PredKind::Not: {
      const auto& c = p.children.at(0);
      const bool compound = c.kind == PredKind::And || c.kind == PredKind::Or;
      return "NOT " + (compound ? "(" + render_predicate(c) + ")" : render_predicate(c));
    }
    case PredKind::Compare:
      return operand(0) + " " + p.op + " " + operand(1);
    case PredKind::InList: {
      std::string out = operand(0) + (p.negated ? " NOT IN (" : " IN (");
      for (std::size_t i = 1; i < p.operands.size(); ++i) {
        if (i > 1) out += ", ";
        out += operand(i);
      }
      return out + ")";
    }
    case PredKind::InSubquery:
      return operand(0) + (p.negated ? " NOT IN (" : " IN (") + render_sql(p.subquery.at(0)) + ")";
    case PredKind::Between:
      return operand(0) + (p.negated ? " NOT BETWEEN " : " BETWEEN ") + operand(1) + " AND " + operand(2);
    case PredKind::Like:
      return operand(0) + (p.negated ? " NOT LIKE " : " LIKE ") + operand(1);
    case PredKind::IsNull:
      return operand(0) + (p.negated ? " IS NOT NULL" : " IS NULL");
  }
  return {};
}

inline std::string render_table_ref(const TableRef& t) {
  std::string out = t.is_derived() ? "(" + render_sql(t.derived.front()) + ")" : detail::render_identifier(t.name);
  if (!t.alias.empty()) out += " AS " + detail::render_identifier(t.alias);
  return out;
}

// Single-line canonical text: uppercase keywords, lowercase aggregate
// names, single spaces, ", " list separators.
inline std::string render_sql(const SelectStmt& stmt) {
  std::string out = stmt.distinct ? "SELECT DISTINCT " : "SELECT ";
  for (std::size_t i = 0; i < stmt.select_items.size(); ++i) {
    if (i) out += ", ";
    out += render_expr(stmt.select_items[i].expr);
    if (!stmt.select_items[i].alias.empty()) out += " AS " + detail::render_identifier(stmt.select_items[i].alias);
  }
  out += " FROM ";
  for (std::size_t i = 0; i < stmt.from_tables.size(); ++i) {
    if (i) out += ", ";
    out += render_table_ref(stmt.from_tables[i]);
  }
  for (const auto& j : stmt.joins) {
    switch (j.type) {
      case JoinType::Inner: out += " JOIN "; break;
      case JoinType::Left: out += " LEFT JOIN "; break;
      case JoinType::Right: out += " RIGHT JOIN "; break;
    }
    out += render_table_ref(j.table) + " ON " + render_predicate(j.on);
  }
  if (stmt.where_clause) out += " WHERE " + render_predicate(*stmt.where_clause);
  if (!stmt.group_by.empty()) {
    out += " GROUP BY ";
    for (std::size_t i = 0; i < stmt.group_by.size(); ++i) {
      if (i) out += ", ";
      out += render_expr(stmt.group_by[i]);
    }
  }
  if (stmt.having) out += " HAVING " + render_predicate(*stmt.having);
  if (!stmt.order_by.empty()) {
    out += " ORDER BY ";
    for (std::size_t i = 0; i < stmt.order_by.size(); ++i) {
      if (i) out += ", ";
      out += render_expr(stmt.order_by[i].expr);
      if (stmt.order_by[i].direction == SortDirection::Asc) out += " ASC";
      if (stmt.order_by[i].direction == SortDirection::Desc) out += " DESC";
    }
  }
  if (stmt.limit) out += " LIMIT " + std::to_string(*stmt.limit);
  return out;
}

}  // namespace finsql::sql
