#pragma once

#include <string>
#include <string_view>

#include "finsql/sql_ast.hpp"
#include "finsql/sql_parser.hpp"

namespace finsql::sql {

// Masking rules:
//   - every identifier, literal, star and arithmetic expression becomes "_"
//   - aggregate calls keep their function name: count(_), max(distinct _)
//   - each predicate atom becomes one "_"; IN-subqueries keep the subquery
//     skeleton: "_ in (select _ from _)"
//   - clause keywords, AND/OR/NOT, ASC/DESC and join kinds are kept in
//     lowercase; list items are separated by " , "
namespace detail {

std::string skeleton_of(const SelectStmt& stmt);

inline std::string skeleton_expr(const Expr& e) {
  if (e.kind == ExprKind::Aggregate) return e.name + (e.distinct ? "(distinct _)" : "(_)");
  return "_";
}

inline std::string skeleton_pred(const Predicate& p) {
  switch (p.kind) {
    case PredKind::And:
    case PredKind::Or: {
      std::string out;
      const char* sep = p.kind == PredKind::And ? " and " : " or ";
      for (std::size_t i = 0; i < p.children.size(); ++i) {
        if (i) out += sep;
        const auto& c = p.children[i];
        const bool wrap = p.kind == PredKind::And && c.kind == PredKind::Or;
        out += wrap ? "(" + skeleton_pred(c) + ")" : skeleton_pred(c);
      }
      return out;
    }
    case PredKind::Not: {
      const auto& c = p.children.at(0);
      const bool compound = c.kind == PredKind::And || c.kind == PredKind::Or;
      return "not " + (compound ? "(" + skeleton_pred(c) + ")" : skeleton_pred(c));
    }
    case PredKind::InSubquery:
      return std::string(p.negated ? "_ not in (" : "_ in (") + skeleton_of(p.subquery.at(0)) + ")";
    default:
      return "_";
  }
}

inline std::string skeleton_table(const TableRef& t) {
  return t.is_derived() ? "(" + skeleton_of(t.derived.front()) + ")" : "_";
}

inline std::string skeleton_of(const SelectStmt& stmt) {
  std::string out = stmt.distinct ? "select distinct " : "select ";
  for (std::size_t i = 0; i < stmt.select_items.size(); ++i) {
    if (i) out += " , ";
    out += skeleton_expr(stmt.select_items[i].expr);
  }
  out += " from ";
  for (std::size_t i = 0; i < stmt.from_tables.size(); ++i) {
    if (i) out += " , ";
    out += skeleton_table(stmt.from_tables[i]);
  }
  for (const auto& j : stmt.joins) {
    out += j.type == JoinType::Left ? " left join " : j.type == JoinType::Right ? " right join " : " join ";
    out += skeleton_table(j.table) + " on " + skeleton_pred(j.on);
  }
  if (stmt.where_clause) out += " where " + skeleton_pred(*stmt.where_clause);
  if (!stmt.group_by.empty()) {
    out += " group by ";
    for (std::size_t i = 0; i < stmt.group_by.size(); ++i) out += (i ? " , " : "") + skeleton_expr(stmt.group_by[i]);
  }
  if (stmt.having) out += " having " + skeleton_pred(*stmt.having);
  if (!stmt.order_by.empty()) {
    out += " order by ";
    for (std::size_t i = 0; i < stmt.order_by.size(); ++i) {
      if (i) out += " , ";
      out += skeleton_expr(stmt.order_by[i].expr);
      if (stmt.order_by[i].direction == SortDirection::Asc) out += " asc";
      if (stmt.order_by[i].direction == SortDirection::Desc) out += " desc";
    }
  }
  if (stmt.limit) out += " limit _";
  return out;
}

}  // namespace detail

struct SqlSkeleton {
  std::string text;
  bool operator==(const SqlSkeleton&) const = default;
};

inline SqlSkeleton extract_skeleton(const SqlAst& ast) { return {detail::skeleton_of(ast)}; }
inline SqlSkeleton extract_skeleton(std::string_view sql) { return extract_skeleton(parse_sql(sql)); }

}  // namespace finsql::sql
