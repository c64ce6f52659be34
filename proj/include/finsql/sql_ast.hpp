#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace finsql::sql {

enum class LiteralKind { Integer, Decimal, String, Null };

enum class ExprKind {
  Column,      // [qualifier.]name
  Star,        // [qualifier.]*
  Literal,
  Aggregate,   // name(args[0]) with optional DISTINCT
  Arithmetic,  // args[0] name args[1], name in + - * /
};

// Scalar expression. A single node type with a kind tag keeps the tree a
// plain value: copyable, comparable with ==, no ownership juggling.
struct Expr {
  ExprKind kind = ExprKind::Column;
  std::string qualifier;
  std::string name;
  LiteralKind literal = LiteralKind::Integer;
  std::string value;  // literal text; string literals hold the unquoted content
  char quote = '\'';
  bool distinct = false;
  std::vector<Expr> args;

  bool operator==(const Expr&) const = default;

  static Expr column(std::string qualifier, std::string name) {
    Expr e;
    e.kind = ExprKind::Column;
    e.qualifier = std::move(qualifier);
    e.name = std::move(name);
    return e;
  }
  static Expr star(std::string qualifier = {}) {
    Expr e;
    e.kind = ExprKind::Star;
    e.qualifier = std::move(qualifier);
    return e;
  }
  static Expr literal_of(LiteralKind kind, std::string value, char quote = '\'') {
    Expr e;
    e.kind = ExprKind::Literal;
    e.literal = kind;
    e.value = std::move(value);
    e.quote = quote;
    return e;
  }
  static Expr aggregate(std::string function, Expr arg, bool distinct = false) {
    Expr e;
    e.kind = ExprKind::Aggregate;
    e.name = std::move(function);
    e.distinct = distinct;
    e.args.push_back(std::move(arg));
    return e;
  }
  static Expr arithmetic(std::string op, Expr lhs, Expr rhs) {
    Expr e;
    e.kind = ExprKind::Arithmetic;
    e.name = std::move(op);
    e.args.push_back(std::move(lhs));
    e.args.push_back(std::move(rhs));
    return e;
  }
};

enum class PredKind { And, Or, Not, Compare, InList, InSubquery, Between, Like, IsNull };

struct SelectStmt;

// Boolean predicate tree. And/Or nodes are kept flat (no And directly under
// And, no Or directly under Or).
//
//   Compare     operands = {lhs, rhs}, op in = != < <= > >=
//   InList      operands = {probe, item...}
//   InSubquery  operands = {probe}, subquery = {stmt}
//   Between     operands = {probe, low, high}
//   Like        operands = {probe, pattern}
//   IsNull      operands = {probe}
//
// `negated` carries NOT IN / NOT BETWEEN / NOT LIKE / IS NOT NULL.
struct Predicate {
  PredKind kind = PredKind::Compare;
  std::string op;
  bool negated = false;
  std::vector<Expr> operands;
  std::vector<Predicate> children;
  std::vector<SelectStmt> subquery;

  bool operator==(const Predicate&) const;
};

struct SelectItem {
  Expr expr;
  std::string alias;
  bool operator==(const SelectItem&) const = default;
};

// A FROM entry: a base table, or a derived table when `derived` holds one
// statement (alias then mandatory).
struct TableRef {
  std::string name;
  std::string alias;
  std::vector<SelectStmt> derived;

  bool is_derived() const { return !derived.empty(); }
  // Name other clauses use to refer to this entry.
  const std::string& exposed_name() const { return alias.empty() ? name : alias; }
  bool operator==(const TableRef&) const;
};

enum class JoinType { Inner, Left, Right };

struct Join {
  JoinType type = JoinType::Inner;
  TableRef table;
  Predicate on;
  bool operator==(const Join&) const;
};

enum class SortDirection { Unspecified, Asc, Desc };

struct OrderItem {
  Expr expr;
  SortDirection direction = SortDirection::Unspecified;
  bool operator==(const OrderItem&) const = default;
};

struct SelectStmt {
  bool distinct = false;
  std::vector<SelectItem> select_items;
  std::vector<TableRef> from_tables;
  std::vector<Join> joins;
  std::optional<Predicate> where_clause;
  std::vector<Expr> group_by;
  std::optional<Predicate> having;
  std::vector<OrderItem> order_by;
  std::optional<std::uint64_t> limit;

  bool operator==(const SelectStmt&) const = default;
};

using SqlAst = SelectStmt;

inline bool Predicate::operator==(const Predicate& o) const {
  return kind == o.kind && op == o.op && negated == o.negated && operands == o.operands &&
         children == o.children && subquery == o.subquery;
}
inline bool TableRef::operator==(const TableRef& o) const {
  return name == o.name && alias == o.alias && derived == o.derived;
}
inline bool Join::operator==(const Join& o) const {
  return type == o.type && table == o.table && on == o.on;
}

// ---------------------------------------------------------------------------
// Traversal helpers
// ---------------------------------------------------------------------------

// Visits every expression node (pre-order) of a predicate, not descending
// into subqueries.
template <typename Fn>
void for_each_expr(Expr& e, Fn&& fn) {
  fn(e);
  for (auto& a : e.args) for_each_expr(a, fn);
}
template <typename Fn>
void for_each_expr(const Expr& e, Fn&& fn) {
  fn(e);
  for (const auto& a : e.args) for_each_expr(a, fn);
}

template <typename P, typename Fn>
void for_each_pred_expr(P& p, Fn&& fn) {
  for (auto& o : p.operands) for_each_expr(o, fn);
  for (auto& c : p.children) for_each_pred_expr(c, fn);
}

// Visits every expression of a statement's own scope: select list, join
// conditions, WHERE, GROUP BY, HAVING, ORDER BY. Subqueries are left to the
// caller so scoping stays explicit.
template <typename S, typename Fn>
void for_each_scope_expr(S& stmt, Fn&& fn) {
  for (auto& item : stmt.select_items) for_each_expr(item.expr, fn);
  for (auto& j : stmt.joins) for_each_pred_expr(j.on, fn);
  if (stmt.where_clause) for_each_pred_expr(*stmt.where_clause, fn);
  for (auto& g : stmt.group_by) for_each_expr(g, fn);
  if (stmt.having) for_each_pred_expr(*stmt.having, fn);
  for (auto& o : stmt.order_by) for_each_expr(o.expr, fn);
}

// Visits every nested statement directly owned by this statement (derived
// tables and IN-subqueries), one level deep.
template <typename P, typename Fn>
void for_each_pred_subquery(P& p, Fn&& fn) {
  for (auto& s : p.subquery) fn(s);
  for (auto& c : p.children) for_each_pred_subquery(c, fn);
}

template <typename S, typename Fn>
void for_each_subquery(S& stmt, Fn&& fn) {
  for (auto& t : stmt.from_tables)
    for (auto& d : t.derived) fn(d);
  for (auto& j : stmt.joins) {
    for (auto& d : j.table.derived) fn(d);
    for_each_pred_subquery(j.on, fn);
  }
  if (stmt.where_clause) for_each_pred_subquery(*stmt.where_clause, fn);
  if (stmt.having) for_each_pred_subquery(*stmt.having, fn);
}

}  // namespace finsql::sql
