#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "finsql/error.hpp"
#include "finsql/schema.hpp"
#include "finsql/sql_ast.hpp"
#include "finsql/sql_parser.hpp"
#include "finsql/text.hpp"

namespace finsql::sql {

struct JoinPair {
  std::string type;  // inner | left | right
  std::string lhs;   // lhs <= rhs lexicographically
  std::string rhs;
  auto operator<=>(const JoinPair&) const = default;
};

// Canonical keyword components of a query. Every field is either sorted
// (order-insensitive clauses) or kept in source order (ORDER BY), so two
// components are compatible exactly when they compare equal.
struct SqlComponents {
  bool distinct = false;
  std::vector<std::string> select_set;
  std::vector<std::string> table_set;
  std::vector<JoinPair> join_set;
  std::vector<std::string> where_atoms;
  std::vector<std::string> group_set;
  std::vector<std::string> having_atoms;
  std::vector<std::pair<std::string, std::string>> order_seq;
  std::optional<std::uint64_t> limit_value;
  std::vector<std::pair<std::string, std::string>> agg_set;

  bool operator==(const SqlComponents&) const = default;
};

inline bool components_compatible(const SqlComponents& a, const SqlComponents& b) { return a == b; }

// Canonical literal text: strings lose their quotes, numbers drop leading
// zeros, trailing fractional zeros and a negative sign on zero.
inline std::string normalize_literal(const Expr& e) {
  switch (e.literal) {
    case LiteralKind::Null:
      return "null";
    case LiteralKind::String:
      return "'" + e.value + "'";
    case LiteralKind::Integer:
    case LiteralKind::Decimal: {
      std::string_view v = e.value;
      bool negative = false;
      if (!v.empty() && v.front() == '-') {
        negative = true;
        v.remove_prefix(1);
      }
      std::string_view int_part = v;
      std::string_view frac_part;
      if (auto dot = v.find('.'); dot != std::string_view::npos) {
        int_part = v.substr(0, dot);
        frac_part = v.substr(dot + 1);
      }
      while (int_part.size() > 1 && int_part.front() == '0') int_part.remove_prefix(1);
      while (!frac_part.empty() && frac_part.back() == '0') frac_part.remove_suffix(1);
      std::string out(int_part.empty() ? "0" : int_part);
      if (!frac_part.empty()) out += "." + std::string(frac_part);
      if (negative && out != "0") out = "-" + out;
      return out;
    }
  }
  return e.value;
}

std::string components_to_string(const SqlComponents& c);

namespace detail {

struct ScopeEntry {
  std::string exposed;   // lowercase alias or table name
  std::string resolved;  // lowercase base table, or the alias for derived tables
  bool derived = false;
};

class ComponentBuilder {
 public:
  ComponentBuilder(const SchemaCatalog* schema, const ComponentBuilder* parent)
      : schema_(schema), parent_(parent) {}

  SqlComponents build(const SelectStmt& stmt) {
    declare(stmt);
    SqlComponents c;
    c.distinct = stmt.distinct;

    for (const auto& item : stmt.select_items) c.select_set.push_back(expr(item.expr));
    std::sort(c.select_set.begin(), c.select_set.end());
    // Aliases become visible to later clauses only.
    for (const auto& item : stmt.select_items)
      if (!item.alias.empty()) select_aliases_.emplace_back(text::to_lower(item.alias), expr(item.expr));

    auto add_table = [&](const TableRef& t) {
      if (t.is_derived()) {
        c.table_set.push_back("(" + subquery(t.derived.front()) + ")");
      } else {
        c.table_set.push_back(text::to_lower(t.name));
      }
    };
    for (const auto& t : stmt.from_tables) add_table(t);
    for (const auto& j : stmt.joins) add_table(j.table);
    std::sort(c.table_set.begin(), c.table_set.end());

    for (const auto& j : stmt.joins) {
      const std::string type = j.type == JoinType::Inner ? "inner" : j.type == JoinType::Left ? "left" : "right";
      std::vector<const Predicate*> atoms;
      if (j.on.kind == PredKind::And) {
        for (const auto& a : j.on.children) atoms.push_back(&a);
      } else {
        atoms.push_back(&j.on);
      }
      for (const Predicate* a : atoms) {
        if (a->kind == PredKind::Compare && a->op == "=" && a->operands[0].kind == ExprKind::Column &&
            a->operands[1].kind == ExprKind::Column) {
          std::string l = expr(a->operands[0]);
          std::string r = expr(a->operands[1]);
          if (r < l) std::swap(l, r);
          c.join_set.push_back({type, std::move(l), std::move(r)});
        } else {
          c.where_atoms.push_back((type == "inner" ? "" : type + " on: ") + pred(*a));
        }
      }
    }
    std::sort(c.join_set.begin(), c.join_set.end());
    c.join_set.erase(std::unique(c.join_set.begin(), c.join_set.end()), c.join_set.end());

    if (stmt.where_clause) conjuncts(*stmt.where_clause, c.where_atoms);
    std::sort(c.where_atoms.begin(), c.where_atoms.end());

    for (const auto& g : stmt.group_by) c.group_set.push_back(expr(g));
    std::sort(c.group_set.begin(), c.group_set.end());
    c.group_set.erase(std::unique(c.group_set.begin(), c.group_set.end()), c.group_set.end());

    if (stmt.having) conjuncts(*stmt.having, c.having_atoms);
    std::sort(c.having_atoms.begin(), c.having_atoms.end());

    for (const auto& o : stmt.order_by)
      c.order_seq.emplace_back(expr(o.expr), o.direction == SortDirection::Desc ? "desc" : "asc");
    c.limit_value = stmt.limit;

    auto collect_aggs = [&](const Expr& root) {
      for_each_expr(root, [&](const Expr& e) {
        if (e.kind == ExprKind::Aggregate)
          c.agg_set.emplace_back(e.name, (e.distinct ? "distinct " : "") + expr(e.args.at(0)));
      });
    };
    for (const auto& item : stmt.select_items) collect_aggs(item.expr);
    if (stmt.having) for_each_pred_expr(*stmt.having, [&](const Expr& e) {
        if (e.kind == ExprKind::Aggregate)
          c.agg_set.emplace_back(e.name, (e.distinct ? "distinct " : "") + expr(e.args.at(0)));
      });
    for (const auto& o : stmt.order_by) collect_aggs(o.expr);
    std::sort(c.agg_set.begin(), c.agg_set.end());
    c.agg_set.erase(std::unique(c.agg_set.begin(), c.agg_set.end()), c.agg_set.end());
    return c;
  }

 private:
  const SchemaCatalog* schema_;
  const ComponentBuilder* parent_;
  std::vector<ScopeEntry> entries_;
  std::vector<std::pair<std::string, std::string>> select_aliases_;

  void declare(const SelectStmt& stmt) {
    auto add = [&](const TableRef& t) {
      ScopeEntry e;
      e.exposed = text::to_lower(t.exposed_name());
      e.derived = t.is_derived();
      e.resolved = e.derived ? e.exposed : text::to_lower(t.name);
      entries_.push_back(std::move(e));
    };
    for (const auto& t : stmt.from_tables) add(t);
    for (const auto& j : stmt.joins) add(j.table);
  }

  const ScopeEntry* lookup(const std::string& exposed) const {
    for (const auto& e : entries_)
      if (e.exposed == exposed) return &e;
    return parent_ ? parent_->lookup(exposed) : nullptr;
  }

  // Unqualified column: the unique in-scope owner wins; otherwise the
  // enclosing scope is tried (correlated reference); otherwise bare name.
  std::optional<std::string> owner_of(const std::string& col) const {
    if (schema_ != nullptr) {
      std::vector<std::string> owners;
      for (const auto& e : entries_) {
        if (e.derived) continue;
        const Table* t = schema_->find_table(e.resolved);
        if (t != nullptr && t->has_column(col) &&
            std::find(owners.begin(), owners.end(), e.resolved) == owners.end())
          owners.push_back(e.resolved);
      }
      if (owners.size() == 1) return owners.front();
      if (owners.empty() && parent_ != nullptr) return parent_->owner_of(col);
      return std::nullopt;
    }
    if (entries_.size() == 1) return entries_.front().resolved;
    return std::nullopt;
  }

  std::string column(const Expr& e) const {
    const std::string col = text::to_lower(e.name);
    if (!e.qualifier.empty()) {
      const ScopeEntry* entry = lookup(text::to_lower(e.qualifier));
      if (entry == nullptr) throw UnresolvedAlias(e.qualifier);
      return entry->resolved + "." + col;
    }
    for (const auto& [alias, canon] : select_aliases_)
      if (alias == col) return canon;
    if (auto owner = owner_of(col)) return *owner + "." + col;
    return col;
  }

  std::string expr(const Expr& e) const {
    switch (e.kind) {
      case ExprKind::Column:
        return column(e);
      case ExprKind::Star: {
        if (e.qualifier.empty()) return "*";
        const ScopeEntry* entry = lookup(text::to_lower(e.qualifier));
        if (entry == nullptr) throw UnresolvedAlias(e.qualifier);
        return entry->resolved + ".*";
      }
      case ExprKind::Literal:
        return normalize_literal(e);
      case ExprKind::Aggregate:
        return e.name + "(" + (e.distinct ? "distinct " : "") + expr(e.args.at(0)) + ")";
      case ExprKind::Arithmetic:
        return "(" + expr(e.args.at(0)) + " " + e.name + " " + expr(e.args.at(1)) + ")";
    }
    return {};
  }

  std::string subquery(const SelectStmt& s) const {
    ComponentBuilder inner(schema_, this);
    return components_to_string(inner.build(s));
  }

  void conjuncts(const Predicate& p, std::vector<std::string>& out) const {
    if (p.kind == PredKind::And) {
      for (const auto& c : p.children) out.push_back(pred(c));
    } else {
      out.push_back(pred(p));
    }
  }

  std::string pred(const Predicate& p) const {
    const std::string neg = p.negated ? "not " : "";
    switch (p.kind) {
      case PredKind::And: {
        std::vector<std::string> parts;
        for (const auto& c : p.children) parts.push_back(pred(c));
        std::sort(parts.begin(), parts.end());
        std::string out = "(";
        for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? " and " : "") + parts[i];
        return out + ")";
      }
      case PredKind::Or: {
        std::string out = "(";
        for (std::size_t i = 0; i < p.children.size(); ++i) out += (i ? " or " : "") + pred(p.children[i]);
        return out + ")";
      }
      case PredKind::Not:
        return "not (" + pred(p.children.at(0)) + ")";
      case PredKind::Compare:
        return expr(p.operands[0]) + " " + p.op + " " + expr(p.operands[1]);
      case PredKind::InList: {
        std::vector<std::string> items;
        for (std::size_t i = 1; i < p.operands.size(); ++i) items.push_back(expr(p.operands[i]));
        std::sort(items.begin(), items.end());
        items.erase(std::unique(items.begin(), items.end()), items.end());
        std::string out = expr(p.operands[0]) + " " + neg + "in [";
        for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
        return out + "]";
      }
      case PredKind::InSubquery:
        return expr(p.operands[0]) + " " + neg + "in (" + subquery(p.subquery.at(0)) + ")";
      case PredKind::Between:
        return expr(p.operands[0]) + " " + neg + "between " + expr(p.operands[1]) + " and " + expr(p.operands[2]);
      case PredKind::Like:
        return expr(p.operands[0]) + " " + neg + "like " + expr(p.operands[1]);
      case PredKind::IsNull:
        return expr(p.operands[0]) + " is " + neg + "null";
    }
    return {};
  }
};

}  // namespace detail

// Extracts the canonical components of a query. With a schema, unqualified
// columns owned by exactly one in-scope table are qualified with it;
// without one, only single-table scopes qualify unqualified columns.
inline SqlComponents extract_components(const SqlAst& ast, const SchemaCatalog* schema = nullptr) {
  detail::ComponentBuilder builder(schema, nullptr);
  return builder.build(ast);
}

inline std::string components_to_string(const SqlComponents& c) {
  auto list = [](const std::vector<std::string>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
    return out + "]";
  };
  std::string out = c.distinct ? "select distinct " : "select ";
  out += list(c.select_set) + " from " + list(c.table_set);
  if (!c.join_set.empty()) {
    out += " join [";
    for (std::size_t i = 0; i < c.join_set.size(); ++i)
      out += (i ? ", " : "") + c.join_set[i].type + " " + c.join_set[i].lhs + " = " + c.join_set[i].rhs;
    out += "]";
  }
  if (!c.where_atoms.empty()) out += " where " + list(c.where_atoms);
  if (!c.group_set.empty()) out += " group " + list(c.group_set);
  if (!c.having_atoms.empty()) out += " having " + list(c.having_atoms);
  if (!c.order_seq.empty()) {
    out += " order [";
    for (std::size_t i = 0; i < c.order_seq.size(); ++i)
      out += (i ? ", " : "") + c.order_seq[i].first + " " + c.order_seq[i].second;
    out += "]";
  }
  if (c.limit_value) out += " limit " + std::to_string(*c.limit_value);
  return out;
}

}  // namespace finsql::sql
