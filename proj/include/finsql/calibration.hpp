#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finsql/error.hpp"
#include "finsql/schema.hpp"
#include "finsql/sql_ast.hpp"
#include "finsql/sql_components.hpp"
#include "finsql/sql_lexer.hpp"
#include "finsql/sql_parser.hpp"
#include "finsql/sql_render.hpp"
#include "finsql/text.hpp"

namespace finsql::calibration {

inline constexpr double kFuzzyThreshold = 0.5;

struct Fix {
  std::string kind;  // typo | join-condition | fuzzy-column | alignment
  std::string detail;
  bool low_confidence = false;
  bool operator==(const Fix&) const = default;
};

struct TypoFixResult {
  std::string sql;
  std::vector<Fix> fixes;
  bool unparseable = false;
  std::string error;  // parse error message when unparseable
};

// ---------------------------------------------------------------------------
// f1: typo repair
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::string_view kClauseWords[] = {"FROM", "WHERE", "AND", "OR", "ORDER", "GROUP", "LIMIT",
                                                    "HAVING", "JOIN", "ON", "LEFT", "RIGHT", "INNER"};

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Closes a literal left open at the end of the text. The literal is taken
// to end before the first clause keyword or closing parenthesis that
// follows it, or at the end of the text.
inline std::optional<std::string> close_unbalanced_quote(const std::string& sql, std::string& detail) {
  std::size_t open = std::string::npos;
  char quote = 0;
  for (std::size_t i = 0; i < sql.size(); ++i) {
    const char c = sql[i];
    if (quote == 0) {
      if (c == '\'' || c == '"') {
        quote = c;
        open = i;
      }
    } else if (c == quote) {
      if (i + 1 < sql.size() && sql[i + 1] == quote) {
        ++i;
      } else {
        quote = 0;
      }
    }
  }
  if (quote == 0) return std::nullopt;

  std::size_t end = sql.size();
  for (std::size_t i = open + 1; i < sql.size(); ++i) {
    if (sql[i] == ')') {
      end = i;
      break;
    }
    if (!std::isspace(static_cast<unsigned char>(sql[i]))) continue;
    std::size_t w = i;
    while (w < sql.size() && std::isspace(static_cast<unsigned char>(sql[w]))) ++w;
    std::size_t we = w;
    while (we < sql.size() && is_word_char(sql[we])) ++we;
    const std::string_view word(sql.data() + w, we - w);
    bool clause = false;
    for (auto kw : kClauseWords) clause = clause || text::iequals(word, kw);
    if (clause) {
      end = i;
      break;
    }
  }
  while (end > open + 1 && std::isspace(static_cast<unsigned char>(sql[end - 1]))) --end;
  std::string out = sql;
  out.insert(end, 1, quote);
  detail = "closed unterminated literal opened at offset " + std::to_string(open);
  return out;
}

struct Edit {
  std::size_t offset;
  std::size_t length;
  std::string replacement;
};

struct TableMention {
  std::string table;
  std::string exposed;
};

}  // namespace detail

// Repairs the typo classes LLMs produce in otherwise sensible SQL:
//   "==" -> "=", "<>" -> "!=", trailing semicolons, an unterminated string
//   literal, and JOIN without ON (filled from the foreign key linking the
//   joined table to an earlier one; several candidates -> the first in
//   declaration order, flagged low-confidence).
// Never throws: input that still does not parse comes back flagged.
inline TypoFixResult fix_typos(std::string_view raw, const SchemaCatalog& schema) {
  using namespace finsql::sql;
  TypoFixResult r;
  std::string sql(text::trim(raw));

  std::string quote_detail;
  if (auto closed = detail::close_unbalanced_quote(sql, quote_detail)) {
    sql = std::move(*closed);
    r.fixes.push_back({"typo", quote_detail, false});
  }

  std::vector<Token> tokens;
  try {
    tokens = tokenize(sql);
  } catch (const SyntaxError& e) {
    r.sql = sql;
    r.unparseable = true;
    r.error = e.what();
    return r;
  }

  std::vector<detail::Edit> edits;
  // Trailing semicolons.
  if (tokens.size() >= 2) {
    std::size_t i = tokens.size() - 1;  // End token
    while (i > 0 && tokens[i - 1].kind == TokenKind::Semicolon) {
      --i;
      edits.push_back({tokens[i].offset, tokens[i].length, ""});
      r.fixes.push_back({"typo", "removed trailing ';'", false});
    }
  }
  for (const auto& t : tokens) {
    if (t.kind != TokenKind::Operator) continue;
    if (t.text == "==") {
      edits.push_back({t.offset, t.length, "="});
      r.fixes.push_back({"typo", "replaced '==' with '=' at offset " + std::to_string(t.offset), false});
    } else if (t.text == "<>") {
      edits.push_back({t.offset, t.length, "!="});
      r.fixes.push_back({"typo", "normalized '<>' to '!=' at offset " + std::to_string(t.offset), false});
    }
  }

  // JOIN without ON. Table mentions are tracked per parenthesis depth so
  // subqueries keep their own FROM lists.
  std::map<int, std::vector<detail::TableMention>> mentions;
  int depth = 0;
  auto read_table = [&](std::size_t i, detail::TableMention& m) -> std::size_t {
    // tokens[i] is the table identifier; returns index after the optional alias
    m.table = tokens[i].text;
    m.exposed = m.table;
    std::size_t j = i + 1;
    if (tokens[j].kind == TokenKind::Keyword && tokens[j].text == "AS") ++j;
    if (tokens[j].kind == TokenKind::Identifier) {
      m.exposed = tokens[j].text;
      return j + 1;
    }
    return j;
  };
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (t.kind == TokenKind::LParen) ++depth;
    if (t.kind == TokenKind::RParen) {
      mentions.erase(depth);
      --depth;
    }
    if (t.kind == TokenKind::Keyword && t.text == "SELECT") mentions[depth].clear();
    const bool from_like = (t.kind == TokenKind::Keyword && t.text == "FROM") ||
                           (t.kind == TokenKind::Comma && !mentions[depth].empty());
    if (from_like && tokens[i + 1].kind == TokenKind::Identifier) {
      detail::TableMention m;
      read_table(i + 1, m);
      mentions[depth].push_back(m);
      continue;
    }
    if (!(t.kind == TokenKind::Keyword && t.text == "JOIN") || tokens[i + 1].kind != TokenKind::Identifier) continue;
    detail::TableMention joined;
    const std::size_t after = read_table(i + 1, joined);
    auto& earlier = mentions[depth];
    const bool has_on = tokens[after].kind == TokenKind::Keyword && tokens[after].text == "ON";
    if (!has_on) {
      std::vector<std::pair<ForeignKey, const detail::TableMention*>> options;
      for (const auto& fk : schema.foreign_keys) {
        for (const auto& e : earlier) {
          const bool fwd = text::iequals(fk.from.table, joined.table) && text::iequals(fk.to.table, e.table);
          const bool bwd = text::iequals(fk.to.table, joined.table) && text::iequals(fk.from.table, e.table);
          if (fwd || bwd) {
            options.emplace_back(fk, &e);
            break;
          }
        }
      }
      if (!options.empty()) {
        const auto& [fk, e] = options.front();
        const bool joined_is_from = text::iequals(fk.from.table, joined.table);
        const std::string& joined_col = joined_is_from ? fk.from.column : fk.to.column;
        const std::string& other_col = joined_is_from ? fk.to.column : fk.from.column;
        const std::string cond = " ON " + e->exposed + "." + other_col + " = " + joined.exposed + "." + joined_col;
        const Token& last = tokens[after - 1];
        edits.push_back({last.offset + last.length, 0, cond});
        r.fixes.push_back({"join-condition", "inserted" + cond + " from foreign key", options.size() > 1});
      }
    }
    earlier.push_back(joined);
  }

  std::sort(edits.begin(), edits.end(), [](const auto& a, const auto& b) { return a.offset > b.offset; });
  for (const auto& e : edits) sql.replace(e.offset, e.length, e.replacement);
  while (!sql.empty() && std::isspace(static_cast<unsigned char>(sql.back()))) sql.pop_back();
  r.sql = sql;

  try {
    parse_sql(r.sql);
  } catch (const Error& e) {
    r.unparseable = true;
    r.error = e.what();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Fuzzy column matching
// ---------------------------------------------------------------------------

struct ColumnMatch {
  ColumnRef column;
  std::size_t distance = 0;
};

// Schema column closest to `name` by Levenshtein distance (case-insensitive).
// Ties go to the lexicographically smaller column name, then to the table
// declared first.
inline ColumnMatch fuzzy_match_column(std::string_view name, const SchemaCatalog& schema) {
  const std::string needle = text::to_lower(name);
  std::optional<ColumnMatch> best;
  std::string best_name;
  for (const auto& t : schema.tables) {
    for (const auto& c : t.columns) {
      const std::string cand = text::to_lower(c.name);
      const std::size_t d = text::levenshtein(needle, cand);
      if (!best || d < best->distance || (d == best->distance && cand < best_name)) {
        best = ColumnMatch{{t.name, c.name}, d};
        best_name = cand;
      }
    }
  }
  if (!best) throw EmptySchema();
  return *best;
}

// ---------------------------------------------------------------------------
// Scope helpers shared by the schema filter, fuzzy repair and alignment
// ---------------------------------------------------------------------------

namespace detail {

struct ScopeTable {
  std::string exposed;
  std::string table;  // base table name as written; empty for derived tables
  const Table* schema_table = nullptr;
  bool derived = false;
};

struct Scope {
  std::vector<ScopeTable> tables;
  std::set<std::string> select_aliases;  // lowercase
  const Scope* parent = nullptr;

  const ScopeTable* lookup(std::string_view exposed) const {
    for (const auto& t : tables)
      if (text::iequals(t.exposed, exposed)) return &t;
    return parent ? parent->lookup(exposed) : nullptr;
  }
  bool has_derived() const {
    return std::any_of(tables.begin(), tables.end(), [](const ScopeTable& t) { return t.derived; });
  }
};

inline Scope make_scope(const sql::SelectStmt& s, const SchemaCatalog& schema, const Scope* parent) {
  Scope scope;
  scope.parent = parent;
  auto add = [&](const sql::TableRef& t) {
    ScopeTable st;
    st.exposed = t.exposed_name();
    st.derived = t.is_derived();
    if (!st.derived) {
      st.table = t.name;
      st.schema_table = schema.find_table(t.name);
    }
    scope.tables.push_back(std::move(st));
  };
  for (const auto& t : s.from_tables) add(t);
  for (const auto& j : s.joins) add(j.table);
  for (const auto& item : s.select_items)
    if (!item.alias.empty()) scope.select_aliases.insert(text::to_lower(item.alias));
  return scope;
}

// True when the column reference names something other than a schema
// column: a select alias or a column of a derived table.
inline bool is_virtual_column(const sql::Expr& e, const Scope& scope) {
  if (!e.qualifier.empty()) {
    const ScopeTable* t = scope.lookup(e.qualifier);
    return t != nullptr && t->derived;
  }
  return scope.select_aliases.count(text::to_lower(e.name)) > 0 || scope.has_derived();
}

// Calls fn(expr, scope) for every column reference of the statement and of
// all nested statements, each with its own scope.
template <typename Stmt, typename Fn>
void visit_columns(Stmt& s, const SchemaCatalog& schema, const Scope* parent, Fn&& fn) {
  const Scope scope = make_scope(s, schema, parent);
  for_each_scope_expr(s, [&](auto& e) {
    if (e.kind == sql::ExprKind::Column) fn(e, scope);
  });
  for (auto& t : s.from_tables)
    for (auto& d : t.derived) visit_columns(d, schema, nullptr, fn);
  for (auto& j : s.joins)
    for (auto& d : j.table.derived) visit_columns(d, schema, nullptr, fn);
  auto visit_pred = [&](auto& self, auto& p) -> void {
    for (auto& sub : p.subquery) visit_columns(sub, schema, &scope, fn);
    for (auto& c : p.children) self(self, c);
  };
  for (auto& j : s.joins) visit_pred(visit_pred, j.on);
  if (s.where_clause) visit_pred(visit_pred, *s.where_clause);
  if (s.having) visit_pred(visit_pred, *s.having);
}

}  // namespace detail

// Replaces column names absent from the schema with their closest schema
// column when the normalized insert/delete distance is within the
// threshold. Returns the fixes applied.
inline std::vector<Fix> repair_unknown_columns(sql::SqlAst& ast, const SchemaCatalog& schema,
                                               double threshold = kFuzzyThreshold) {
  std::vector<Fix> fixes;
  if (schema.column_count() == 0) return fixes;
  detail::visit_columns(ast, schema, nullptr, [&](sql::Expr& e, const detail::Scope& scope) {
    if (detail::is_virtual_column(e, scope) || schema.has_column_anywhere(e.name)) return;
    const auto match = fuzzy_match_column(e.name, schema);
    const double nd = text::normalized_indel_distance(text::to_lower(e.name), text::to_lower(match.column.column));
    if (nd > threshold) return;
    fixes.push_back({"fuzzy-column", "replaced unknown column '" + e.name + "' with '" + match.column.column + "'", false});
    e.name = match.column.column;
  });
  return fixes;
}

// Names of referenced columns that exist in no schema table.
inline std::vector<std::string> unknown_columns(const sql::SqlAst& ast, const SchemaCatalog& schema) {
  std::vector<std::string> out;
  detail::visit_columns(ast, schema, nullptr, [&](const sql::Expr& e, const detail::Scope& scope) {
    if (!detail::is_virtual_column(e, scope) && !schema.has_column_anywhere(e.name)) out.push_back(e.name);
  });
  return out;
}

// ---------------------------------------------------------------------------
// f3: align tables to columns
// ---------------------------------------------------------------------------

using TableScores = std::map<std::string, double>;

namespace detail {

class Aligner {
 public:
  Aligner(const SchemaCatalog& schema, const TableScores& scores, std::vector<Fix>& fixes)
      : schema_(schema), scores_(scores), fixes_(fixes) {}

  void align(sql::SelectStmt& s, const Scope* parent) {
    for (auto& t : s.from_tables)
      for (auto& d : t.derived) align(d, nullptr);
    for (auto& j : s.joins)
      for (auto& d : j.table.derived) align(d, nullptr);

    // Adding a table can make a previously unique column ambiguous, so the
    // pass repeats until the FROM list is stable.
    Scope scope;
    std::vector<std::string> added;
    do {
      for (const auto& name : added) attach(s, name);
      added.clear();
      scope = make_scope(s, schema_, parent);
      sql::for_each_scope_expr(s, [&](sql::Expr& e) {
        if (e.kind == sql::ExprKind::Column) align_column(e, scope, added);
      });
    } while (!added.empty());

    auto visit_pred = [&](auto& self, sql::Predicate& p) -> void {
      for (auto& sub : p.subquery) align(sub, &scope);
      for (auto& c : p.children) self(self, c);
    };
    for (auto& j : s.joins) visit_pred(visit_pred, j.on);
    if (s.where_clause) visit_pred(visit_pred, *s.where_clause);
    if (s.having) visit_pred(visit_pred, *s.having);
  }

 private:
  const SchemaCatalog& schema_;
  const TableScores& scores_;
  std::vector<Fix>& fixes_;

  // In-scope base table owning the column, FROM/JOIN order.
  static const ScopeTable* in_scope_owner(const Scope& scope, std::string_view col) {
    for (const auto& t : scope.tables)
      if (t.schema_table && t.schema_table->has_column(col)) return &t;
    return nullptr;
  }

  static std::size_t in_scope_owner_count(const Scope& scope, std::string_view col) {
    std::set<std::string> owners;
    for (const auto& t : scope.tables)
      if (t.schema_table && t.schema_table->has_column(col)) owners.insert(text::to_lower(t.exposed));
    return owners.size();
  }

  // Schema table to bring into scope for a column no in-scope table owns:
  // the best-scored owner, else the first declared.
  const Table* pick_owner(std::string_view col) const {
    const auto owners = schema_.owners_of(col);
    if (owners.empty()) return nullptr;
    const Table* best = owners.front();
    double best_score = -1.0;
    for (const Table* t : owners) {
      auto it = scores_.find(t->name);
      const double s = it == scores_.end() ? -1.0 : it->second;
      if (s > best_score) {
        best = t;
        best_score = s;
      }
    }
    return best;
  }

  // Adds a table to the scope (attached to the statement after traversal).
  const ScopeTable& bring_into_scope(Scope& scope, const Table* t, std::vector<std::string>& added) {
    for (const auto& st : scope.tables)
      if (st.schema_table == t) return st;
    scope.tables.push_back({t->name, t->name, t, false});
    added.push_back(t->name);
    return scope.tables.back();
  }

  void align_column(sql::Expr& e, Scope& scope, std::vector<std::string>& added) {
    const std::string before = sql::render_expr(e);
    if (!e.qualifier.empty()) {
      const ScopeTable* q = scope.lookup(e.qualifier);
      if (q != nullptr && q->derived) return;
      if (q != nullptr && q->schema_table && q->schema_table->has_column(e.name)) return;
      if (const ScopeTable* owner = in_scope_owner(scope, e.name)) {
        e.qualifier = owner->exposed;
      } else if (const Table* t = pick_owner(e.name)) {
        e.qualifier = bring_into_scope(scope, t, added).exposed;
      } else {
        return;
      }
      fixes_.push_back({"alignment", before + " -> " + sql::render_expr(e), false});
      return;
    }
    if (scope.select_aliases.count(text::to_lower(e.name))) return;
    const std::size_t owners = in_scope_owner_count(scope, e.name);
    if (owners == 1) return;
    if (owners > 1) {
      e.qualifier = in_scope_owner(scope, e.name)->exposed;
      fixes_.push_back({"alignment", "qualified ambiguous column " + before + " as " + sql::render_expr(e), false});
      return;
    }
    if (scope.has_derived()) return;
    for (const Scope* p = scope.parent; p != nullptr; p = p->parent)
      if (in_scope_owner(*p, e.name)) return;
    if (const Table* t = pick_owner(e.name)) {
      e.qualifier = bring_into_scope(scope, t, added).exposed;
      fixes_.push_back({"alignment", "added table " + t->name + " for column " + before, false});
    }
  }

  // Joins the added table through a foreign key to a table already in the
  // statement when one exists, otherwise lists it in FROM.
  void attach(sql::SelectStmt& s, const std::string& name) {
    std::vector<std::pair<std::string, std::string>> present;  // (table, exposed)
    for (const auto& t : s.from_tables)
      if (!t.is_derived()) present.emplace_back(t.name, t.exposed_name());
    for (const auto& j : s.joins)
      if (!j.table.is_derived()) present.emplace_back(j.table.name, j.table.exposed_name());
    for (const auto& fk : schema_.foreign_keys) {
      for (const auto& [table, exposed] : present) {
        const bool fwd = text::iequals(fk.from.table, name) && text::iequals(fk.to.table, table);
        const bool bwd = text::iequals(fk.to.table, name) && text::iequals(fk.from.table, table);
        if (!fwd && !bwd) continue;
        sql::Join j;
        j.type = sql::JoinType::Inner;
        j.table.name = name;
        j.on.kind = sql::PredKind::Compare;
        j.on.op = "=";
        j.on.operands.push_back(sql::Expr::column(exposed, fwd ? fk.to.column : fk.from.column));
        j.on.operands.push_back(sql::Expr::column(name, fwd ? fk.from.column : fk.to.column));
        s.joins.push_back(std::move(j));
        fixes_.push_back({"alignment", "joined table " + name + " via foreign key", false});
        return;
      }
    }
    s.from_tables.push_back({name, "", {}});
    fixes_.push_back({"alignment", "added table " + name + " to FROM", false});
  }
};

}  // namespace detail

struct AlignResult {
  sql::SqlAst ast;
  std::vector<Fix> fixes;
};

// Makes every column reference agree with the schema's table ownership:
// misattributed qualifiers move to an in-scope owner (or a schema owner
// brought into FROM), ambiguous unqualified columns get the first in-scope
// owner. Columns absent from the schema are left for the caller.
inline AlignResult align_tables_columns(sql::SqlAst ast, const SchemaCatalog& schema,
                                        const TableScores& table_scores = {}) {
  AlignResult r;
  detail::Aligner aligner(schema, table_scores, r.fixes);
  aligner.align(ast, nullptr);
  r.ast = std::move(ast);
  return r;
}

// Output contract check: parses, every column exists, every qualified
// reference names a table in scope that owns the column. Returns the
// violations found (empty when valid).
inline std::vector<std::string> validate_output(std::string_view sql_text, const SchemaCatalog& schema) {
  std::vector<std::string> problems;
  sql::SqlAst ast;
  try {
    ast = sql::parse_sql(sql_text);
  } catch (const Error& e) {
    problems.push_back(std::string("does not parse: ") + e.what());
    return problems;
  }
  detail::visit_columns(ast, schema, nullptr, [&](const sql::Expr& e, const detail::Scope& scope) {
    if (detail::is_virtual_column(e, scope)) return;
    if (!schema.has_column_anywhere(e.name)) {
      problems.push_back("unknown column " + sql::render_expr(e));
      return;
    }
    if (!e.qualifier.empty()) {
      const auto* t = scope.lookup(e.qualifier);
      if (t == nullptr) {
        problems.push_back("table for " + sql::render_expr(e) + " not in FROM/JOIN");
      } else if (!t->schema_table || !t->schema_table->has_column(e.name)) {
        problems.push_back("column " + sql::render_expr(e) + " not owned by its table");
      }
      return;
    }
    bool owned = false;
    for (const detail::Scope* s = &scope; s != nullptr && !owned; s = s->parent)
      for (const auto& t : s->tables) owned = owned || (t.schema_table && t.schema_table->has_column(e.name));
    if (!owned) problems.push_back("no table in FROM/JOIN owns column " + e.name);
  });
  return problems;
}

// ---------------------------------------------------------------------------
// Algorithm: repair -> components -> schema filter -> cluster -> pick -> align
// ---------------------------------------------------------------------------

struct CandidateSet {
  std::vector<std::string> candidates;
  const SchemaCatalog* schema = nullptr;
  TableScores table_scores;  // optional linker scores used by alignment
};

struct Cluster {
  std::string representative;
  std::vector<std::size_t> members;
  bool operator==(const Cluster&) const = default;
};

struct Dropped {
  std::size_t index = 0;
  std::string reason;
  bool operator==(const Dropped&) const = default;
};

struct CalibrationReport {
  std::string final_sql;
  std::vector<Cluster> clusters;
  std::vector<std::vector<Fix>> repairs;  // parallel to candidates
  std::vector<Dropped> dropped;
};

// First-fit clustering: each candidate joins the first cluster whose first
// member it is compatible with, otherwise opens a new cluster. Clusters are
// then stably sorted by size, largest first.
inline std::vector<std::vector<std::size_t>> cluster_candidates(
    const std::vector<std::pair<std::size_t, sql::SqlComponents>>& components) {
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<const sql::SqlComponents*> heads;
  for (const auto& [index, comp] : components) {
    bool placed = false;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      if (sql::components_compatible(comp, *heads[c])) {
        clusters[c].push_back(index);
        placed = true;
        break;
      }
    }
    if (!placed) {
      clusters.push_back({index});
      heads.push_back(&comp);
    }
  }
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return clusters;
}

inline CalibrationReport calibrate(const CandidateSet& cs) {
  if (cs.schema == nullptr) throw Error("candidate set has no schema");
  if (cs.candidates.empty()) throw Error("candidate set is empty");
  const SchemaCatalog& schema = *cs.schema;

  CalibrationReport report;
  report.repairs.resize(cs.candidates.size());
  std::vector<std::optional<sql::SqlAst>> repaired(cs.candidates.size());
  std::vector<std::pair<std::size_t, sql::SqlComponents>> surviving;

  for (std::size_t i = 0; i < cs.candidates.size(); ++i) {
    const std::string& raw = cs.candidates[i];
    if (text::trim(raw).empty()) {
      report.dropped.push_back({i, "empty: no SQL extracted"});
      continue;
    }
    auto typo = fix_typos(raw, schema);
    report.repairs[i] = typo.fixes;
    if (typo.unparseable) {
      report.dropped.push_back({i, "unparseable: " + typo.error});
      continue;
    }
    sql::SqlAst ast = sql::parse_sql(typo.sql);
    for (auto& f : repair_unknown_columns(ast, schema)) report.repairs[i].push_back(std::move(f));

    sql::SqlComponents comp;
    try {
      comp = sql::extract_components(ast, &schema);
    } catch (const UnresolvedAlias& e) {
      report.dropped.push_back({i, std::string("unresolved-alias: ") + e.what()});
      continue;
    }
    const auto unknown = unknown_columns(ast, schema);
    if (!unknown.empty()) {
      report.dropped.push_back({i, "schema-filter: unknown column '" + unknown.front() + "'"});
      continue;
    }
    repaired[i] = std::move(ast);
    surviving.emplace_back(i, std::move(comp));
  }
  if (surviving.empty()) throw AllCandidatesRejected();

  for (auto& members : cluster_candidates(surviving))
    report.clusters.push_back({sql::render_sql(*repaired[members.front()]), std::move(members)});

  const std::size_t winner = report.clusters.front().members.front();
  auto aligned = align_tables_columns(*repaired[winner], schema, cs.table_scores);
  for (auto& f : aligned.fixes) report.repairs[winner].push_back(std::move(f));
  report.final_sql = sql::render_sql(aligned.ast);
  return report;
}

inline nlohmann::json to_json(const Fix& f) {
  nlohmann::json j = {{"kind", f.kind}, {"detail", f.detail}};
  if (f.low_confidence) j["low_confidence"] = true;
  return j;
}

inline nlohmann::json to_json(const CalibrationReport& r) {
  nlohmann::json j;
  j["final_sql"] = r.final_sql;
  j["clusters"] = nlohmann::json::array();
  for (const auto& c : r.clusters)
    j["clusters"].push_back({{"representative", c.representative}, {"members", c.members}, {"size", c.members.size()}});
  j["repairs"] = nlohmann::json::array();
  for (const auto& fixes : r.repairs) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& f : fixes) list.push_back(to_json(f));
    j["repairs"].push_back(std::move(list));
  }
  j["dropped"] = nlohmann::json::array();
  for (const auto& d : r.dropped) j["dropped"].push_back({{"index", d.index}, {"reason", d.reason}});
  return j;
}

}  // namespace finsql::calibration
