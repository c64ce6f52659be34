#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finsql/error.hpp"
#include "finsql/text.hpp"

namespace finsql {

struct Column {
  std::string name;
  std::string description;
  std::string value_type;
  bool operator==(const Column&) const = default;
};

struct Table {
  std::string name;
  std::string description;
  std::vector<Column> columns;

  // Case-insensitive, like SQL identifiers.
  const Column* find_column(std::string_view col) const {
    for (const auto& c : columns)
      if (text::iequals(c.name, col)) return &c;
    return nullptr;
  }
  bool has_column(std::string_view col) const { return find_column(col) != nullptr; }
  bool operator==(const Table&) const = default;
};

struct ColumnRef {
  std::string table;
  std::string column;
  auto operator<=>(const ColumnRef&) const = default;
};

struct ForeignKey {
  ColumnRef from;
  ColumnRef to;
  bool operator==(const ForeignKey&) const = default;
};

// Database schema: tables with described columns plus foreign keys.
struct SchemaCatalog {
  std::string db_id;
  std::vector<Table> tables;
  std::vector<ForeignKey> foreign_keys;

  const Table* find_table(std::string_view name) const {
    for (const auto& t : tables)
      if (text::iequals(t.name, name)) return &t;
    return nullptr;
  }

  bool has_column_anywhere(std::string_view col) const {
    for (const auto& t : tables)
      if (t.has_column(col)) return true;
    return false;
  }

  // Tables that own a column with this name, in declaration order.
  std::vector<const Table*> owners_of(std::string_view col) const {
    std::vector<const Table*> out;
    for (const auto& t : tables)
      if (t.has_column(col)) out.push_back(&t);
    return out;
  }

  // Foreign keys joining the two tables (either direction), declaration order.
  std::vector<ForeignKey> foreign_keys_between(std::string_view a, std::string_view b) const {
    std::vector<ForeignKey> out;
    for (const auto& fk : foreign_keys) {
      const bool forward = text::iequals(fk.from.table, a) && text::iequals(fk.to.table, b);
      const bool backward = text::iequals(fk.from.table, b) && text::iequals(fk.to.table, a);
      if (forward || backward) out.push_back(fk);
    }
    return out;
  }

  std::size_t column_count() const {
    std::size_t n = 0;
    for (const auto& t : tables) n += t.columns.size();
    return n;
  }

  // Throws SchemaError naming the first violated invariant.
  void validate() const {
    std::set<std::string> table_names;
    for (const auto& t : tables) {
      if (t.name.empty()) throw SchemaError("table with empty name");
      if (!table_names.insert(text::to_lower(t.name)).second) throw SchemaError("duplicate table '" + t.name + "'");
      std::set<std::string> cols;
      for (const auto& c : t.columns) {
        if (c.name.empty()) throw SchemaError("empty column name in table '" + t.name + "'");
        if (!cols.insert(text::to_lower(c.name)).second)
          throw SchemaError("duplicate column '" + c.name + "' in table '" + t.name + "'");
      }
    }
    for (const auto& fk : foreign_keys) {
      for (const auto* end : {&fk.from, &fk.to}) {
        const Table* t = find_table(end->table);
        if (t == nullptr || !t->has_column(end->column))
          throw SchemaError("foreign key endpoint " + end->table + "." + end->column + " does not exist");
      }
    }
  }

  bool operator==(const SchemaCatalog&) const = default;
};

// ---------------------------------------------------------------------------
// JSON: {db_id, tables:[{name, description, columns:[{name, description,
// value_type}]}], foreign_keys:[{from:[t,c], to:[t,c]}]}
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Column& c) {
  j = {{"name", c.name}, {"description", c.description}, {"value_type", c.value_type}};
}
inline void from_json(const nlohmann::json& j, Column& c) {
  c.name = j.at("name").get<std::string>();
  c.description = j.value("description", "");
  c.value_type = j.value("value_type", "");
}
inline void to_json(nlohmann::json& j, const Table& t) {
  j = {{"name", t.name}, {"description", t.description}, {"columns", t.columns}};
}
inline void from_json(const nlohmann::json& j, Table& t) {
  t.name = j.at("name").get<std::string>();
  t.description = j.value("description", "");
  t.columns = j.value("columns", std::vector<Column>{});
}
inline void to_json(nlohmann::json& j, const ForeignKey& fk) {
  j = {{"from", {fk.from.table, fk.from.column}}, {"to", {fk.to.table, fk.to.column}}};
}
inline void from_json(const nlohmann::json& j, ForeignKey& fk) {
  const auto& f = j.at("from");
  const auto& t = j.at("to");
  if (!f.is_array() || f.size() != 2 || !t.is_array() || t.size() != 2)
    throw SchemaError("foreign key endpoints must be [table, column] pairs");
  fk.from = {f[0].get<std::string>(), f[1].get<std::string>()};
  fk.to = {t[0].get<std::string>(), t[1].get<std::string>()};
}
inline void to_json(nlohmann::json& j, const SchemaCatalog& s) {
  j = {{"db_id", s.db_id}, {"tables", s.tables}, {"foreign_keys", s.foreign_keys}};
}
inline void from_json(const nlohmann::json& j, SchemaCatalog& s) {
  s.db_id = j.value("db_id", "");
  s.tables = j.at("tables").get<std::vector<Table>>();
  s.foreign_keys = j.value("foreign_keys", std::vector<ForeignKey>{});
}

inline SchemaCatalog schema_from_json(const nlohmann::json& j) {
  SchemaCatalog s;
  try {
    s = j.get<SchemaCatalog>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema JSON: ") + e.what());
  }
  s.validate();
  return s;
}

inline SchemaCatalog load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("cannot parse schema file " + path + ": " + e.what());
  }
  return schema_from_json(j);
}

}  // namespace finsql
