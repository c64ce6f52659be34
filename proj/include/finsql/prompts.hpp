#pragma once

#include <map>
#include <string>
#include <string_view>

#include "finsql/error.hpp"
#include "finsql/schema.hpp"
#include "finsql/schema_link.hpp"

namespace finsql::prompts {

// Built-in copies of the editable templates under data/prompts/.

inline constexpr std::string_view kInferTemplate =
    "You are an expert in financial databases. Write one SQLite SELECT query that answers the question, using only "
    "the tables and columns listed below.\n"
    "\n"
    "Database schema:\n"
    "{schema}\n"
    "\n"
    "Question: {question}\n"
    "SQL:\n";

inline constexpr std::string_view kCotTemplate =
    "You are given a question about a financial database, the database schema and the correct SQL query. Explain "
    "step by step how the SQL query is derived from the question and the schema, then write the final SQL query on "
    "its own line starting with \"SQL:\".\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "Schema:\n"
    "{schema}\n"
    "\n"
    "Golden SQL:\n"
    "{golden_sql}\n"
    "\n"
    "Example:\n"
    "{one_shot}\n"
    "\n"
    "Reasoning:\n";

inline constexpr std::string_view kCotOneShot =
    "Question: What is the total share capital of company 1 at the end of 2020?\n"
    "Reasoning: The question asks for total shares, which is the totalshares column of lc_sharestru. The company is "
    "identified by companycode = 1 and the reporting date is the enddate column, so we filter on enddate = "
    "'2020-12-31'.\n"
    "SQL: SELECT totalshares FROM lc_sharestru WHERE companycode = 1 AND enddate = '2020-12-31'\n";

inline constexpr std::string_view kSynonymTemplate =
    "Rewrite the last question in {count} different ways that keep exactly the same meaning. Write one rewrite per "
    "line and nothing else.\n"
    "\n"
    "Question: What was the closing price of security 600000 on 2021-06-30?\n"
    "Rewrites:\n"
    "How much did security 600000 close at on June 30, 2021?\n"
    "On 2021-06-30, what closing price did security 600000 record?\n"
    "Give the 2021-06-30 closing price of security 600000.\n"
    "\n"
    "Question: Which fund managers manage more than three funds?\n"
    "Rewrites:\n"
    "Which managers are in charge of over three funds?\n"
    "List the fund managers responsible for more than three funds.\n"
    "Who manages more than three funds?\n"
    "\n"
    "Question: {question}\n"
    "Rewrites:\n";

// Replaces each {name} with its value. Every placeholder must be bound to a
// non-empty value, otherwise MissingField names it.
inline std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const auto open = tmpl.find('{', i);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    out.append(tmpl.substr(i, open - i));
    const std::string name(tmpl.substr(open + 1, close - open - 1));
    auto it = vars.find(name);
    if (it == vars.end() || text::trim(it->second).empty()) throw MissingField(name);
    out += it->second;
    i = close + 1;
  }
  return out;
}

// One line per table, "table (description): column (description), ...",
// followed by the foreign keys.
inline std::string schema_text(const SchemaCatalog& schema) {
  std::string out;
  for (const auto& t : schema.tables) {
    if (!out.empty()) out += "\n";
    out += describe(t.name, t.description) + ":";
    bool first = true;
    for (const auto& c : t.columns) {
      out += (first ? " " : ", ") + describe(c.name, c.description);
      first = false;
    }
  }
  if (!schema.foreign_keys.empty()) {
    out += "\nForeign keys:";
    for (const auto& fk : schema.foreign_keys)
      out += "\n" + fk.from.table + "." + fk.from.column + " = " + fk.to.table + "." + fk.to.column;
  }
  return out;
}

inline std::string infer_prompt(std::string_view question, const SchemaCatalog& sub_schema,
                                std::string_view tmpl = kInferTemplate) {
  return fill(tmpl, {{"schema", schema_text(sub_schema)}, {"question", std::string(question)}});
}

}  // namespace finsql::prompts
