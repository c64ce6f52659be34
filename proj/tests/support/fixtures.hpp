#pragma once

#include <string>

#include "finsql/schema.hpp"

namespace finsql::testsupport {

inline std::string data_path(const std::string& rel) { return std::string(FINSQL_DATA_DIR) + "/" + rel; }

inline const SchemaCatalog& finance_schema() {
  static const SchemaCatalog schema = load_schema(data_path("fixtures/finance_schema.json"));
  return schema;
}

}  // namespace finsql::testsupport
