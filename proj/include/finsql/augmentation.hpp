#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <sqlite3.h>

#include <nlohmann/json.hpp>

#include "finsql/error.hpp"
#include "finsql/llm_client.hpp"
#include "finsql/prompts.hpp"
#include "finsql/schema.hpp"
#include "finsql/sql_skeleton.hpp"
#include "finsql/text.hpp"

namespace finsql::augment {

struct Example {
  std::string id;
  std::string question;
  std::string sql;
  std::string db_id;
  bool operator==(const Example&) const = default;
};

enum class Variant { Cot, Synonym, Skeleton };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Cot: return "cot";
    case Variant::Synonym: return "synonym";
    case Variant::Skeleton: return "skeleton";
  }
  return "";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "cot") return Variant::Cot;
  if (s == "synonym") return Variant::Synonym;
  if (s == "skeleton") return Variant::Skeleton;
  throw Error("unknown variant '" + std::string(s) + "'");
}

struct Provenance {
  std::string source_id;
  std::string generator;
  bool operator==(const Provenance&) const = default;
};

struct AugmentedExample {
  Variant variant = Variant::Skeleton;
  std::string question;
  std::string target;
  std::string db_id;
  Provenance provenance;
  bool operator==(const AugmentedExample&) const = default;
};

// ---------------------------------------------------------------------------
// JSON lines
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Example& e) {
  j = {{"id", e.id}, {"question", e.question}, {"sql", e.sql}, {"db_id", e.db_id}};
}

inline void from_json(const nlohmann::json& j, Example& e) {
  for (const char* f : {"question", "sql", "db_id"})
    if (!j.contains(f) || !j.at(f).is_string() || text::trim(j.at(f).get<std::string>()).empty()) throw MissingField(f);
  e.id = j.value("id", "");
  e.question = j.at("question").get<std::string>();
  e.sql = j.at("sql").get<std::string>();
  e.db_id = j.at("db_id").get<std::string>();
}

inline void to_json(nlohmann::json& j, const AugmentedExample& a) {
  j = {{"variant", variant_name(a.variant)},
       {"question", a.question},
       {"target", a.target},
       {"db_id", a.db_id},
       {"provenance", {{"source_id", a.provenance.source_id}, {"generator", a.provenance.generator}}}};
}

inline void from_json(const nlohmann::json& j, AugmentedExample& a) {
  a.variant = parse_variant(j.at("variant").get<std::string>());
  a.question = j.at("question").get<std::string>();
  a.target = j.at("target").get<std::string>();
  a.db_id = j.at("db_id").get<std::string>();
  a.provenance.source_id = j.at("provenance").at("source_id").get<std::string>();
  a.provenance.generator = j.at("provenance").at("generator").get<std::string>();
}

// Examples without an id get "ex<line>" (1-based).
inline std::vector<Example> read_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<Example> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (text::trim(line).empty()) continue;
    Example e;
    try {
      e = nlohmann::json::parse(line).get<Example>();
    } catch (const nlohmann::json::exception& err) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + err.what());
    }
    if (e.id.empty()) e.id = "ex" + std::to_string(n);
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
void write_jsonl(std::ostream& out, const std::vector<T>& records) {
  for (const auto& r : records) out << nlohmann::json(r).dump() << "\n";
}

template <typename T>
std::vector<T> read_jsonl(std::istream& in) {
  std::vector<T> out;
  std::string line;
  while (std::getline(in, line))
    if (!text::trim(line).empty()) out.push_back(nlohmann::json::parse(line).get<T>());
  return out;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

using Value = std::variant<std::monostate, std::int64_t, double, std::string>;
using Row = std::vector<Value>;

struct ResultSet {
  std::vector<std::string> columns;
  std::vector<Row> rows;
  bool empty() const { return rows.empty(); }
};

class ExecutionEngine {
 public:
  virtual ~ExecutionEngine() = default;
  virtual ResultSet execute(const std::string& sql, const std::string& db_id) = 0;
};

inline constexpr double kFloatTolerance = 1e-9;

inline bool values_equal(const Value& a, const Value& b) {
  const auto numeric = [](const Value& v) -> std::optional<double> {
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&v)) return *d;
    return std::nullopt;
  };
  const auto x = numeric(a);
  const auto y = numeric(b);
  if (x && y) {
    if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b))
      return std::get<std::int64_t>(a) == std::get<std::int64_t>(b);
    return std::fabs(*x - *y) <= kFloatTolerance;
  }
  return a == b;
}

inline bool rows_equal(const Row& a, const Row& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!values_equal(a[i], b[i])) return false;
  return true;
}

// Multiset of rows; columns compared by position, names ignored.
inline bool results_equal(const ResultSet& a, const ResultSet& b) {
  if (a.rows.size() != b.rows.size()) return false;
  std::vector<bool> used(b.rows.size(), false);
  for (const auto& ra : a.rows) {
    bool matched = false;
    for (std::size_t j = 0; j < b.rows.size() && !matched; ++j) {
      if (!used[j] && rows_equal(ra, b.rows[j])) used[j] = matched = true;
    }
    if (!matched) return false;
  }
  return true;
}

// In-memory SQLite database populated from a SQL script.
class SqliteEngine : public ExecutionEngine {
 public:
  SqliteEngine(std::string db_id, const std::string& script) : db_id_(std::move(db_id)) {
    if (sqlite3_open(":memory:", &db_) != SQLITE_OK) throw ExecutionError("cannot open in-memory database");
    char* err = nullptr;
    if (sqlite3_exec(db_, script.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      sqlite3_close(db_);
      throw ExecutionError("fixture script failed: " + msg);
    }
  }

  static SqliteEngine from_file(std::string db_id, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read database script " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return SqliteEngine(std::move(db_id), ss.str());
  }

  SqliteEngine(SqliteEngine&& o) noexcept : db_id_(std::move(o.db_id_)), db_(o.db_) { o.db_ = nullptr; }
  SqliteEngine(const SqliteEngine&) = delete;
  SqliteEngine& operator=(const SqliteEngine&) = delete;
  SqliteEngine& operator=(SqliteEngine&&) = delete;
  ~SqliteEngine() override {
    if (db_) sqlite3_close(db_);
  }

  const std::string& db_id() const { return db_id_; }

  ResultSet execute(const std::string& sql, const std::string& db_id) override {
    if (!db_id.empty() && db_id != db_id_) throw ExecutionError("unknown database '" + db_id + "'");
    std::lock_guard lock(mutex_);
    sqlite3_stmt* stmt = nullptr;
    const char* tail = nullptr;
    if (sqlite3_prepare_v2(db_, sql.c_str(), -1, &stmt, &tail) != SQLITE_OK)
      throw ExecutionError(sqlite3_errmsg(db_));
    struct Finalize {
      sqlite3_stmt* s;
      ~Finalize() { sqlite3_finalize(s); }
    } fin{stmt};
    if (stmt == nullptr) throw ExecutionError("empty statement");
    if (!text::trim(tail ? std::string_view(tail) : std::string_view{}).empty() &&
        text::trim(tail) != ";")
      throw ExecutionError("only one statement may be executed");
    if (!sqlite3_stmt_readonly(stmt)) throw ExecutionError("statement modifies the database");

    ResultSet rs;
    const int ncol = sqlite3_column_count(stmt);
    for (int c = 0; c < ncol; ++c) rs.columns.emplace_back(sqlite3_column_name(stmt, c));
    for (;;) {
      const int rc = sqlite3_step(stmt);
      if (rc == SQLITE_DONE) break;
      if (rc != SQLITE_ROW) throw ExecutionError(sqlite3_errmsg(db_));
      Row row;
      row.reserve(ncol);
      for (int c = 0; c < ncol; ++c) {
        switch (sqlite3_column_type(stmt, c)) {
          case SQLITE_INTEGER: row.emplace_back(static_cast<std::int64_t>(sqlite3_column_int64(stmt, c))); break;
          case SQLITE_FLOAT: row.emplace_back(sqlite3_column_double(stmt, c)); break;
          case SQLITE_NULL: row.emplace_back(std::monostate{}); break;
          default: {
            const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, c));
            row.emplace_back(std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt, c))));
          }
        }
      }
      rs.rows.push_back(std::move(row));
    }
    return rs;
  }

 private:
  std::string db_id_;
  sqlite3* db_ = nullptr;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Chain-of-thought with execution self-check
// ---------------------------------------------------------------------------

inline std::string build_cot_prompt(const Example& ex, std::string_view schema_text,
                                    std::string_view one_shot = prompts::kCotOneShot,
                                    std::string_view tmpl = prompts::kCotTemplate) {
  return prompts::fill(tmpl, {{"question", ex.question},
                              {"schema", std::string(schema_text)},
                              {"golden_sql", ex.sql},
                              {"one_shot", std::string(text::trim(one_shot))}});
}

enum class CotStatus { Success, Rejected, Skipped, GenerationError };

inline std::string_view status_name(CotStatus s) {
  switch (s) {
    case CotStatus::Success: return "success";
    case CotStatus::Rejected: return "rejected";
    case CotStatus::Skipped: return "skipped";
    case CotStatus::GenerationError: return "generation-error";
  }
  return "";
}

struct CotOutcome {
  CotStatus status = CotStatus::Skipped;
  std::optional<AugmentedExample> example;  // Success only
  std::string generated_sql;                // Success and Rejected
  std::string reason;

  static CotOutcome success(AugmentedExample ex, std::string sql) {
    return {CotStatus::Success, std::move(ex), std::move(sql), ""};
  }
  static CotOutcome rejected(std::string sql, std::string reason = "execution-mismatch") {
    return {CotStatus::Rejected, std::nullopt, std::move(sql), std::move(reason)};
  }
  static CotOutcome skipped() { return {CotStatus::Skipped, std::nullopt, "", "empty-execution"}; }
  static CotOutcome generation_error(std::string why) {
    return {CotStatus::GenerationError, std::nullopt, "", std::move(why)};
  }
};

struct CotSettings {
  std::string one_shot = std::string(prompts::kCotOneShot);
  std::string prompt_template = std::string(prompts::kCotTemplate);
  double temperature = 0.0;
  std::size_t max_tokens = 1024;
  std::string generator = "cot";
};

// Golden SQL runs first; an empty result skips the example before the model
// is asked anything. LLM failures become GenerationError outcomes; a
// response with no SQL throws ExtractionError; a generated query that fails
// to execute counts as a mismatch.
inline CotOutcome generate_cot(const Example& ex, std::string_view schema_text, llm::CompletionBackend& model,
                               ExecutionEngine& engine, const CotSettings& settings = {}) {
  const ResultSet golden = engine.execute(ex.sql, ex.db_id);
  if (golden.empty()) return CotOutcome::skipped();

  llm::CompletionRequest req;
  req.prompt = build_cot_prompt(ex, schema_text, settings.one_shot, settings.prompt_template);
  req.temperature = settings.temperature;
  req.max_tokens = settings.max_tokens;
  std::string response;
  try {
    response = model.complete(req).samples.at(0);
  } catch (const LlmError& e) {
    return CotOutcome::generation_error(e.what());
  }
  const auto sql = llm::extract_sql(response);
  if (!sql) throw ExtractionError("no SQL found in model response for example '" + ex.id + "'");

  ResultSet generated;
  try {
    generated = engine.execute(*sql, ex.db_id);
  } catch (const ExecutionError&) {
    return CotOutcome::rejected(*sql, "execution-error");
  }
  if (!results_equal(golden, generated)) return CotOutcome::rejected(*sql);

  AugmentedExample out{Variant::Cot, ex.question, std::string(text::trim(response)), ex.db_id, {ex.id, settings.generator}};
  return CotOutcome::success(std::move(out), *sql);
}

// Outcomes come back in input order whatever the parallelism. Unextractable
// responses are recorded as Rejected("extraction-error").
inline std::vector<CotOutcome> generate_cot_batch(const std::vector<Example>& examples, std::string_view schema_text,
                                                  llm::CompletionBackend& model, ExecutionEngine& engine,
                                                  std::size_t parallelism = 1, const CotSettings& settings = {}) {
  const auto one = [&](const Example& ex) {
    try {
      return generate_cot(ex, schema_text, model, engine, settings);
    } catch (const ExtractionError&) {
      return CotOutcome::rejected("", "extraction-error");
    }
  };
  std::vector<CotOutcome> out;
  out.reserve(examples.size());
  if (parallelism <= 1) {
    for (const auto& ex : examples) out.push_back(one(ex));
    return out;
  }
  for (std::size_t start = 0; start < examples.size(); start += parallelism) {
    const std::size_t end = std::min(examples.size(), start + parallelism);
    std::vector<std::future<CotOutcome>> wave;
    for (std::size_t i = start; i < end; ++i) wave.push_back(std::async(std::launch::async, one, std::cref(examples[i])));
    for (auto& f : wave) out.push_back(f.get());
  }
  return out;
}

struct AugmentationStats {
  std::size_t success = 0;
  std::size_t failure = 0;
  std::size_t empty = 0;
  double success_pct = 0.0;
  double failure_pct = 0.0;
  double empty_pct = 0.0;
};

// Percentages to two decimals, rounded by largest remainder so a non-empty
// set always sums to exactly 100.00. GenerationError counts as failure.
inline AugmentationStats augmentation_stats(const std::vector<CotOutcome>& outcomes) {
  AugmentationStats s;
  for (const auto& o : outcomes) {
    switch (o.status) {
      case CotStatus::Success: ++s.success; break;
      case CotStatus::Skipped: ++s.empty; break;
      default: ++s.failure;
    }
  }
  const std::uint64_t total = outcomes.size();
  if (total == 0) return s;
  const std::array<std::uint64_t, 3> counts = {s.success, s.failure, s.empty};
  std::array<std::uint64_t, 3> hundredths{};
  std::array<std::uint64_t, 3> rem{};
  std::uint64_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    hundredths[i] = counts[i] * 10000 / total;
    rem[i] = counts[i] * 10000 % total;
    assigned += hundredths[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::uint64_t k = 0; assigned + k < 10000; ++k) ++hundredths[order[k]];
  s.success_pct = hundredths[0] / 100.0;
  s.failure_pct = hundredths[1] / 100.0;
  s.empty_pct = hundredths[2] / 100.0;
  return s;
}

inline nlohmann::json to_json(const AugmentationStats& s) {
  return {{"success_pct", s.success_pct},
          {"failure_pct", s.failure_pct},
          {"empty_pct", s.empty_pct},
          {"counts", {{"success", s.success}, {"failure", s.failure}, {"empty", s.empty}}}};
}

// ---------------------------------------------------------------------------
// Synonymous questions
// ---------------------------------------------------------------------------

inline std::string normalize_question(std::string_view q) { return text::normalize_space(q); }

inline std::string collapse_space(std::string_view s) {
  std::string out;
  for (unsigned char c : text::trim(s)) {
    if (std::isspace(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

// Drops list markers such as "1.", "2)", "-", "*".
inline std::string_view strip_list_marker(std::string_view line) {
  line = text::trim(line);
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return text::trim(line.substr(i + 1));
  if (!line.empty() && (line[0] == '-' || line[0] == '*')) return text::trim(line.substr(1));
  return line;
}

inline std::vector<std::string> parse_synonyms(std::string_view response, std::string_view question, std::size_t count) {
  const std::string original = normalize_question(question);
  std::set<std::string> seen{original};
  std::vector<std::string> out;
  for (const auto& raw : text::split_lines(response)) {
    if (out.size() >= count) break;
    const std::string line = collapse_space(strip_list_marker(raw));
    if (line.empty()) continue;
    if (!seen.insert(normalize_question(line)).second) continue;
    out.push_back(line);
  }
  if (out.empty()) throw EmptyGeneration();
  return out;
}

inline constexpr std::size_t kDefaultSynonymCount = 3;

inline std::vector<std::string> generate_synonyms(const std::string& question, llm::CompletionBackend& model,
                                                  std::size_t count = kDefaultSynonymCount, double temperature = 0.7,
                                                  std::string_view tmpl = prompts::kSynonymTemplate) {
  if (count < 1) throw Error("synonym count must be at least 1");
  llm::CompletionRequest req;
  req.prompt = prompts::fill(tmpl, {{"count", std::to_string(count)}, {"question", question}});
  req.temperature = temperature;
  std::string response;
  try {
    response = model.complete(req).samples.at(0);
  } catch (const LlmError& e) {
    throw GenerationError(e.what());
  }
  return parse_synonyms(response, question, count);
}

// ---------------------------------------------------------------------------
// Skeleton-first targets
// ---------------------------------------------------------------------------

inline AugmentedExample make_skeleton_example(const Example& ex) {
  const auto skeleton = sql::extract_skeleton(ex.sql);
  return {Variant::Skeleton, ex.question, skeleton.text + "\n" + ex.sql, ex.db_id, {ex.id, "skeleton-rules"}};
}

// ---------------------------------------------------------------------------
// Task mixing
// ---------------------------------------------------------------------------

// Uniform in [0, bound) by rejection, so the sequence depends only on the
// engine output and not on the standard library's distributions.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % bound;
}

inline std::vector<AugmentedExample> mix_tasks(const std::vector<std::vector<AugmentedExample>>& datasets,
                                               std::uint64_t seed) {
  std::vector<AugmentedExample> out;
  for (const auto& d : datasets) out.insert(out.end(), d.begin(), d.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[uniform_below(rng, i)]);
  return out;
}

// ---------------------------------------------------------------------------
// Whole run, as driven by the CLI
// ---------------------------------------------------------------------------

struct AugmentOptions {
  std::set<Variant> tasks = {Variant::Cot, Variant::Synonym, Variant::Skeleton};
  std::uint64_t seed = 0;
  std::size_t synonym_count = kDefaultSynonymCount;
  std::size_t parallelism = 1;
  CotSettings cot;
};

struct AugmentResult {
  std::map<Variant, std::vector<AugmentedExample>> datasets;
  std::vector<CotOutcome> cot_outcomes;
  std::vector<std::string> synonym_failures;  // source ids with no usable rewrite
  std::vector<AugmentedExample> mixed;
};

inline AugmentResult run_augmentation(const std::vector<Example>& examples, const SchemaCatalog& schema,
                                      ExecutionEngine& engine, llm::CompletionBackend* model,
                                      const AugmentOptions& opts) {
  for (const auto& ex : examples)
    if (ex.db_id != schema.db_id) throw Error("example '" + ex.id + "' targets unknown database '" + ex.db_id + "'");
  const bool needs_model = opts.tasks.contains(Variant::Cot) || opts.tasks.contains(Variant::Synonym);
  if (needs_model && model == nullptr) throw Error("cot and synonym tasks need an LLM endpoint");

  AugmentResult r;
  if (opts.tasks.contains(Variant::Cot)) {
    r.cot_outcomes = generate_cot_batch(examples, prompts::schema_text(schema), *model, engine, opts.parallelism, opts.cot);
    auto& cot = r.datasets[Variant::Cot];
    for (const auto& o : r.cot_outcomes)
      if (o.example) cot.push_back(*o.example);
  }
  if (opts.tasks.contains(Variant::Synonym)) {
    auto& syn = r.datasets[Variant::Synonym];
    for (const auto& ex : examples) {
      try {
        for (auto& q : generate_synonyms(ex.question, *model, opts.synonym_count))
          syn.push_back({Variant::Synonym, std::move(q), ex.sql, ex.db_id, {ex.id, "synonym"}});
      } catch (const EmptyGeneration&) {
        r.synonym_failures.push_back(ex.id);
      }
    }
  }
  if (opts.tasks.contains(Variant::Skeleton)) {
    auto& sk = r.datasets[Variant::Skeleton];
    for (const auto& ex : examples) sk.push_back(make_skeleton_example(ex));
  }
  std::vector<std::vector<AugmentedExample>> parts;
  for (const auto& [v, d] : r.datasets) parts.push_back(d);
  r.mixed = mix_tasks(parts, opts.seed);
  return r;
}

}  // namespace finsql::augment
