#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "finsql/error.hpp"
#include "finsql/http.hpp"
#include "finsql/schema.hpp"
#include "finsql/text.hpp"

namespace finsql {

// ---------------------------------------------------------------------------
// Table blocks
// ---------------------------------------------------------------------------

struct TableBlock {
  std::string table;
  std::string description;
  std::vector<Column> columns;  // every column, whether or not it fit in `text`
  std::string text;             // serialised block, bounded by the token budget
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

inline constexpr std::size_t kDefaultBlockBudget = 512;

inline std::string describe(std::string_view name, std::string_view description) {
  if (description.empty()) return std::string(name);
  return std::string(name) + " (" + std::string(description) + ")";
}

// One block per table, in catalog order: "table (description): col (desc), ...".
// Column descriptors that would push the block over `budget` tokens are left
// out of the text (they stay in `columns`).
inline std::vector<TableBlock> build_table_blocks(const SchemaCatalog& schema,
                                                  std::size_t budget = kDefaultBlockBudget,
                                                  const TokenCounter& count = text::word_count) {
  std::vector<TableBlock> blocks;
  blocks.reserve(schema.tables.size());
  for (const auto& t : schema.tables) {
    TableBlock b{t.name, t.description, t.columns, describe(t.name, t.description) + ":"};
    bool first = true;
    for (const auto& c : t.columns) {
      std::string candidate = b.text + (first ? " " : ", ") + describe(c.name, c.description);
      if (count(candidate) > budget) break;
      b.text = std::move(candidate);
      first = false;
    }
    blocks.push_back(std::move(b));
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Scorers
// ---------------------------------------------------------------------------

struct BlockScore {
  double table_score = 0.0;
  std::vector<double> column_scores;  // parallel to TableBlock::columns
};

// Scores every block of a batch against the question. Implementations must
// be deterministic for fixed inputs and return scores in [0, 1].
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<BlockScore> score_batch(std::string_view question, std::span<const TableBlock> blocks) const = 0;
};

namespace detail {

inline std::string trigram_normalize(std::string_view s) {
  std::string out = " ";
  for (unsigned char c : s) {
    const bool keep = std::isalnum(c) || c == '_' || c >= 0x80;
    if (keep) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (out.back() != ' ') {
      out.push_back(' ');
    }
  }
  if (out.back() != ' ') out.push_back(' ');
  return out;
}

inline std::set<std::string> trigrams(std::string_view s) {
  const std::string norm = trigram_normalize(s);
  std::set<std::string> out;
  if (norm.size() < 3 || norm == " ") return out;
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) out.insert(norm.substr(i, 3));
  return out;
}

// Fraction of the target's trigrams that also occur in the question.
inline double coverage(const std::set<std::string>& question, std::string_view target) {
  const auto t = trigrams(target);
  if (t.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& g : t) hit += question.count(g);
  return static_cast<double>(hit) / static_cast<double>(t.size());
}

}  // namespace detail

// Character-trigram coverage: each item scores the fraction of its name's
// (or description's, whichever is higher) trigrams found in the question.
inline BlockScore lexical_score(std::string_view question, const TableBlock& block) {
  const auto q = detail::trigrams(question);
  BlockScore s;
  s.table_score = std::max(detail::coverage(q, block.table), detail::coverage(q, block.description));
  s.column_scores.reserve(block.columns.size());
  for (const auto& c : block.columns)
    s.column_scores.push_back(std::max(detail::coverage(q, c.name), detail::coverage(q, c.description)));
  return s;
}

class LexicalScorer : public Scorer {
 public:
  std::vector<BlockScore> score_batch(std::string_view question, std::span<const TableBlock> blocks) const override {
    std::vector<std::future<BlockScore>> pending;
    pending.reserve(blocks.size());
    for (const auto& b : blocks)
      pending.push_back(std::async(std::launch::async, [question, &b] { return lexical_score(question, b); }));
    std::vector<BlockScore> out;
    out.reserve(blocks.size());
    for (auto& f : pending) out.push_back(f.get());
    return out;
  }
};

// Posts {question, blocks:[{table, description, text, columns:[{name,
// description}]}]} and expects {scores:[{table_score, column_scores:[...]}]}.
class RemoteScorer : public Scorer {
 public:
  RemoteScorer(std::string url, std::shared_ptr<HttpTransport> transport,
               std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : url_(std::move(url)), transport_(std::move(transport)), timeout_(timeout) {}

  std::vector<BlockScore> score_batch(std::string_view question, std::span<const TableBlock> blocks) const override {
    nlohmann::json body;
    body["question"] = question;
    body["blocks"] = nlohmann::json::array();
    for (const auto& b : blocks) {
      nlohmann::json cols = nlohmann::json::array();
      for (const auto& c : b.columns) cols.push_back({{"name", c.name}, {"description", c.description}});
      body["blocks"].push_back({{"table", b.table}, {"description", b.description}, {"text", b.text}, {"columns", cols}});
    }
    HttpResponse res;
    try {
      res = transport_->post(url_, body.dump(), {{"Content-Type", "application/json"}}, timeout_);
    } catch (const Error& e) {
      throw ScorerFailure(std::string("remote scorer unreachable: ") + e.what());
    }
    if (res.status != 200) throw ScorerFailure("remote scorer returned HTTP " + std::to_string(res.status));
    std::vector<BlockScore> out;
    try {
      const auto j = nlohmann::json::parse(res.body);
      for (const auto& s : j.at("scores")) {
        BlockScore bs;
        bs.table_score = s.at("table_score").get<double>();
        bs.column_scores = s.at("column_scores").get<std::vector<double>>();
        out.push_back(std::move(bs));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ScorerFailure(std::string("malformed scorer response: ") + e.what());
    }
    return out;
  }

 private:
  std::string url_;
  std::shared_ptr<HttpTransport> transport_;
  std::chrono::milliseconds timeout_;
};

// ---------------------------------------------------------------------------
// Linking
// ---------------------------------------------------------------------------

struct ScoredItem {
  std::string name;
  double score = 0.0;
  bool operator==(const ScoredItem&) const = default;
};

struct TableColumnRanking {
  std::string table;
  std::vector<ScoredItem> columns;  // best first
  bool operator==(const TableColumnRanking&) const = default;
};

struct LinkResult {
  std::vector<ScoredItem> ranked_tables;          // every table, best first
  std::vector<TableColumnRanking> ranked_columns;  // every table, in ranked_tables order
  SchemaCatalog sub_schema;

  const TableColumnRanking* columns_of(std::string_view table) const {
    for (const auto& r : ranked_columns)
      if (text::iequals(r.table, table)) return &r;
    return nullptr;
  }
};

inline constexpr std::size_t kDefaultTopTables = 3;
inline constexpr std::size_t kDefaultTopColumns = 7;

namespace detail {
inline void sort_ranked(std::vector<ScoredItem>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.name < b.name;
  });
}
}  // namespace detail

// Scores all table blocks with a single scorer call and keeps the top
// `k_tables` tables and the top `m_columns` columns of each. The sub-schema
// keeps catalog declaration order and every foreign key whose two endpoints
// were both retained.
inline LinkResult link(std::string_view question, const SchemaCatalog& schema, const Scorer& scorer,
                       std::size_t k_tables = kDefaultTopTables, std::size_t m_columns = kDefaultTopColumns,
                       std::size_t block_budget = kDefaultBlockBudget) {
  if (k_tables < 1 || m_columns < 1) throw Error("k_tables and m_columns must be at least 1");
  const auto blocks = build_table_blocks(schema, block_budget);
  const auto scores = scorer.score_batch(question, blocks);
  if (scores.size() != blocks.size())
    throw ScorerFailure("scorer returned " + std::to_string(scores.size()) + " results for " +
                        std::to_string(blocks.size()) + " blocks");

  auto check = [](double s) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) throw ScorerFailure("score outside [0, 1]: " + std::to_string(s));
    return s;
  };

  LinkResult r;
  std::map<std::string, std::vector<ScoredItem>> per_table;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (scores[i].column_scores.size() != b.columns.size())
      throw ScorerFailure("column score count mismatch for table " + b.table);
    r.ranked_tables.push_back({b.table, check(scores[i].table_score)});
    auto& cols = per_table[b.table];
    for (std::size_t c = 0; c < b.columns.size(); ++c)
      cols.push_back({b.columns[c].name, check(scores[i].column_scores[c])});
    detail::sort_ranked(cols);
  }
  detail::sort_ranked(r.ranked_tables);
  for (const auto& t : r.ranked_tables) r.ranked_columns.push_back({t.name, per_table[t.name]});

  std::set<std::string> kept_tables;
  std::set<std::pair<std::string, std::string>> kept_columns;
  for (std::size_t i = 0; i < r.ranked_tables.size() && i < k_tables; ++i) {
    const auto& name = r.ranked_tables[i].name;
    kept_tables.insert(name);
    const auto& cols = per_table[name];
    for (std::size_t c = 0; c < cols.size() && c < m_columns; ++c) kept_columns.insert({name, cols[c].name});
  }

  r.sub_schema.db_id = schema.db_id;
  for (const auto& t : schema.tables) {
    if (!kept_tables.count(t.name)) continue;
    Table kept{t.name, t.description, {}};
    for (const auto& c : t.columns)
      if (kept_columns.count({t.name, c.name})) kept.columns.push_back(c);
    r.sub_schema.tables.push_back(std::move(kept));
  }
  for (const auto& fk : schema.foreign_keys) {
    const Table* from = r.sub_schema.find_table(fk.from.table);
    const Table* to = r.sub_schema.find_table(fk.to.table);
    if (from && to && from->has_column(fk.from.column) && to->has_column(fk.to.column))
      r.sub_schema.foreign_keys.push_back(fk);
  }
  return r;
}

inline nlohmann::json to_json(const LinkResult& r) {
  nlohmann::json j;
  j["ranked_tables"] = nlohmann::json::array();
  for (const auto& t : r.ranked_tables) j["ranked_tables"].push_back({{"table", t.name}, {"score", t.score}});
  j["ranked_columns"] = nlohmann::json::array();
  for (const auto& t : r.ranked_columns) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : t.columns) cols.push_back({{"column", c.name}, {"score", c.score}});
    j["ranked_columns"].push_back({{"table", t.table}, {"columns", cols}});
  }
  j["sub_schema"] = r.sub_schema;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct GoldLink {
  std::vector<std::string> tables;
  std::vector<ColumnRef> columns;
};

struct LinkMetrics {
  std::size_t examples = 0;
  std::map<std::size_t, double> table_recall;   // k -> fraction of examples
  std::map<std::size_t, double> column_recall;  // k -> fraction of examples
  std::optional<double> table_auc;              // empty when one class is absent
  std::optional<double> column_auc;
};

// Area under the ROC curve of (score, relevant) pairs via the rank-sum
// statistic; tied scores share their average rank (count as 1/2).
inline std::optional<double> roc_auc(std::vector<std::pair<double, bool>> pairs) {
  std::size_t pos = 0;
  for (const auto& p : pairs) pos += p.second ? 1 : 0;
  const std::size_t neg = pairs.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].first == pairs[i].first) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (pairs[t].second) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

// recall@k counts an example when all of its gold items rank within the top
// k (columns are ranked within their own table). AUC pools every
// (score, is-gold) pair across examples.
inline LinkMetrics eval_linking(const std::vector<std::pair<LinkResult, GoldLink>>& results,
                                const std::vector<std::size_t>& table_ks, const std::vector<std::size_t>& column_ks) {
  if (results.empty()) throw EmptyEvaluationSet();
  LinkMetrics m;
  m.examples = results.size();
  std::vector<std::pair<double, bool>> table_pairs;
  std::vector<std::pair<double, bool>> column_pairs;
  std::map<std::size_t, std::size_t> table_hits;
  std::map<std::size_t, std::size_t> column_hits;

  for (const auto& [res, gold] : results) {
    std::size_t worst_table = 0;
    for (const auto& g : gold.tables) {
      auto it = std::find_if(res.ranked_tables.begin(), res.ranked_tables.end(),
                             [&](const ScoredItem& t) { return text::iequals(t.name, g); });
      if (it == res.ranked_tables.end()) throw Error("gold table '" + g + "' is not in the ranking");
      worst_table = std::max(worst_table, static_cast<std::size_t>(it - res.ranked_tables.begin()) + 1);
    }
    std::size_t worst_column = 0;
    for (const auto& g : gold.columns) {
      const auto* ranking = res.columns_of(g.table);
      if (ranking == nullptr) throw Error("gold table '" + g.table + "' is not in the ranking");
      auto it = std::find_if(ranking->columns.begin(), ranking->columns.end(),
                             [&](const ScoredItem& c) { return text::iequals(c.name, g.column); });
      if (it == ranking->columns.end()) throw Error("gold column '" + g.table + "." + g.column + "' is not ranked");
      worst_column = std::max(worst_column, static_cast<std::size_t>(it - ranking->columns.begin()) + 1);
    }
    for (auto k : table_ks) table_hits[k] += worst_table <= k ? 1 : 0;
    for (auto k : column_ks) column_hits[k] += worst_column <= k ? 1 : 0;

    for (const auto& t : res.ranked_tables) {
      const bool rel = std::any_of(gold.tables.begin(), gold.tables.end(),
                                   [&](const std::string& g) { return text::iequals(g, t.name); });
      table_pairs.emplace_back(t.score, rel);
    }
    for (const auto& tr : res.ranked_columns) {
      for (const auto& c : tr.columns) {
        const bool rel = std::any_of(gold.columns.begin(), gold.columns.end(), [&](const ColumnRef& g) {
          return text::iequals(g.table, tr.table) && text::iequals(g.column, c.name);
        });
        column_pairs.emplace_back(c.score, rel);
      }
    }
  }
  const double n = static_cast<double>(results.size());
  for (auto k : table_ks) m.table_recall[k] = static_cast<double>(table_hits[k]) / n;
  for (auto k : column_ks) m.column_recall[k] = static_cast<double>(column_hits[k]) / n;
  m.table_auc = roc_auc(std::move(table_pairs));
  m.column_auc = roc_auc(std::move(column_pairs));
  return m;
}

inline nlohmann::json to_json(const LinkMetrics& m) {
  nlohmann::json j;
  j["examples"] = m.examples;
  auto recall = [](const std::map<std::size_t, double>& r) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [k, v] : r) o["R@" + std::to_string(k)] = v;
    return o;
  };
  j["table_recall"] = recall(m.table_recall);
  j["column_recall"] = recall(m.column_recall);
  j["table_auc"] = m.table_auc ? nlohmann::json(*m.table_auc) : nlohmann::json(nullptr);
  j["column_auc"] = m.column_auc ? nlohmann::json(*m.column_auc) : nlohmann::json(nullptr);
  return j;
}

}  // namespace finsql
