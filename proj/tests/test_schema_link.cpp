#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <random>
#include <set>
#include <sstream>

#include "finsql/schema_link.hpp"
#include "support/fixtures.hpp"

using namespace finsql;
using testsupport::finance_schema;

namespace {

SchemaCatalog small_schema() {
  SchemaCatalog s;
  s.db_id = "small";
  s.tables = {
      {"stock", "", {{"code", "security code", "text"}, {"price", "", "real"}}},
      {"bond", "fixed income", {{"coupon", "coupon rate", "real"}}},
      {"price", "", {{"day", "", "date"}}},
  };
  return s;
}

std::size_t count_words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

SchemaCatalog wide_schema(std::size_t tables, std::size_t columns) {
  SchemaCatalog s;
  s.db_id = "wide";
  for (std::size_t t = 0; t < tables; ++t) {
    Table table{"table_" + std::to_string(t), "synthetic table number " + std::to_string(t), {}};
    for (std::size_t c = 0; c < columns; ++c)
      table.columns.push_back({"col_" + std::to_string(c), "a fairly long description of column " + std::to_string(c), "text"});
    s.tables.push_back(std::move(table));
  }
  return s;
}

class CountingScorer : public Scorer {
 public:
  mutable std::atomic<int> calls{0};
  mutable std::size_t last_batch = 0;
  std::vector<BlockScore> score_batch(std::string_view q, std::span<const TableBlock> blocks) const override {
    ++calls;
    last_batch = blocks.size();
    return inner_.score_batch(q, blocks);
  }

 private:
  LexicalScorer inner_;
};

class FixedScorer : public Scorer {
 public:
  explicit FixedScorer(double v) : v_(v) {}
  std::vector<BlockScore> score_batch(std::string_view, std::span<const TableBlock> blocks) const override {
    std::vector<BlockScore> out;
    for (const auto& b : blocks) out.push_back({v_, std::vector<double>(b.columns.size(), v_)});
    return out;
  }

 private:
  double v_;
};

class FakeTransport : public HttpTransport {
 public:
  HttpResponse response;
  bool fail = false;
  std::string last_body;
  HttpResponse post(const std::string&, const std::string& body, const HttpHeaders&,
                    std::chrono::milliseconds) override {
    last_body = body;
    if (fail) throw TransportError("connection refused");
    return response;
  }
};

// Pairwise-comparison AUC: P(score_pos > score_neg) + 0.5 P(tie).
double pairwise_auc(const std::vector<std::pair<double, bool>>& pairs) {
  double wins = 0;
  double total = 0;
  for (const auto& [sp, p] : pairs) {
    if (!p) continue;
    for (const auto& [sn, n] : pairs) {
      if (n) continue;
      total += 1;
      wins += sp > sn ? 1.0 : (sp == sn ? 0.5 : 0.0);
    }
  }
  return wins / total;
}

std::set<std::string> table_names(const SchemaCatalog& s) {
  std::set<std::string> out;
  for (const auto& t : s.tables) out.insert(t.name);
  return out;
}

}  // namespace

TEST(TableBlocks, OneBlockPerTableInCatalogOrder) {
  const auto blocks = build_table_blocks(small_schema());
  ASSERT_EQ(blocks.size(), 3u);
  EXPECT_EQ(blocks[0].table, "stock");
  EXPECT_EQ(blocks[1].table, "bond");
  EXPECT_EQ(blocks[2].table, "price");
  EXPECT_EQ(build_table_blocks(finance_schema()).size(), finance_schema().tables.size());
}

TEST(TableBlocks, EmptyDescriptionOmitsParenthetical) {
  const auto blocks = build_table_blocks(small_schema());
  EXPECT_EQ(blocks[0].text, "stock: code (security code), price");
  EXPECT_EQ(blocks[1].text, "bond (fixed income): coupon (coupon rate)");
}

TEST(TableBlocks, ThirtyOneTablesStayWithinBudget) {
  const auto schema = wide_schema(31, 40);
  const std::size_t budget = 64;
  const auto blocks = build_table_blocks(schema, budget);
  ASSERT_EQ(blocks.size(), 31u);
  for (const auto& b : blocks) {
    EXPECT_LE(count_words(b.text), budget) << b.table;
    EXPECT_GT(count_words(b.text), budget - 8) << "budget should be nearly filled";
    EXPECT_EQ(b.columns.size(), 40u);
  }
  for (const auto& b : build_table_blocks(schema)) EXPECT_LE(count_words(b.text), kDefaultBlockBudget);
}

TEST(LexicalScore, HandComputedTrigramCoverage) {
  const auto blocks = build_table_blocks(small_schema());
  const std::string q = "show stock prices";
  // " stock " -> 5 trigrams, all in the question; " bond " shares none;
  // " price " -> " pr","pri","ric","ice","ce ": the last is missing -> 4/5.
  const auto stock = lexical_score(q, blocks[0]);
  const auto bond = lexical_score(q, blocks[1]);
  const auto price = lexical_score(q, blocks[2]);
  EXPECT_DOUBLE_EQ(stock.table_score, 1.0);
  EXPECT_DOUBLE_EQ(bond.table_score, 0.0);
  EXPECT_DOUBLE_EQ(price.table_score, 0.8);
  EXPECT_GT(stock.table_score, bond.table_score);
  ASSERT_EQ(stock.column_scores.size(), 2u);
  EXPECT_DOUBLE_EQ(stock.column_scores[1], 0.8);
}

TEST(LexicalScore, IdenticalQuestionScoresOne) {
  const auto blocks = build_table_blocks(small_schema());
  for (const auto& b : blocks) EXPECT_DOUBLE_EQ(lexical_score(b.text, b).table_score, 1.0);
}

TEST(LexicalScore, DisjointQuestionScoresZero) {
  const auto blocks = build_table_blocks(small_schema());
  const auto s = lexical_score("zzz qqq", blocks[1]);
  EXPECT_DOUBLE_EQ(s.table_score, 0.0);
  for (double c : s.column_scores) EXPECT_DOUBLE_EQ(c, 0.0);
}

TEST(LexicalScore, ScoresInUnitInterval) {
  const auto blocks = build_table_blocks(finance_schema());
  for (const auto* q : {"", "a", "total shares of lc_sharestru in 2020", "净利润"}) {
    for (const auto& b : blocks) {
      const auto s = lexical_score(q, b);
      EXPECT_GE(s.table_score, 0.0);
      EXPECT_LE(s.table_score, 1.0);
      for (double c : s.column_scores) {
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 1.0);
      }
    }
  }
}

TEST(Link, DefaultsKeepThreeTablesSevenColumns) {
  const auto schema = wide_schema(8, 12);
  const auto r = link("col_3 of table_5", schema, LexicalScorer{});
  EXPECT_LE(r.sub_schema.tables.size(), 3u);
  EXPECT_EQ(r.sub_schema.tables.size(), 3u);
  for (const auto& t : r.sub_schema.tables) EXPECT_LE(t.columns.size(), 7u);
  EXPECT_EQ(r.ranked_tables.size(), 8u);
  EXPECT_NO_THROW(r.sub_schema.validate());
}

TEST(Link, NoFilteringReturnsInputSchema) {
  const auto& schema = finance_schema();
  std::size_t max_cols = 0;
  for (const auto& t : schema.tables) max_cols = std::max(max_cols, t.columns.size());
  const auto r = link("anything", schema, LexicalScorer{}, schema.tables.size(), max_cols);
  EXPECT_EQ(r.sub_schema, schema);
}

TEST(Link, VerbatimGoldTableRetainedAtKOne) {
  const auto r = link("show stock prices", small_schema(), LexicalScorer{}, 1, 7);
  ASSERT_EQ(r.sub_schema.tables.size(), 1u);
  EXPECT_EQ(r.sub_schema.tables[0].name, "stock");

  const auto f = link("what is the total shares in lc_sharestru", finance_schema(), LexicalScorer{}, 1, 7);
  ASSERT_EQ(f.sub_schema.tables.size(), 1u);
  EXPECT_EQ(f.sub_schema.tables[0].name, "lc_sharestru");
}

TEST(Link, SingleScorerCallCoversAllBlocks) {
  CountingScorer scorer;
  link("netprofit by enddate", finance_schema(), scorer);
  EXPECT_EQ(scorer.calls.load(), 1);
  EXPECT_EQ(scorer.last_batch, finance_schema().tables.size());
  const auto wide = wide_schema(31, 5);
  link("col_1", wide, scorer);
  EXPECT_EQ(scorer.calls.load(), 2);
  EXPECT_EQ(scorer.last_batch, 31u);
}

TEST(Link, TiesBrokenByName) {
  const auto r = link("q", small_schema(), FixedScorer(0.5), 2, 1);
  ASSERT_EQ(r.ranked_tables.size(), 3u);
  EXPECT_EQ(r.ranked_tables[0].name, "bond");
  EXPECT_EQ(r.ranked_tables[1].name, "price");
  EXPECT_EQ(r.ranked_tables[2].name, "stock");
  EXPECT_EQ(table_names(r.sub_schema), (std::set<std::string>{"bond", "price"}));
}

TEST(Link, InvariantUnderTableOrderPermutation) {
  const auto& schema = finance_schema();
  std::mt19937_64 rng(7);
  const std::vector<std::string> questions = {"closing price on trading day", "fund net value unit nv",
                                              "acquirer amount of lc_acquisition", "industry name", "q"};
  for (const auto& q : questions) {
    const auto base = link(q, schema, LexicalScorer{});
    for (int rep = 0; rep < 5; ++rep) {
      auto shuffled = schema;
      std::shuffle(shuffled.tables.begin(), shuffled.tables.end(), rng);
      std::shuffle(shuffled.foreign_keys.begin(), shuffled.foreign_keys.end(), rng);
      const auto r = link(q, shuffled, LexicalScorer{});
      EXPECT_EQ(r.ranked_tables, base.ranked_tables) << q;
      EXPECT_EQ(r.ranked_columns, base.ranked_columns) << q;
      EXPECT_EQ(table_names(r.sub_schema), table_names(base.sub_schema)) << q;
      for (const auto& t : base.sub_schema.tables) {
        const auto* other = r.sub_schema.find_table(t.name);
        ASSERT_NE(other, nullptr);
        auto a = t.columns;
        auto b = other->columns;
        auto by_name = [](const Column& x, const Column& y) { return x.name < y.name; };
        std::sort(a.begin(), a.end(), by_name);
        std::sort(b.begin(), b.end(), by_name);
        EXPECT_EQ(a, b);
      }
      auto fk_set = [](const SchemaCatalog& s) {
        std::set<std::pair<ColumnRef, ColumnRef>> out;
        for (const auto& fk : s.foreign_keys) out.insert({fk.from, fk.to});
        return out;
      };
      EXPECT_EQ(fk_set(r.sub_schema), fk_set(base.sub_schema));
    }
  }
}

TEST(Link, ForeignKeyClosure) {
  const auto& schema = finance_schema();
  for (std::size_t k = 1; k <= schema.tables.size(); ++k) {
    for (std::size_t m = 1; m <= 5; ++m) {
      const auto r = link("company code of secumain and lc_sharestru", schema, LexicalScorer{}, k, m);
      EXPECT_NO_THROW(r.sub_schema.validate());
      for (const auto& fk : schema.foreign_keys) {
        const auto* from = r.sub_schema.find_table(fk.from.table);
        const auto* to = r.sub_schema.find_table(fk.to.table);
        const bool both = from && to && from->has_column(fk.from.column) && to->has_column(fk.to.column);
        const bool kept = std::find(r.sub_schema.foreign_keys.begin(), r.sub_schema.foreign_keys.end(), fk) !=
                          r.sub_schema.foreign_keys.end();
        EXPECT_EQ(both, kept);
      }
    }
  }
}

TEST(Link, RejectsBadArgumentsAndScores) {
  EXPECT_THROW(link("q", small_schema(), LexicalScorer{}, 0, 7), Error);
  EXPECT_THROW(link("q", small_schema(), LexicalScorer{}, 3, 0), Error);
  EXPECT_THROW(link("q", small_schema(), FixedScorer(1.5)), ScorerFailure);
  EXPECT_THROW(link("q", small_schema(), FixedScorer(-0.1)), ScorerFailure);
}

TEST(RemoteScorer, ParsesScoresAndPostsBlocks) {
  auto transport = std::make_shared<FakeTransport>();
  transport->response = {200, R"({"scores":[{"table_score":0.9,"column_scores":[0.1,0.2]},
                                             {"table_score":0.1,"column_scores":[0.3]},
                                             {"table_score":0.5,"column_scores":[0.4]}]})"};
  RemoteScorer scorer("http://scorer.local/score", transport);
  const auto r = link("question text", small_schema(), scorer, 1, 1);
  EXPECT_EQ(r.ranked_tables[0].name, "stock");
  ASSERT_EQ(r.sub_schema.tables.size(), 1u);
  EXPECT_EQ(r.sub_schema.tables[0].columns[0].name, "price");
  const auto body = nlohmann::json::parse(transport->last_body);
  EXPECT_EQ(body["question"], "question text");
  EXPECT_EQ(body["blocks"].size(), 3u);
}

TEST(RemoteScorer, FailuresBecomeScorerFailure) {
  auto transport = std::make_shared<FakeTransport>();
  RemoteScorer scorer("http://scorer.local/score", transport);
  transport->response = {500, "oops"};
  EXPECT_THROW(link("q", small_schema(), scorer), ScorerFailure);
  transport->response = {200, "{\"scores\": 3}"};
  EXPECT_THROW(link("q", small_schema(), scorer), ScorerFailure);
  transport->response = {200, R"({"scores":[]})"};
  EXPECT_THROW(link("q", small_schema(), scorer), ScorerFailure);
  transport->fail = true;
  EXPECT_THROW(link("q", small_schema(), scorer), ScorerFailure);
}

namespace {

LinkResult manual_result(std::vector<ScoredItem> tables, std::vector<TableColumnRanking> cols) {
  LinkResult r;
  r.ranked_tables = std::move(tables);
  r.ranked_columns = std::move(cols);
  return r;
}

std::vector<std::pair<LinkResult, GoldLink>> three_examples() {
  return {
      {manual_result({{"a", 0.9}, {"b", 0.5}, {"c", 0.1}}, {{"a", {{"x", 0.8}, {"y", 0.2}}}, {"b", {}}, {"c", {}}}),
       {{"a"}, {{"a", "x"}}}},
      {manual_result({{"b", 0.7}, {"a", 0.6}, {"c", 0.3}}, {{"b", {}}, {"a", {{"y", 0.9}, {"x", 0.1}}}, {"c", {}}}),
       {{"a"}, {{"a", "x"}}}},
      {manual_result({{"c", 0.8}, {"a", 0.4}, {"b", 0.4}}, {{"c", {}}, {"a", {}}, {"b", {}}}), {{"b"}, {}}},
  };
}

}  // namespace

TEST(EvalLinking, HandBuiltThreeExampleSet) {
  const auto m = eval_linking(three_examples(), {1, 2, 3}, {1, 2});
  EXPECT_EQ(m.examples, 3u);
  EXPECT_DOUBLE_EQ(m.table_recall.at(1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.table_recall.at(2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.table_recall.at(3), 1.0);
  EXPECT_DOUBLE_EQ(m.column_recall.at(1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.column_recall.at(2), 1.0);

  std::vector<std::pair<double, bool>> table_pairs = {{0.9, true},  {0.5, false}, {0.1, false},
                                                      {0.7, false}, {0.6, true},  {0.3, false},
                                                      {0.8, false}, {0.4, false}, {0.4, true}};
  ASSERT_TRUE(m.table_auc.has_value());
  EXPECT_NEAR(*m.table_auc, pairwise_auc(table_pairs), 1e-12);
  EXPECT_NEAR(*m.table_auc, 12.5 / 18.0, 1e-12);
  std::vector<std::pair<double, bool>> column_pairs = {{0.8, true}, {0.2, false}, {0.9, false}, {0.1, true}};
  ASSERT_TRUE(m.column_auc.has_value());
  EXPECT_NEAR(*m.column_auc, pairwise_auc(column_pairs), 1e-12);
}

TEST(EvalLinking, PerfectScorerGivesUnitAucAndFullRecall) {
  const auto& schema = finance_schema();
  class GoldScorer : public Scorer {
   public:
    std::vector<BlockScore> score_batch(std::string_view, std::span<const TableBlock> blocks) const override {
      std::vector<BlockScore> out;
      for (const auto& b : blocks) {
        BlockScore s{b.table == "lc_sharestru" ? 1.0 : 0.0, {}};
        for (const auto& c : b.columns) s.column_scores.push_back(b.table == "lc_sharestru" && c.name == "enddate");
        out.push_back(std::move(s));
      }
      return out;
    }
  };
  const GoldLink gold{{"lc_sharestru"}, {{"lc_sharestru", "enddate"}}};
  const auto r = link("q", schema, GoldScorer{});
  const auto m = eval_linking({{r, gold}}, {1, schema.tables.size()}, {1});
  EXPECT_DOUBLE_EQ(*m.table_auc, 1.0);
  EXPECT_DOUBLE_EQ(*m.column_auc, 1.0);
  EXPECT_DOUBLE_EQ(m.table_recall.at(schema.tables.size()), 1.0);
}

TEST(EvalLinking, RecallMonotoneInK) {
  const auto& schema = finance_schema();
  const std::vector<std::pair<std::string, GoldLink>> cases = {
      {"closing price", {{"qt_dailyquote"}, {{"qt_dailyquote", "closeprice"}}}},
      {"fund type of archives", {{"mf_fundarchives"}, {{"mf_fundarchives", "fundtype"}}}},
      {"net profit", {{"lc_incomestatement", "secumain"}, {{"lc_incomestatement", "netprofit"}}}},
      {"macro index value", {{"ed_macroindex"}, {{"ed_macroindex", "datavalue"}}}},
  };
  std::vector<std::pair<LinkResult, GoldLink>> results;
  for (const auto& [q, g] : cases) results.emplace_back(link(q, schema, LexicalScorer{}), g);
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k <= schema.tables.size(); ++k) ks.push_back(k);
  const auto m = eval_linking(results, ks, {1, 2, 3, 4, 5});
  double prev = 0.0;
  for (const auto& [k, v] : m.table_recall) {
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_DOUBLE_EQ(m.table_recall.at(schema.tables.size()), 1.0);
  prev = 0.0;
  for (const auto& [k, v] : m.column_recall) {
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(EvalLinking, EmptySetThrows) { EXPECT_THROW(eval_linking({}, {1}, {1}), EmptyEvaluationSet); }

TEST(EvalLinking, AucMatchesPairwiseOracleOnRandomData) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> score(0, 10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, bool>> pairs;
    const int n = 2 + trial % 20;
    for (int i = 0; i < n; ++i) pairs.emplace_back(score(rng) / 10.0, i % 3 == 0);
    ASSERT_TRUE(roc_auc(pairs).has_value());
    EXPECT_NEAR(*roc_auc(pairs), pairwise_auc(pairs), 1e-12);
  }
  EXPECT_FALSE(roc_auc({{0.1, true}, {0.2, true}}).has_value());
}
