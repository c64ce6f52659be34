#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <random>

#include "finsql/calibration.hpp"
#include "support/calibration_pools.hpp"
#include "support/fixtures.hpp"

using namespace finsql;
using namespace finsql::calibration;
using testsupport::finance_schema;
using testsupport::kCandidatePool;
using testsupport::kClassPool;
using testsupport::for_each_sequence;
using testsupport::winning_class;
using testsupport::class_components;

namespace {

// Plain recursive edit distance with memoisation, kept separate from the
// library's dynamic-programming table.
std::size_t edit_distance_oracle(const std::string& a, const std::string& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  std::function<long(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> long {
    if (i == a.size()) return static_cast<long>(b.size() - j);
    if (j == b.size()) return static_cast<long>(a.size() - i);
    long& m = memo[i][j];
    if (m >= 0) return m;
    m = std::min({go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1)});
    return m;
  };
  return static_cast<std::size_t>(go(0, 0));
}

SchemaCatalog two_table_schema() {
  SchemaCatalog s;
  s.db_id = "two";
  s.tables = {{"t1", "", {{"id", "", "integer"}, {"a", "", "text"}}},
              {"t2", "", {{"id", "", "integer"}, {"b", "", "text"}}}};
  s.foreign_keys = {{{"t2", "id"}, {"t1", "id"}}};
  return s;
}

SchemaCatalog shared_column_schema() {
  SchemaCatalog s;
  s.db_id = "shared";
  s.tables = {{"t1", "", {{"id", "", "integer"}}},
              {"t2", "", {{"id2", "", "integer"}, {"v", "", "real"}}},
              {"t3", "", {{"id3", "", "integer"}, {"v", "", "real"}}}};
  return s;
}

CalibrationReport run(std::vector<std::string> candidates, const SchemaCatalog& schema = finance_schema()) {
  CandidateSet cs;
  cs.candidates = std::move(candidates);
  cs.schema = &schema;
  return calibrate(cs);
}

}  // namespace

// ---------------------------------------------------------------------------
// fix_typos
// ---------------------------------------------------------------------------

TEST(FixTypos, DoubleEquals) {
  const auto r = fix_typos("SELECT a FROM t WHERE b == 1", finance_schema());
  EXPECT_EQ(r.sql, "SELECT a FROM t WHERE b = 1");
  ASSERT_EQ(r.fixes.size(), 1u);
  EXPECT_EQ(r.fixes[0].kind, "typo");
  EXPECT_FALSE(r.unparseable);
}

TEST(FixTypos, ValidSqlUnchanged) {
  const std::string q = "SELECT totalshares FROM lc_sharestru WHERE companycode = 1";
  const auto r = fix_typos(q, finance_schema());
  EXPECT_EQ(r.sql, q);
  EXPECT_TRUE(r.fixes.empty());
  EXPECT_FALSE(r.unparseable);
}

TEST(FixTypos, NotEqualsAndSemicolons) {
  const auto r = fix_typos("SELECT a FROM t WHERE b <> 1 ;;", finance_schema());
  EXPECT_EQ(r.sql, "SELECT a FROM t WHERE b != 1");
  EXPECT_EQ(r.fixes.size(), 3u);
  EXPECT_FALSE(r.unparseable);
  const auto same = fix_typos("SELECT a FROM t WHERE b != 1", finance_schema());
  EXPECT_TRUE(same.fixes.empty());
}

TEST(FixTypos, UnbalancedQuote) {
  auto r = fix_typos("SELECT a FROM t WHERE name = 'abc", finance_schema());
  EXPECT_EQ(r.sql, "SELECT a FROM t WHERE name = 'abc'");
  EXPECT_FALSE(r.unparseable);
  r = fix_typos("SELECT a FROM t WHERE name = 'abc AND x = 1", finance_schema());
  EXPECT_EQ(r.sql, "SELECT a FROM t WHERE name = 'abc' AND x = 1");
  EXPECT_FALSE(r.unparseable);
  r = fix_typos("SELECT a FROM t WHERE x IN (SELECT y FROM u WHERE n = \"q) ORDER BY a", finance_schema());
  EXPECT_EQ(r.sql, "SELECT a FROM t WHERE x IN (SELECT y FROM u WHERE n = \"q\") ORDER BY a");
  EXPECT_FALSE(r.unparseable);
  r = fix_typos("SELECT a FROM t WHERE name = 'it''s", finance_schema());
  EXPECT_EQ(r.sql, "SELECT a FROM t WHERE name = 'it''s'");
}

TEST(FixTypos, JoinWithoutOnUsesUniqueForeignKey) {
  const auto r = fix_typos(
      "SELECT lc_sharestru.chinameabbr FROM lc_sharestru JOIN lc_exgindustry WHERE "
      "lc_exgindustry.firstindustryname = 'bank'",
      finance_schema());
  EXPECT_EQ(r.sql,
            "SELECT lc_sharestru.chinameabbr FROM lc_sharestru JOIN lc_exgindustry ON lc_sharestru.companycode = "
            "lc_exgindustry.companycode WHERE lc_exgindustry.firstindustryname = 'bank'");
  ASSERT_EQ(r.fixes.size(), 1u);
  EXPECT_EQ(r.fixes[0].kind, "join-condition");
  EXPECT_FALSE(r.fixes[0].low_confidence);
  EXPECT_FALSE(r.unparseable);
}

TEST(FixTypos, JoinWithoutOnUsesAliases) {
  const auto r = fix_typos("SELECT s.afloats FROM secumain AS m JOIN lc_sharestru s WHERE m.secucode = '1'",
                           finance_schema());
  EXPECT_EQ(r.sql,
            "SELECT s.afloats FROM secumain AS m JOIN lc_sharestru s ON m.companycode = s.companycode WHERE "
            "m.secucode = '1'");
}

TEST(FixTypos, AmbiguousForeignKeyPicksFirstWithLowConfidence) {
  const auto r = fix_typos(
      "SELECT e.firstindustryname FROM secumain JOIN lc_sharestru ON secumain.companycode = "
      "lc_sharestru.companycode JOIN lc_exgindustry e",
      finance_schema());
  // lc_exgindustry links to both lc_sharestru and secumain; the first
  // declared foreign key (to lc_sharestru) wins.
  EXPECT_EQ(r.sql,
            "SELECT e.firstindustryname FROM secumain JOIN lc_sharestru ON secumain.companycode = "
            "lc_sharestru.companycode JOIN lc_exgindustry e ON lc_sharestru.companycode = e.companycode");
  ASSERT_EQ(r.fixes.size(), 1u);
  EXPECT_TRUE(r.fixes[0].low_confidence);
}

TEST(FixTypos, JoinWithoutForeignKeyLeftAlone) {
  const auto r = fix_typos("SELECT a FROM ed_macroindex JOIN mf_netvalue WHERE a = 1", finance_schema());
  EXPECT_TRUE(r.fixes.empty());
  EXPECT_TRUE(r.unparseable);
}

TEST(FixTypos, UnrepairableIsFlaggedNotThrown) {
  for (const auto* q : {"SELECT FROM WHERE", "", "DELETE FROM t", "SELECT a FROM t WHERE", "hello world", "SELECT a ~ b"}) {
    TypoFixResult r;
    EXPECT_NO_THROW(r = fix_typos(q, finance_schema())) << q;
    EXPECT_TRUE(r.unparseable) << q;
    EXPECT_FALSE(r.error.empty()) << q;
  }
}

// ---------------------------------------------------------------------------
// fuzzy_match_column
// ---------------------------------------------------------------------------

TEST(FuzzyMatch, NonexistentColumnFromFigure) {
  const auto m = fuzzy_match_column("aquirementrium", finance_schema());
  EXPECT_EQ(m.column.column, "aquireramount");
  EXPECT_EQ(m.column.table, "lc_acquisition");
  EXPECT_EQ(m.distance, edit_distance_oracle("aquirementrium", "aquireramount"));
  EXPECT_LE(text::normalized_indel_distance("aquirementrium", "aquireramount"), kFuzzyThreshold);
}

TEST(FuzzyMatch, ExactNameIsItself) {
  const auto m = fuzzy_match_column("netprofit", finance_schema());
  EXPECT_EQ(m.column.column, "netprofit");
  EXPECT_EQ(m.distance, 0u);
}

TEST(FuzzyMatch, TieGoesToLexicographicallySmaller) {
  SchemaCatalog s;
  s.tables = {{"t", "", {{"coly", "", ""}, {"colx", "", ""}}}};
  ASSERT_EQ(edit_distance_oracle("colz", "colx"), edit_distance_oracle("colz", "coly"));
  EXPECT_EQ(fuzzy_match_column("colz", s).column.column, "colx");
}

TEST(FuzzyMatch, EmptySchemaThrows) {
  EXPECT_THROW(fuzzy_match_column("a", SchemaCatalog{}), EmptySchema);
  SchemaCatalog no_columns;
  no_columns.tables = {{"t", "", {}}};
  EXPECT_THROW(fuzzy_match_column("a", no_columns), EmptySchema);
}

TEST(FuzzyMatch, AgreesWithOracleOnRandomNames) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<int> ch('a', 'z');
  const auto& schema = finance_schema();
  for (int i = 0; i < 200; ++i) {
    std::string name;
    for (int n = len(rng); n > 0; --n) name.push_back(static_cast<char>(ch(rng)));
    const auto m = fuzzy_match_column(name, schema);
    std::size_t best = SIZE_MAX;
    for (const auto& t : schema.tables)
      for (const auto& c : t.columns) best = std::min(best, edit_distance_oracle(name, c.name));
    EXPECT_EQ(m.distance, best) << name;
  }
}

// ---------------------------------------------------------------------------
// cluster_candidates
// ---------------------------------------------------------------------------

namespace {
std::vector<std::pair<std::size_t, sql::SqlComponents>> components_of(const std::vector<std::string>& qs) {
  std::vector<std::pair<std::size_t, sql::SqlComponents>> out;
  for (std::size_t i = 0; i < qs.size(); ++i)
    out.emplace_back(i, sql::extract_components(sql::parse_sql(qs[i]), &finance_schema()));
  return out;
}

const std::vector<std::string> kFiveCandidates = {
    "SELECT afloats FROM lc_sharestru WHERE companycode = 1",
    "SELECT totalshares FROM lc_sharestru WHERE companycode = 1 AND enddate = '2020-12-31'",
    "SELECT count(*) FROM secumain",
    "SELECT totalshares FROM lc_sharestru WHERE enddate = '2020-12-31' AND companycode = 1",
    "select TotalShares from LC_SHARESTRU s where s.enddate='2020-12-31' and s.companycode=1",
};
}  // namespace

TEST(Cluster, ThreeReorderedVariantsAndTwoDistinct) {
  const auto clusters = cluster_candidates(components_of(kFiveCandidates));
  ASSERT_EQ(clusters.size(), 3u);
  EXPECT_EQ(clusters[0], (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_EQ(clusters[1], (std::vector<std::size_t>{0}));
  EXPECT_EQ(clusters[2], (std::vector<std::size_t>{2}));
}

TEST(Cluster, AllIdenticalFormOneCluster) {
  const std::vector<std::string> qs(4, "SELECT netprofit FROM lc_incomestatement");
  const auto clusters = cluster_candidates(components_of(qs));
  ASSERT_EQ(clusters.size(), 1u);
  EXPECT_EQ(clusters[0].size(), 4u);
}

TEST(Cluster, PairwiseIncompatibleKeepOrder) {
  const std::vector<std::string> qs = {"SELECT a FROM t", "SELECT b FROM t", "SELECT c FROM t", "SELECT a FROM u"};
  const auto clusters = cluster_candidates(components_of(qs));
  ASSERT_EQ(clusters.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(clusters[i], std::vector<std::size_t>{i});
}

// ---------------------------------------------------------------------------
// align_tables_columns
// ---------------------------------------------------------------------------

TEST(Align, MisattributedColumnMovesToOwnerInFrom) {
  const auto ast = sql::parse_sql(
      "SELECT lc_exgindustry.chinameabbr FROM lc_sharestru JOIN lc_exgindustry ON lc_sharestru.companycode = "
      "lc_exgindustry.companycode WHERE lc_exgindustry.firstindustryname = 'bank'");
  const auto r = align_tables_columns(ast, finance_schema());
  EXPECT_EQ(sql::render_sql(r.ast),
            "SELECT lc_sharestru.chinameabbr FROM lc_sharestru JOIN lc_exgindustry ON lc_sharestru.companycode = "
            "lc_exgindustry.companycode WHERE lc_exgindustry.firstindustryname = 'bank'");
  ASSERT_EQ(r.fixes.size(), 1u);
  EXPECT_EQ(r.fixes[0].kind, "alignment");
}

TEST(Align, AlignedSqlUnchanged) {
  const auto ast = sql::parse_sql(
      "SELECT s.chinameabbr, count(*) FROM lc_sharestru AS s JOIN lc_exgindustry AS e ON s.companycode = "
      "e.companycode WHERE e.firstindustryname = 'bank' GROUP BY s.chinameabbr");
  const auto r = align_tables_columns(ast, finance_schema());
  EXPECT_EQ(r.ast, ast);
  EXPECT_TRUE(r.fixes.empty());
}

TEST(Align, MissingOwnerJoinedThroughForeignKey) {
  const auto schema = two_table_schema();
  const auto r = align_tables_columns(sql::parse_sql("SELECT b FROM t1 WHERE a = 'x'"), schema);
  EXPECT_EQ(sql::render_sql(r.ast), "SELECT t2.b FROM t1 JOIN t2 ON t1.id = t2.id WHERE a = 'x'");
  const auto owners = schema.owners_of("b");
  ASSERT_EQ(owners.size(), 1u);
  EXPECT_EQ(owners[0]->name, "t2");
  EXPECT_TRUE(validate_output(sql::render_sql(r.ast), schema).empty());
}

TEST(Align, MisqualifiedToAbsentOwnerAddsIt) {
  const auto schema = two_table_schema();
  const auto r = align_tables_columns(sql::parse_sql("SELECT t1.b FROM t1"), schema);
  EXPECT_EQ(sql::render_sql(r.ast), "SELECT t2.b FROM t1 JOIN t2 ON t1.id = t2.id");
}

TEST(Align, SeveralOwnersPreferLinkerScore) {
  const auto schema = shared_column_schema();
  const auto ast = sql::parse_sql("SELECT v FROM t1");
  EXPECT_EQ(sql::render_sql(align_tables_columns(ast, schema).ast), "SELECT t2.v FROM t1, t2");
  EXPECT_EQ(sql::render_sql(align_tables_columns(ast, schema, {{"t2", 0.2}, {"t3", 0.7}}).ast),
            "SELECT t3.v FROM t1, t3");
}

TEST(Align, AmbiguousUnqualifiedColumnGetsFirstOwner) {
  const auto ast = sql::parse_sql(
      "SELECT enddate, netprofit FROM lc_balancesheet JOIN lc_incomestatement ON lc_balancesheet.companycode = "
      "lc_incomestatement.companycode");
  const auto r = align_tables_columns(ast, finance_schema());
  EXPECT_EQ(sql::render_sql(r.ast),
            "SELECT lc_balancesheet.enddate, netprofit FROM lc_balancesheet JOIN lc_incomestatement ON "
            "lc_balancesheet.companycode = lc_incomestatement.companycode");
}

TEST(Align, SubqueriesAlignedInTheirOwnScope) {
  const auto ast = sql::parse_sql(
      "SELECT secuabbr FROM secumain WHERE companycode IN (SELECT companycode FROM lc_balancesheet WHERE "
      "netprofit > 0)");
  const auto r = align_tables_columns(ast, finance_schema());
  EXPECT_EQ(sql::render_sql(r.ast),
            "SELECT secuabbr FROM secumain WHERE companycode IN (SELECT lc_balancesheet.companycode FROM "
            "lc_balancesheet JOIN lc_incomestatement ON lc_balancesheet.companycode = "
            "lc_incomestatement.companycode WHERE lc_incomestatement.netprofit > 0)");
}

TEST(Align, AliasesAndDerivedColumnsIgnored) {
  const auto q =
      "SELECT x.total, count(*) AS n FROM (SELECT companycode, totalshares AS total FROM lc_sharestru) AS x "
      "GROUP BY x.total ORDER BY n DESC";
  const auto ast = sql::parse_sql(q);
  const auto r = align_tables_columns(ast, finance_schema());
  EXPECT_EQ(r.ast, ast);
  EXPECT_TRUE(r.fixes.empty());
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

TEST(Calibrate, FiveCandidateExampleHandTrace) {
  const auto r = run(kFiveCandidates);
  EXPECT_EQ(r.final_sql, "SELECT totalshares FROM lc_sharestru WHERE companycode = 1 AND enddate = '2020-12-31'");
  ASSERT_EQ(r.clusters.size(), 3u);
  EXPECT_EQ(r.clusters[0].members, (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_EQ(r.clusters[0].representative, r.final_sql);
  EXPECT_TRUE(r.dropped.empty());
}

TEST(Calibrate, SingleValidCandidateRepairedAndAligned) {
  const auto r = run({"SELECT lc_exgindustry.chinameabbr FROM lc_sharestru JOIN lc_exgindustry WHERE "
                      "lc_exgindustry.firstindustryname == 'bank';"});
  EXPECT_EQ(r.final_sql,
            "SELECT lc_sharestru.chinameabbr FROM lc_sharestru JOIN lc_exgindustry ON lc_sharestru.companycode = "
            "lc_exgindustry.companycode WHERE lc_exgindustry.firstindustryname = 'bank'");
  ASSERT_EQ(r.repairs.size(), 1u);
  std::vector<std::string> kinds;
  for (const auto& f : r.repairs[0]) kinds.push_back(f.kind);
  EXPECT_EQ(kinds, (std::vector<std::string>{"typo", "typo", "join-condition", "alignment"}));
}

TEST(Calibrate, FuzzyRepairOfNonexistentColumn) {
  const auto r = run({"SELECT sum(aquirementrium) FROM lc_acquisition WHERE companycode = 3"});
  EXPECT_EQ(r.final_sql, "SELECT sum(aquireramount) FROM lc_acquisition WHERE companycode = 3");
  ASSERT_EQ(r.repairs[0].size(), 1u);
  EXPECT_EQ(r.repairs[0][0].kind, "fuzzy-column");
}

TEST(Calibrate, HallucinatedColumnDroppedBySchemaFilter) {
  const auto r = run({"SELECT marketsentimentscore FROM secumain", "SELECT secuabbr FROM secumain"});
  EXPECT_EQ(r.final_sql, "SELECT secuabbr FROM secumain");
  ASSERT_EQ(r.dropped.size(), 1u);
  EXPECT_EQ(r.dropped[0].index, 0u);
  EXPECT_EQ(r.dropped[0].reason.rfind("schema-filter", 0), 0u);
}

TEST(Calibrate, AllRejectedThrows) {
  EXPECT_THROW(run({"SELECT FROM", "SELECT nosuchthingatall FROM secumain", ""}), AllCandidatesRejected);
}

TEST(Calibrate, UnresolvedAliasDropped) {
  const auto r = run({"SELECT z.secuabbr FROM secumain", "SELECT secucode FROM secumain"});
  EXPECT_EQ(r.final_sql, "SELECT secucode FROM secumain");
  ASSERT_EQ(r.dropped.size(), 1u);
  EXPECT_EQ(r.dropped[0].reason.rfind("unresolved-alias", 0), 0u);
}

TEST(Calibrate, ReportSerializes) {
  const auto j = to_json(run(kFiveCandidates));
  EXPECT_EQ(j["final_sql"], "SELECT totalshares FROM lc_sharestru WHERE companycode = 1 AND enddate = '2020-12-31'");
  EXPECT_EQ(j["clusters"][0]["size"], 3);
  EXPECT_EQ(j["repairs"].size(), 5u);
  EXPECT_TRUE(j["dropped"].empty());
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------


TEST(CalibrationProperties, IdempotentAndValidOnRandomSets) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> pick(0, kCandidatePool.size() - 1);
  std::uniform_int_distribution<int> size(1, 6);
  int calibrated = 0;
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<std::string> cands;
    for (int n = size(rng); n > 0; --n) cands.push_back(kCandidatePool[pick(rng)]);
    CalibrationReport r;
    try {
      r = run(cands);
    } catch (const AllCandidatesRejected&) {
      continue;
    }
    ++calibrated;
    EXPECT_TRUE(validate_output(r.final_sql, finance_schema()).empty())
        << r.final_sql << " : " << validate_output(r.final_sql, finance_schema()).front();
    EXPECT_EQ(run({r.final_sql}).final_sql, r.final_sql);
  }
  EXPECT_GT(calibrated, 300);
}

TEST(CalibrationProperties, EveryPoolEntryIdempotent) {
  for (const auto& q : kCandidatePool) {
    CalibrationReport r;
    try {
      r = run({q});
    } catch (const AllCandidatesRejected&) {
      continue;
    }
    EXPECT_TRUE(validate_output(r.final_sql, finance_schema()).empty()) << r.final_sql;
    EXPECT_EQ(run({r.final_sql}).final_sql, r.final_sql) << q;
  }
}


TEST(CalibrationProperties, MajoritySoundnessExhaustive) {
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b) ASSERT_FALSE(sql::components_compatible(class_components(a), class_components(b)));
  std::size_t checked = 0;
  for_each_sequence(6, [&](const std::vector<std::size_t>& seq) {
    const std::size_t n = seq.size();
    std::vector<std::size_t> count(3, 0);
    std::vector<std::string> cands;
    for (std::size_t i = 0; i < n; ++i) {
      ++count[seq[i]];
      cands.push_back(kClassPool[seq[i]][i % 2]);
    }
    const auto r = run(cands);
    EXPECT_TRUE(validate_output(r.final_sql, finance_schema()).empty());
    for (std::size_t c = 0; c < 3; ++c) {
      const bool majority = count[c] >= (n + 1) / 2;
      bool strictly_largest = true;
      for (std::size_t o = 0; o < 3; ++o) strictly_largest = strictly_largest && (o == c || count[o] < count[c]);
      if (majority && strictly_largest) {
        EXPECT_EQ(winning_class(r), c);
        ++checked;
      }
    }
  });
  EXPECT_GT(checked, 500u);
}

TEST(CalibrationProperties, PermutationStableWhenOneClassStrictlyLargest) {
  std::mt19937_64 rng(99);
  for_each_sequence(6, [&](const std::vector<std::size_t>& seq) {
    std::vector<std::size_t> count(3, 0);
    for (auto c : seq) ++count[c];
    const auto top = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
    if (std::count(count.begin(), count.end(), count[top]) != 1) return;
    std::vector<std::string> cands;
    for (std::size_t i = 0; i < seq.size(); ++i) cands.push_back(kClassPool[seq[i]][i % 2]);
    for (int rep = 0; rep < 3; ++rep) {
      std::shuffle(cands.begin(), cands.end(), rng);
      EXPECT_EQ(winning_class(run(cands)), top);
    }
  });
}

TEST(CalibrationCases, HandTracedWinners) {
  std::ifstream in(testsupport::data_path("fixtures/calibration_cases.json"));
  const auto doc = nlohmann::json::parse(in);
  ASSERT_EQ(doc["cases"].size(), 30u);
  for (const auto& c : doc["cases"]) {
    const auto r = run(c["candidates"].get<std::vector<std::string>>());
    EXPECT_EQ(r.final_sql, c["expected_final_sql"].get<std::string>()) << c["name"];
    EXPECT_TRUE(validate_output(r.final_sql, finance_schema()).empty()) << c["name"];
  }
}
