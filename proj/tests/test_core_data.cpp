#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cdr/core_data.hpp"

using namespace cdr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cdr_core_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string write(const std::string& name, const std::string& body) const {
    const auto p = path / name;
    std::ofstream(p) << body;
    return p.string();
  }
};

std::string bits(std::size_t ones) {
  std::string s(kFingerprintBits, '0');
  for (std::size_t i = 0; i < ones; ++i) s[i] = '1';
  return s;
}

RawPair raw(const std::string& d, const std::string& c, double r2, const std::string& screen, std::size_t line = 0) {
  RawPair p;
  p.drug_id = d;
  p.cell_id = c;
  p.auc = 0.5;
  p.lower_limit = 0.1;
  p.ic50 = 0.2;
  p.r_squared = r2;
  p.screen_id = screen;
  p.line = line;
  return p;
}

DrugRecord drug(const std::string& id, bool withdrawn = false) {
  DrugRecord d;
  d.drug_id = id;
  d.withdrawn = withdrawn;
  return d;
}

std::vector<CellLineRecord> cells_of(const std::map<std::string, std::size_t>& per_cancer) {
  std::vector<CellLineRecord> out;
  int n = 0;
  for (const auto& [cancer, k] : per_cancer)
    for (std::size_t i = 0; i < k; ++i) out.push_back({"C" + std::to_string(n++), cancer, {1.0}});
  return out;
}

void check_plan(const SplitPlan& plan, const std::vector<CellLineRecord>& cells, std::size_t novel_min = 15) {
  std::map<std::string, int> seen;
  for (const auto& c : plan.novel_test) ++seen[c];
  for (const auto& c : plan.trained_on_test) ++seen[c];
  ASSERT_EQ(plan.folds.size(), kFolds);
  for (const auto& f : plan.folds)
    for (const auto& c : f) ++seen[c];
  ASSERT_EQ(seen.size(), cells.size());
  for (const auto& [c, n] : seen) EXPECT_EQ(n, 1) << c;

  std::map<std::string, std::vector<std::string>> by_cancer;
  for (const auto& c : cells) by_cancer[c.cancer_type].push_back(c.cell_id);
  for (const auto& [cancer, ids] : by_cancer) {
    std::size_t novel = 0, test = 0;
    std::vector<std::size_t> fold_sizes(kFolds, 0);
    for (const auto& id : ids) {
      novel += plan.novel_test.count(id);
      test += plan.trained_on_test.count(id);
      const int f = plan.fold_of(id);
      if (f >= 0) ++fold_sizes[static_cast<std::size_t>(f)];
    }
    if (ids.size() < novel_min) {
      EXPECT_EQ(novel, ids.size()) << cancer;
      continue;
    }
    EXPECT_EQ(novel, 0u);
    const std::size_t expect = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.15 * ids.size() + 0.5)));
    EXPECT_EQ(test, expect) << cancer;
    const auto [lo, hi] = std::minmax_element(fold_sizes.begin(), fold_sizes.end());
    EXPECT_LE(*hi - *lo, 1u) << cancer;
  }
}

PairRecord scored(const std::string& d, const std::string& c, double ces) {
  PairRecord p;
  p.drug_id = d;
  p.cell_id = c;
  p.ces = ces;
  return p;
}

}  // namespace

TEST(Parse, WellFormedFiles) {
  TempDir t;
  DatasetPaths p;
  p.pairs = t.write("pairs.csv",
                    "drug_id,cell_id,auc,lower_limit,ic50,r_squared,screen_id\n"
                    "D1,C1,0.5,0.1,0.2,0.9,MTS010\n"
                    "D1,C2,0.6,0.1,0.3,0.8,HTS\n"
                    "D9,C1,0.5,0.1,0.2,0.9,HTS\n");
  p.drugs = t.write("drugs.csv",
                    "drug_id,name,fingerprint,gene_targets,moa,withdrawn,indications\n"
                    "D1,alpha," + bits(3) + ",EGFR;ERBB2,kinase inhibitor,0,Lung\n");
  p.cells = t.write("cells.csv", "cell_id,cancer_type,G1,G2\nC1,Lung,1.5,2\nC2,Skin,,\n");
  p.genes = t.write("genes.txt", "G1\nG2\n");
  const auto ds = parse_dataset(p);
  EXPECT_EQ(ds.pairs.size(), 3u);  // D9 is unknown; that is the filter's business
  ASSERT_EQ(ds.drugs.size(), 1u);
  EXPECT_EQ(ds.drugs[0].fingerprint.count(), 3u);
  EXPECT_EQ(ds.drugs[0].gene_targets, (std::set<std::string>{"EGFR", "ERBB2"}));
  EXPECT_EQ(ds.drugs[0].indications, (std::set<std::string>{"Lung"}));
  ASSERT_EQ(ds.expression.rows.size(), 2u);
  EXPECT_TRUE(ds.expression.rows[0].has_value());
  EXPECT_FALSE(ds.expression.rows[1].has_value());
  EXPECT_TRUE(ds.rejected.empty());
}

TEST(Parse, NonNumericMeasurementIsRejectedWithLine) {
  TempDir t;
  std::vector<Diagnostic> rej;
  const auto path = t.write("pairs.csv",
                            "drug_id,cell_id,auc,lower_limit,ic50,r_squared,screen_id\n"
                            "D1,C1,0.5,0.1,0.2,0.9,MTS010\n"
                            "D1,C2,0.5,0.1,NA,0.9,MTS010\n");
  const auto pairs = parse_pairs(path, rej);
  EXPECT_EQ(pairs.size(), 1u);
  ASSERT_EQ(rej.size(), 1u);
  EXPECT_EQ(rej[0].line, 3u);
}

TEST(Parse, BadFingerprintIsRejected) {
  TempDir t;
  std::vector<Diagnostic> rej;
  const auto path = t.write("drugs.csv",
                            "drug_id,name,fingerprint,gene_targets,moa,withdrawn,indications\n"
                            "D1,a," + bits(1).substr(1) + ",,,0,\n"
                            "D2,b," + std::string(kFingerprintBits, '2') + ",,,0,\n"
                            "D3,c," + bits(1) + ",,,0,\n");
  const auto drugs = parse_drugs(path, rej);
  ASSERT_EQ(drugs.size(), 1u);
  EXPECT_EQ(drugs[0].drug_id, "D3");
  EXPECT_EQ(rej.size(), 2u);
}

TEST(Parse, HeaderMismatchAndMissingFile) {
  TempDir t;
  std::vector<Diagnostic> rej;
  const auto path = t.write("pairs.csv", "drug,cell,auc\n");
  EXPECT_THROW(parse_pairs(path, rej), InputError);
  EXPECT_THROW(parse_pairs((t.path / "absent.csv").string(), rej), InputError);
  EXPECT_THROW(read_gene_panel(t.write("g.txt", "A\nB\nA\n")), InputError);
}

TEST(PairFilter, MtsWinsOverHigherRSquared) {
  const std::vector<DrugRecord> drugs = {drug("D1")};
  const std::vector<RawPair> in = {raw("D1", "C1", 0.95, "OTHER"), raw("D1", "C1", 0.75, "MTS010")};
  const auto out = filter_and_dedup_pairs(in, drugs);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0].screen_id, "MTS010");
  EXPECT_DOUBLE_EQ(out.pairs[0].r_squared, 0.75);
}

TEST(PairFilter, HighestRSquaredOtherwise) {
  const std::vector<DrugRecord> drugs = {drug("D1")};
  const std::vector<RawPair> in = {raw("D1", "C1", 0.8, "A"), raw("D1", "C1", 0.9, "B")};
  const auto out = filter_and_dedup_pairs(in, drugs);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0].screen_id, "B");
}

TEST(PairFilter, EqualRSquaredTieBreaksOnScreenId) {
  const std::vector<DrugRecord> drugs = {drug("D1")};
  const std::vector<RawPair> in = {raw("D1", "C1", 0.8, "Z"), raw("D1", "C1", 0.8, "B")};
  EXPECT_EQ(filter_and_dedup_pairs(in, drugs).pairs[0].screen_id, "B");
}

TEST(PairFilter, RSquaredBoundary) {
  const std::vector<DrugRecord> drugs = {drug("D1")};
  const std::vector<RawPair> in = {raw("D1", "C1", 0.69, "A"), raw("D1", "C2", 0.70, "A")};
  const auto out = filter_and_dedup_pairs(in, drugs);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0].cell_id, "C2");
}

TEST(PairFilter, DropsMissingNegativeWithdrawnUnknown) {
  const std::vector<DrugRecord> drugs = {drug("D1"), drug("W", true)};
  std::vector<RawPair> in;
  in.push_back(raw("D1", "C1", 0.9, "A"));
  in.back().ic50.reset();
  in.push_back(raw("D1", "C2", 0.9, "A"));
  in.back().lower_limit = -0.1;
  in.push_back(raw("W", "C3", 0.9, "A"));
  in.push_back(raw("X", "C4", 0.9, "A"));
  in.push_back(raw("D1", "C5", 0.9, "A"));
  const auto out = filter_and_dedup_pairs(in, drugs);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0].cell_id, "C5");
  std::set<std::string> rules;
  for (const auto& a : out.audit) rules.insert(a.rule);
  EXPECT_EQ(rules, (std::set<std::string>{"missing_measurement", "negative_lower_limit", "withdrawn_drug", "unknown_drug"}));
}

TEST(PairFilter, EveryDroppedRowHasOneAuditEntry) {
  Rng rng(5);
  std::uniform_int_distribution<int> pick(0, 4);
  std::uniform_real_distribution<double> r2(0.5, 1.0);
  std::vector<DrugRecord> drugs = {drug("D0"), drug("D1"), drug("D2", true)};
  std::vector<RawPair> in;
  for (std::size_t i = 0; i < 400; ++i)
    in.push_back(raw("D" + std::to_string(pick(rng) % 4), "C" + std::to_string(pick(rng)), r2(rng),
                     pick(rng) == 0 ? "MTS010" : "S" + std::to_string(pick(rng)), i + 2));
  const auto out = filter_and_dedup_pairs(in, drugs);
  EXPECT_LE(out.pairs.size(), in.size());
  EXPECT_EQ(out.pairs.size() + out.audit.size(), in.size());
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& p : out.pairs) {
    EXPECT_TRUE(keys.insert({p.drug_id, p.cell_id}).second);
    EXPECT_GE(p.r_squared, kMinRSquared);
  }
}

TEST(PairFilter, Idempotent) {
  Rng rng(9);
  std::uniform_int_distribution<int> pick(0, 5);
  std::uniform_real_distribution<double> r2(0.6, 1.0);
  std::vector<DrugRecord> drugs = {drug("D0"), drug("D1"), drug("D2")};
  std::vector<RawPair> in;
  for (int i = 0; i < 200; ++i)
    in.push_back(raw("D" + std::to_string(pick(rng) % 3), "C" + std::to_string(pick(rng)), r2(rng),
                     "S" + std::to_string(pick(rng))));
  const auto once = filter_and_dedup_pairs(in, drugs);
  std::vector<RawPair> again;
  for (const auto& p : once.pairs) again.push_back(to_raw(p));
  const auto twice = filter_and_dedup_pairs(again, drugs);
  ASSERT_EQ(once.pairs.size(), twice.pairs.size());
  for (std::size_t i = 0; i < once.pairs.size(); ++i) {
    EXPECT_EQ(once.pairs[i].drug_id, twice.pairs[i].drug_id);
    EXPECT_EQ(once.pairs[i].cell_id, twice.pairs[i].cell_id);
    EXPECT_EQ(once.pairs[i].screen_id, twice.pairs[i].screen_id);
  }
  EXPECT_TRUE(twice.audit.empty());
}

TEST(CellGate, EffectiveFractionBoundary) {
  std::vector<PairRecord> pairs;
  for (int d = 0; d < 200; ++d) {
    pairs.push_back(scored("D" + std::to_string(d), "ONE", d < 1 ? 9.0 : 1.0));
    pairs.push_back(scored("D" + std::to_string(d), "TWO", d < 2 ? 9.0 : 1.0));
  }
  const std::vector<CellLineRecord> cells = {{"ONE", "Lung", {1.0}}, {"TWO", "Lung", {1.0}}};
  const auto out = filter_cell_lines(pairs, cells, 7.2734);
  ASSERT_EQ(out.cells.size(), 1u);
  EXPECT_EQ(out.cells[0].cell_id, "TWO");
  EXPECT_EQ(out.pairs.size(), 200u);
}

TEST(CellGate, UnknownCancerAndMissingExpression) {
  std::vector<PairRecord> pairs;
  for (const char* c : {"U", "N", "E", "OK"}) pairs.push_back(scored("D", c, 9.0));
  const std::vector<CellLineRecord> cells = {{"U", "Unknown", {1.0}}, {"E", "Lung", {}}, {"OK", "Lung", {1.0}}};
  const auto out = filter_cell_lines(pairs, cells, 7.2734);
  ASSERT_EQ(out.cells.size(), 1u);
  EXPECT_EQ(out.cells[0].cell_id, "OK");
  std::map<std::string, std::string> rule;
  for (const auto& a : out.audit)
    if (a.table == "cells") rule[a.key] = a.rule;
  EXPECT_EQ(rule["U"], "unknown_cancer");
  EXPECT_EQ(rule["N"], "missing_expression");
  EXPECT_EQ(rule["E"], "missing_expression");
}

TEST(SelectGenes, PanelOrderAndMissingGene) {
  ExpressionTable t;
  t.genes = {"A", "B", "C", "D", "E"};
  t.cell_ids = {"C1", "C2"};
  t.cancer_types = {"Lung", "Skin"};
  t.rows = {std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{6, 7, 8, 9, 10}};
  GenePanel all{t.genes};
  EXPECT_EQ(select_genes(t, all).values[1], (std::vector<double>{6, 7, 8, 9, 10}));
  const auto m = select_genes(t, GenePanel{{"D", "B"}});
  EXPECT_EQ(m.values[0], (std::vector<double>{4, 2}));
  try {
    select_genes(t, GenePanel{{"A", "X"}});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("gene X not found"), std::string::npos);
  }
}

TEST(SelectGenes, ShippedPanel) {
  const auto panel = read_gene_panel(std::string(CDR_DATA_DIR) + "/genes_463.txt");
  EXPECT_EQ(panel.genes.size(), 463u);
}

TEST(Splits, SmallCancerIsNovel) {
  const auto cells = cells_of({{"Rare", 14}});
  const auto plan = make_splits(cells, 1);
  EXPECT_EQ(plan.novel_test.size(), 14u);
  check_plan(plan, cells);
}

TEST(Splits, TwentyCells) {
  const auto cells = cells_of({{"Lung", 20}});
  const auto plan = make_splits(cells, 1);
  EXPECT_EQ(plan.trained_on_test.size(), 3u);
  std::multiset<std::size_t> sizes;
  for (const auto& f : plan.folds) sizes.insert(f.size());
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{3, 3, 3, 4, 4}));
}

TEST(Splits, Deterministic) {
  const auto cells = cells_of({{"Lung", 33}, {"Skin", 17}, {"Rare", 4}});
  nlohmann::json a = make_splits(cells, 42), b = make_splits(cells, 42);
  EXPECT_EQ(a.dump(), b.dump());
  nlohmann::json c = make_splits(cells, 43);
  EXPECT_NE(a.dump(), c.dump());
}

TEST(Splits, SingleCellCancerGoesToFold) {
  const auto cells = cells_of({{"Solo", 1}});
  const auto plan = make_splits(cells, 3, SplitOptions{1, 15, kFolds});
  EXPECT_TRUE(plan.trained_on_test.empty());
  EXPECT_EQ(plan.fold_of("C0"), 0);
  EXPECT_FALSE(plan.notes.empty());
}

TEST(Splits, InvariantsOnRandomDatasets) {
  Rng rng(21);
  std::uniform_int_distribution<std::size_t> n(1, 60), k(1, 6);
  for (int trial = 0; trial < 40; ++trial) {
    std::map<std::string, std::size_t> per;
    const std::size_t cancers = k(rng);
    for (std::size_t c = 0; c < cancers; ++c) per["K" + std::to_string(c)] = n(rng);
    const auto cells = cells_of(per);
    check_plan(make_splits(cells, static_cast<std::uint64_t>(trial)), cells);
  }
}

TEST(Splits, JsonRoundTrip) {
  const auto cells = cells_of({{"Lung", 25}, {"Rare", 3}});
  const auto plan = make_splits(cells, 8);
  nlohmann::json j = plan;
  const auto back = j.get<SplitPlan>();
  EXPECT_EQ(back.folds, plan.folds);
  EXPECT_EQ(back.novel_test, plan.novel_test);
  EXPECT_EQ(back.trained_on_test, plan.trained_on_test);
}

TEST(Pretraining, ExcludesEvaluatedAndSmallCancers) {
  std::vector<CellLineRecord> cells = cells_of({{"Big", 12}, {"Small", 5}});
  cells.push_back({"U1", "Unknown", {1.0}});
  const std::unordered_set<std::string> evaluated = {"C0", "C1"};
  const auto out = select_pretraining_cells(cells, evaluated, 10);
  EXPECT_EQ(out.size(), 10u);
  for (const auto& c : out) {
    EXPECT_EQ(c.cancer_type, "Big");
    EXPECT_FALSE(evaluated.count(c.cell_id));
  }
}
