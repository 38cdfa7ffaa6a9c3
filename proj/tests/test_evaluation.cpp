#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "cdr/evaluation.hpp"
#include "oracles.hpp"

using namespace cdr;

namespace {

Ranking ranking(const std::string& cell, const std::vector<std::string>& order) {
  std::vector<std::pair<std::string, double>> s;
  for (std::size_t i = 0; i < order.size(); ++i) s.emplace_back(order[i], 1.0 - 0.1 * static_cast<double>(i));
  return rank_drugs(cell, s);
}

std::vector<std::string> ids(const Ranking& r) {
  std::vector<std::string> out;
  for (const auto& e : r.entries) out.push_back(e.first);
  return out;
}

}  // namespace

TEST(Rank, OrderAndTieBreak) {
  EXPECT_EQ(ids(rank_drugs("c", std::map<std::string, double>{{"A", 0.9}, {"B", 0.1}})),
            (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(ids(rank_drugs("c", std::vector<std::pair<std::string, double>>{{"B", 0.5}, {"A", 0.5}})),
            (std::vector<std::string>{"A", "B"}));
}

TEST(Rank, PermutationInvariant) {
  std::vector<std::pair<std::string, double>> s = {{"A", 0.3}, {"B", 0.9}, {"C", 0.3}, {"D", 0.1}, {"E", 0.9}};
  const auto base = ids(rank_drugs("c", s));
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(s.begin(), s.end(), rng);
    EXPECT_EQ(ids(rank_drugs("c", s)), base);
  }
  EXPECT_EQ(rank_drugs("c", s).rank_of("E"), 2u);
}

TEST(Rank, RejectsNaNEmptyAndDuplicates) {
  using V = std::vector<std::pair<std::string, double>>;
  EXPECT_THROW(rank_drugs("c", V{{"A", NAN}}), std::invalid_argument);
  EXPECT_THROW(rank_drugs("c", V{}), std::invalid_argument);
  EXPECT_THROW(rank_drugs("c", V{{"A", 0.1}, {"A", 0.2}}), std::invalid_argument);
}

TEST(PrecisionCell, HandCounts) {
  const auto r = ranking("c", {"A", "C", "B", "D"});
  const std::set<std::string> e = {"A", "B"};
  EXPECT_DOUBLE_EQ(precision_cell_at_k(r, e, 2), 0.5);
  EXPECT_DOUBLE_EQ(precision_cell_at_k(r, e, 3), 2.0 / 3.0);
  for (std::size_t k = 1; k <= 4; ++k) EXPECT_EQ(precision_cell_at_k(r, {}, k), 0.0);
  EXPECT_THROW(precision_cell_at_k(r, e, 0), std::invalid_argument);
  EXPECT_THROW(precision_cell_at_k(r, e, 5), std::invalid_argument);
}

TEST(PrecisionCell, MatchesBruteForceAndHitCountIsMonotone) {
  Rng rng(2);
  std::uniform_int_distribution<int> nd(1, 20), score(0, 9);
  std::bernoulli_distribution eff(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, double>> s;
    std::set<std::string> e;
    const int n = nd(rng);
    for (int d = 0; d < n; ++d) {
      s.emplace_back("D" + std::to_string(d), score(rng) / 10.0);
      if (eff(rng)) e.insert(s.back().first);
    }
    const auto r = rank_drugs("c", s);
    double prev_hits = 0;
    for (std::size_t k = 1; k <= r.size(); ++k) {
      const double p = precision_cell_at_k(r, e, k);
      EXPECT_EQ(p, oracle::precision_at_k(s, e, k));
      const double hits = p * static_cast<double>(k);
      EXPECT_NEAR(hits, std::round(hits), 1e-12);
      EXPECT_GE(hits, prev_hits - 1e-12);
      prev_hits = hits;
    }
  }
}

TEST(PrecisionCancer, UnweightedAcrossCancers) {
  const std::map<std::string, std::string> cancer = {{"a", "X"}, {"b", "X"}, {"c", "Y"}, {"d", "Z"}, {"e", "Z"}, {"f", "Z"}};
  const auto one = precision_cancer_at_k({{"a", 1.0}, {"b", 0.0}}, cancer);
  EXPECT_DOUBLE_EQ(one.per_cancer.at("X"), 0.5);
  const auto two = precision_cancer_at_k({{"c", 1.0}, {"d", 0.0}, {"e", 0.0}, {"f", 0.0}}, cancer);
  EXPECT_DOUBLE_EQ(two.overall, 0.5);
  const auto singles = precision_cancer_at_k({{"a", 0.25}, {"c", 0.75}}, cancer);
  EXPECT_DOUBLE_EQ(singles.per_cancer.at("X"), 0.25);
  EXPECT_DOUBLE_EQ(singles.per_cancer.at("Y"), 0.75);
  EXPECT_THROW(precision_cancer_at_k({{"zz", 1.0}}, cancer), std::invalid_argument);
  EXPECT_THROW(precision_cancer_at_k({}, cancer), std::invalid_argument);
}

TEST(PrecisionCancer, PublishedOverallRow) {
  // Reference per-cancer rows (4 decimals) and their overall row. The fifth
  // column does not average to its overall value; the acceptance report
  // covers it.
  const std::vector<std::array<double, 5>> rows = {
      {1.0000, 1.0000, 1.0000, 0.9167, 0.9333}, {1.0000, 0.8750, 0.8333, 0.8125, 0.7500},
      {1.0000, 1.0000, 0.7778, 0.7500, 0.8000}, {1.0000, 1.0000, 1.0000, 0.8750, 0.9000},
      {1.0000, 1.0000, 1.0000, 0.9167, 0.8667}, {1.0000, 0.8333, 0.7778, 0.7500, 0.8000},
      {1.0000, 1.0000, 1.0000, 1.0000, 0.9333}, {1.0000, 1.0000, 1.0000, 1.0000, 0.9000},
      {0.9231, 0.9231, 0.8974, 0.8846, 0.8615}, {1.0000, 1.0000, 1.0000, 0.8750, 0.8615},
      {0.7500, 0.8750, 0.8333, 0.8125, 0.8000}, {1.0000, 1.0000, 0.8667, 0.9000, 0.8000}};
  const std::array<double, 5> overall = {0.9728, 0.9589, 0.9155, 0.8744, 0.8454};
  for (std::size_t k = 0; k < 4; ++k) {
    std::map<std::string, double> per_cell;
    std::map<std::string, std::string> cancer_of;
    for (std::size_t c = 0; c < rows.size(); ++c) {
      per_cell["cell" + std::to_string(c)] = rows[c][k];
      cancer_of["cell" + std::to_string(c)] = "cancer" + std::to_string(c);
    }
    EXPECT_NEAR(precision_cancer_at_k(per_cell, cancer_of).overall, overall[k], 5e-4) << "k=" << k + 1;
  }
}

TEST(PrecisionCancer, CellOrderInvariant) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> g(0, 3);
  std::map<std::string, double> pc;
  std::map<std::string, std::string> cancer;
  for (int i = 0; i < 30; ++i) {
    pc["c" + std::to_string(i)] = u(rng);
    cancer["c" + std::to_string(i)] = "K" + std::to_string(g(rng));
  }
  EXPECT_NEAR(precision_cancer_at_k(pc, cancer).overall, oracle::cancer_overall(pc, cancer), 1e-15);
}

TEST(Metrics, ReportCombinesRankingsAndCancers) {
  const std::vector<Ranking> rs = {ranking("c1", {"A", "B", "C"}), ranking("c2", {"B", "A", "C"})};
  const std::map<std::string, std::set<std::string>> eff = {{"c1", {"A"}}, {"c2", {"A"}}};
  const std::map<std::string, std::string> cancer = {{"c1", "X"}, {"c2", "Y"}};
  const std::vector<std::size_t> ks = {1, 2};
  const auto rep = compute_metrics(rs, eff, cancer, ks);
  EXPECT_DOUBLE_EQ(rep.per_cell.at("c1").at(1), 1.0);
  EXPECT_DOUBLE_EQ(rep.per_cell.at("c2").at(1), 0.0);
  EXPECT_DOUBLE_EQ(rep.overall.at(1), 0.5);
  EXPECT_DOUBLE_EQ(rep.overall.at(2), 0.5);
  const auto j = metrics_json(rep);
  EXPECT_DOUBLE_EQ(j["overall"]["P@1"].get<double>(), 0.5);
}

TEST(TTest, WorkedExample) {
  const std::vector<double> a = {1, 2, 3}, b = {4, 5, 6};
  const auto r = ttest_bonferroni(a, b);
  EXPECT_NEAR(r.t_stat, -3.674, 5e-4);
  EXPECT_EQ(r.df, 4);
  EXPECT_NEAR(r.p, 0.0213, 5e-5);
  EXPECT_NEAR(r.p, oracle::t_p_simpson(r.t_stat, 4), 1e-9);
}

TEST(TTest, IdenticalSamples) {
  const std::vector<double> a = {2, 2, 2};
  const auto r = ttest_bonferroni(a, a, 3);
  EXPECT_EQ(r.t_stat, 0.0);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_EQ(r.p_adjusted, 1.0);
}

TEST(TTest, Bonferroni) {
  EXPECT_DOUBLE_EQ(bonferroni(0.01, 4), 0.04);
  EXPECT_EQ(bonferroni(0.4, 4), 1.0);
  Rng rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    const double p = u(rng);
    EXPECT_GE(bonferroni(p, 3), p);
    EXPECT_LE(bonferroni(p, 3), 1.0);
  }
}

TEST(TTest, SwapNegatesTAndKeepsP) {
  Rng rng(5);
  std::normal_distribution<double> z(0, 1);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> a(5), b(7);
    for (auto& v : a) v = z(rng);
    for (auto& v : b) v = z(rng) + 0.5;
    const auto ab = ttest_bonferroni(a, b), ba = ttest_bonferroni(b, a);
    EXPECT_DOUBLE_EQ(ab.t_stat, -ba.t_stat);
    EXPECT_DOUBLE_EQ(ab.p, ba.p);
    EXPECT_NEAR(ab.t_stat, oracle::pooled_t(a, b), 1e-12);
    EXPECT_NEAR(ab.p, oracle::t_p_simpson(ab.t_stat, ab.df), 1e-8);
  }
}

TEST(TTest, RejectsTinySamples) {
  const std::vector<double> a = {1}, b = {1, 2};
  EXPECT_THROW(ttest_bonferroni(a, b), std::invalid_argument);
}

TEST(Stars, Levels) {
  EXPECT_EQ(stars(0.005), "***");
  EXPECT_EQ(stars(0.01), "***");
  EXPECT_EQ(stars(0.03), "**");
  EXPECT_EQ(stars(0.1), "*");
  EXPECT_EQ(stars(0.2), "");
}

TEST(Spearman, MonotoneCases) {
  const std::vector<double> x = {1, 2, 3}, up = {2, 4, 6}, down = {6, 4, 2};
  EXPECT_DOUBLE_EQ(spearman(x, up).rho, 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, down).rho, -1.0);
}

TEST(Spearman, PublishedCorrelationP) {
  const double p = correlation_p(-0.5037, 43);
  EXPECT_GE(p, 0.00055);
  EXPECT_LE(p, 0.00065);
}

TEST(Spearman, MidranksAndTies) {
  const std::vector<double> x = {10, 20, 20, 30};
  EXPECT_EQ(midranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
  const std::vector<double> c = {1, 1, 1}, y = {1, 2, 3};
  EXPECT_FALSE(spearman(c, y).defined);
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
  Rng rng(6);
  std::normal_distribution<double> z(0, 1);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> x(15), y(15), fx(15), gy(15);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = z(rng);
      y[i] = x[i] + z(rng);
      fx[i] = std::exp(x[i]);
      gy[i] = y[i] * y[i] * y[i] - 4.0;
    }
    const auto a = spearman(x, y), b = spearman(fx, gy);
    EXPECT_NEAR(a.rho, b.rho, 1e-14);
    EXPECT_NEAR(a.p, b.p, 1e-12);
  }
}

TEST(CorrelationScreen, RecoversPlantedGenes) {
  Rng rng(7);
  std::normal_distribution<double> z(0, 1);
  const std::size_t n = 40, n_genes = 50;
  Eigen::VectorXd trend(n);
  std::vector<double> priority(n);
  for (std::size_t c = 0; c < n; ++c) {
    priority[c] = static_cast<double>(c + 1);
    trend(static_cast<Eigen::Index>(c)) = (static_cast<double>(c) - 19.5) / 11.5;  // unit sd
  }
  std::vector<std::vector<double>> expr(n, std::vector<double>(n_genes));
  std::vector<std::string> genes;
  for (std::size_t g = 0; g < n_genes; ++g) {
    genes.push_back("G" + std::to_string(g));
    Eigen::VectorXd noise(n);
    for (auto& v : noise) v = z(rng);
    if (g < 5) {
      noise += (g % 2 ? -1.0 : 1.0) * trend;  // signal:noise 1:1, rho about 0.7
    } else {
      noise -= trend * (trend.dot(noise) / trend.squaredNorm());  // no linear trend at all
    }
    for (std::size_t c = 0; c < n; ++c) expr[c][g] = 5.0 + noise(static_cast<Eigen::Index>(c));
  }
  const auto hits = priority_correlation_screen(priority, genes, expr, 0.35, 0.1);
  std::set<std::string> found;
  for (const auto& h : hits) found.insert(h.gene);
  EXPECT_EQ(found, (std::set<std::string>{"G0", "G1", "G2", "G3", "G4"}));
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_GE(std::abs(hits[i - 1].rho), std::abs(hits[i].rho));
}

TEST(CorrelationScreen, ConstantGeneExcluded) {
  const std::vector<double> priority = {1, 2, 3, 4};
  const std::vector<std::vector<double>> expr = {{1, 7}, {2, 7}, {3, 7}, {4, 7}};
  const auto hits = priority_correlation_screen(priority, {"track", "flat"}, expr, 0.35, 0.5);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].gene, "track");
  EXPECT_DOUBLE_EQ(hits[0].rho, 1.0);
}

TEST(FdaPriority, SingleApprovedDrug) {
  const std::vector<Ranking> rs = {ranking("c1", {"A", "B", "C"})};
  const std::map<std::string, std::set<std::string>> ind = {{"A", {"Skin"}}, {"B", {"Lung"}}, {"C", {"Skin"}}};
  const auto rep = fda_priority_analysis(rs, ind, {{"c1", "Lung"}});
  ASSERT_EQ(rep.cells.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.cells[0].mean_rank, 2.0);
  EXPECT_EQ(rep.cells[0].best_rank, 2u);
  EXPECT_EQ(rep.cells[0].top_drug, "B");
}

TEST(FdaPriority, TwoApprovedDrugs) {
  const std::vector<Ranking> rs = {ranking("c1", {"A", "B", "C"})};
  const std::map<std::string, std::set<std::string>> ind = {{"A", {"Lung"}}, {"B", {"Skin"}}, {"C", {"Lung"}}};
  const auto rep = fda_priority_analysis(rs, ind, {{"c1", "Lung"}});
  EXPECT_DOUBLE_EQ(rep.cells[0].mean_rank, 2.0);
  EXPECT_EQ(rep.cells[0].best_rank, 1u);
}

TEST(FdaPriority, RestrictsToIndicatedDrugsAndAggregates) {
  // X has no indication and must not shift ranks.
  const std::vector<Ranking> rs = {ranking("c1", {"X", "A", "B"}), ranking("c2", {"A", "X", "B"}),
                                   ranking("c3", {"B", "A", "X"}), ranking("c4", {"X", "B"})};
  const std::map<std::string, std::set<std::string>> ind = {{"A", {"Lung"}}, {"B", {"Lung", "Skin"}}, {"X", {}}};
  const std::map<std::string, std::string> cancer = {{"c1", "Lung"}, {"c2", "Lung"}, {"c3", "Lung"}, {"c4", "Bone"}};
  const auto rep = fda_priority_analysis(rs, ind, cancer);
  ASSERT_EQ(rep.cells.size(), 3u);
  EXPECT_EQ(rep.notes.size(), 1u);
  ASSERT_EQ(rep.cancers.size(), 1u);
  const auto& lung = rep.cancers[0];
  EXPECT_EQ(lung.n_cells, 3u);
  EXPECT_EQ(lung.n_approved, 2u);
  EXPECT_DOUBLE_EQ(lung.mean_rank, 1.5);
  EXPECT_DOUBLE_EQ(lung.best_rank, 1.0);
  EXPECT_EQ(lung.modal_top_drug, "A");
  EXPECT_NEAR(lung.modal_percent, 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(lung.top_drug_rank_std, std::sqrt(1.0 / 3.0), 1e-12);  // A ranks {1, 1, 2}
}

TEST(FdaPriority, UnanimousTopDrug) {
  const std::vector<Ranking> rs = {ranking("c1", {"A", "B"}), ranking("c2", {"A", "B"})};
  const std::map<std::string, std::set<std::string>> ind = {{"A", {"Lung"}}, {"B", {"Lung"}}};
  const auto rep = fda_priority_analysis(rs, ind, {{"c1", "Lung"}, {"c2", "Lung"}});
  EXPECT_DOUBLE_EQ(rep.cancers[0].modal_percent, 100.0);
  EXPECT_DOUBLE_EQ(rep.cancers[0].top_drug_rank_std, 0.0);
}
