#ifndef CDR_EVALUATION_HPP
#define CDR_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <json.hpp>

#include "cdr/common.hpp"

namespace cdr {

// ---------------------------------------------------------------------------
// Rankings and precision@k

struct Ranking {
  std::string cell_id;
  std::vector<std::pair<std::string, double>> entries;  // score desc, drug id asc

  std::size_t size() const { return entries.size(); }

  /// 1-based rank of a drug, or nullopt if it was not scored.
  std::optional<std::size_t> rank_of(const std::string& drug_id) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].first == drug_id) return i + 1;
    return std::nullopt;
  }
};

inline Ranking rank_drugs(const std::string& cell_id, std::vector<std::pair<std::string, double>> scores) {
  if (scores.empty()) throw std::invalid_argument("rank_drugs: no scores for cell " + cell_id);
  for (const auto& [d, s] : scores)
    if (std::isnan(s)) throw std::invalid_argument("rank_drugs: NaN score for drug " + d + " in cell " + cell_id);
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i].first == scores[i - 1].first)
      throw std::invalid_argument("rank_drugs: drug " + scores[i].first + " scored twice for cell " + cell_id);
  return {cell_id, std::move(scores)};
}

inline Ranking rank_drugs(const std::string& cell_id, const std::map<std::string, double>& scores) {
  return rank_drugs(cell_id, std::vector<std::pair<std::string, double>>(scores.begin(), scores.end()));
}

/// |top-k ∩ effective| / k.
inline double precision_cell_at_k(const Ranking& r, const std::set<std::string>& effective, std::size_t k) {
  if (k < 1 || k > r.size())
    throw std::invalid_argument("precision_cell_at_k: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(r.size()) + "] for cell " + r.cell_id);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += effective.count(r.entries[i].first);
  return static_cast<double>(hits) / static_cast<double>(k);
}

struct CancerPrecision {
  std::map<std::string, double> per_cancer;
  double overall = 0.0;  // unweighted mean over cancers
};

inline CancerPrecision precision_cancer_at_k(const std::map<std::string, double>& per_cell,
                                             const std::map<std::string, std::string>& cancer_of) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [cell, p] : per_cell) {
    auto it = cancer_of.find(cell);
    if (it == cancer_of.end()) throw std::invalid_argument("precision_cancer_at_k: no cancer for cell " + cell);
    acc[it->second].first += p;
    acc[it->second].second += 1;
  }
  if (acc.empty()) throw std::invalid_argument("precision_cancer_at_k: no cells");
  CancerPrecision out;
  for (const auto& [c, sn] : acc) out.per_cancer[c] = sn.first / static_cast<double>(sn.second);
  double s = 0.0;
  for (const auto& [c, v] : out.per_cancer) s += v;
  out.overall = s / static_cast<double>(out.per_cancer.size());
  return out;
}

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::map<std::string, std::map<std::size_t, double>> per_cell;
  std::map<std::string, std::map<std::size_t, double>> per_cancer;
  std::map<std::size_t, double> overall;
};

/// P_cell@k for every ranking and k (k values larger than a ranking are
/// skipped for that cell), then per-cancer and overall means.
inline MetricsReport compute_metrics(std::span<const Ranking> rankings,
                                     const std::map<std::string, std::set<std::string>>& effective,
                                     const std::map<std::string, std::string>& cancer_of,
                                     std::span<const std::size_t> ks) {
  MetricsReport rep;
  rep.ks.assign(ks.begin(), ks.end());
  static const std::set<std::string> none;
  for (const auto& r : rankings) {
    auto it = effective.find(r.cell_id);
    const auto& e = it == effective.end() ? none : it->second;
    for (std::size_t k : ks)
      if (k <= r.size()) rep.per_cell[r.cell_id][k] = precision_cell_at_k(r, e, k);
  }
  for (std::size_t k : ks) {
    std::map<std::string, double> pc;
    for (const auto& [cell, m] : rep.per_cell)
      if (auto f = m.find(k); f != m.end()) pc[cell] = f->second;
    if (pc.empty()) continue;
    auto cp = precision_cancer_at_k(pc, cancer_of);
    for (const auto& [c, v] : cp.per_cancer) rep.per_cancer[c][k] = v;
    rep.overall[k] = cp.overall;
  }
  return rep;
}

inline std::string metric_key(std::size_t k) { return "P@" + std::to_string(k); }

inline nlohmann::json metrics_json(const MetricsReport& r) {
  auto block = [](const std::map<std::size_t, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[metric_key(k)] = v;
    return j;
  };
  nlohmann::json j;
  j["per_cell"] = nlohmann::json::object();
  for (const auto& [c, m] : r.per_cell) j["per_cell"][c] = block(m);
  j["per_cancer"] = nlohmann::json::object();
  for (const auto& [c, m] : r.per_cancer) j["per_cancer"][c] = block(m);
  j["overall"] = block(r.overall);
  return j;
}

// ---------------------------------------------------------------------------
// Significance

/// Two-tailed p of a Student t statistic: I_{df/(df+t^2)}(df/2, 1/2).
inline double t_two_tailed_p(double t, double df) {
  if (!(df > 0)) throw std::invalid_argument("t_two_tailed_p: df must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return std::clamp(boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t)), 0.0, 1.0);
}

struct TTestResult {
  double t_stat = 0.0;
  int df = 0;
  double p = 1.0;
  double p_adjusted = 1.0;
  int n_tests = 1;
  double mean_a = 0.0;
  double mean_b = 0.0;
};

inline double bonferroni(double p, int n_tests) { return std::min(1.0, p * static_cast<double>(n_tests)); }

/// Pooled-variance two-sample t-test, two-tailed, Bonferroni-adjusted.
inline TTestResult ttest_bonferroni(std::span<const double> a, std::span<const double> b, int n_tests = 1) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("ttest: each sample needs at least 2 values");
  if (n_tests < 1) throw std::invalid_argument("ttest: n_tests must be >= 1");
  auto mean = [](std::span<const double> s) {
    return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  };
  auto ss = [](std::span<const double> s, double m) {
    double v = 0.0;
    for (double x : s) v += (x - m) * (x - m);
    return v;
  };
  TTestResult r;
  r.n_tests = n_tests;
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  r.df = static_cast<int>(a.size() + b.size() - 2);
  const double pooled = (ss(a, r.mean_a) + ss(b, r.mean_b)) / r.df;
  const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  const double diff = r.mean_a - r.mean_b;
  if (se == 0.0) {
    r.t_stat = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
  } else {
    r.t_stat = diff / se;
  }
  r.p = t_two_tailed_p(r.t_stat, r.df);
  r.p_adjusted = bonferroni(r.p, n_tests);
  return r;
}

/// "*", "**", "***" at adjusted p <= 0.1, 0.05, 0.01.
inline std::string stars(double p_adjusted) {
  if (p_adjusted <= 0.01) return "***";
  if (p_adjusted <= 0.05) return "**";
  if (p_adjusted <= 0.1) return "*";
  return "";
}

// ---------------------------------------------------------------------------
// Spearman correlation

/// Average ranks (1-based) with ties sharing their mean position.
inline std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

struct SpearmanResult {
  double rho = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  bool defined = true;  // false when either input has zero variance
};

/// Two-tailed p for a correlation coefficient via t = rho*sqrt((n-2)/(1-rho^2)).
inline double correlation_p(double rho, std::size_t n) {
  if (n < 3) throw std::invalid_argument("correlation_p: n must be >= 3");
  const double df = static_cast<double>(n - 2);
  if (std::abs(rho) >= 1.0) return 0.0;
  return t_two_tailed_p(rho * std::sqrt(df / (1.0 - rho * rho)), df);
}

inline SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("spearman: need at least 3 observations");
  const auto rx = midranks(x), ry = midranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  SpearmanResult r;
  r.n = x.size();
  if (sxx == 0.0 || syy == 0.0) {
    r.defined = false;
    r.rho = std::numeric_limits<double>::quiet_NaN();
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  r.p = correlation_p(r.rho, r.n);
  return r;
}

struct GeneCorrelation {
  std::string gene;
  double rho = 0.0;
  double p = 1.0;
};

/// Spearman between each gene's expression (rows = cells, aligned with
/// `priority`) and the drug's priority rank; keeps genes with |rho| > rho_min
/// and p < p_max, sorted by |rho| desc then gene name.
inline std::vector<GeneCorrelation> priority_correlation_screen(std::span<const double> priority,
                                                                const std::vector<std::string>& genes,
                                                                const std::vector<std::vector<double>>& expression,
                                                                double rho_min = 0.35, double p_max = 0.1) {
  if (expression.size() != priority.size())
    throw std::invalid_argument("priority_correlation_screen: expression rows != priority values");
  std::vector<GeneCorrelation> out;
  std::vector<double> col(priority.size());
  for (std::size_t g = 0; g < genes.size(); ++g) {
    for (std::size_t c = 0; c < priority.size(); ++c) {
      if (expression[c].size() != genes.size())
        throw std::invalid_argument("priority_correlation_screen: ragged expression row");
      col[c] = expression[c][g];
    }
    const auto s = spearman(col, priority);
    if (s.defined && std::abs(s.rho) > rho_min && s.p < p_max) out.push_back({genes[g], s.rho, s.p});
  }
  std::sort(out.begin(), out.end(), [](const GeneCorrelation& a, const GeneCorrelation& b) {
    if (std::abs(a.rho) != std::abs(b.rho)) return std::abs(a.rho) > std::abs(b.rho);
    return a.gene < b.gene;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Priority of approved drugs

struct CellPriority {
  std::string cell_id;
  std::string cancer;
  std::vector<std::pair<std::string, std::size_t>> approved_ranks;  // rank order
  double mean_rank = 0.0;
  std::size_t best_rank = 0;
  std::string top_drug;
};

struct CancerPriority {
  std::string cancer;
  std::size_t n_cells = 0;
  std::size_t n_approved = 0;
  double mean_rank = 0.0;  // mean over cells of per-cell mean rank
  double best_rank = 0.0;  // mean over cells of per-cell best rank
  std::string modal_top_drug;
  double modal_percent = 0.0;
  double top_drug_rank_std = 0.0;  // sample std of the modal drug's rank
};

struct PriorityReport {
  std::vector<CellPriority> cells;
  std::vector<CancerPriority> cancers;
  std::vector<std::string> notes;
};

/// Ranks of each cell's approved drugs within its ranking restricted to
/// drugs with at least one indication.
inline PriorityReport fda_priority_analysis(std::span<const Ranking> rankings,
                                            const std::map<std::string, std::set<std::string>>& indications,
                                            const std::map<std::string, std::string>& cancer_of) {
  PriorityReport rep;
  std::map<std::string, std::vector<std::size_t>> by_cancer;
  std::map<std::string, std::map<std::string, std::size_t>> restricted_rank;  // cell -> drug -> rank
  for (const auto& r : rankings) {
    auto cit = cancer_of.find(r.cell_id);
    if (cit == cancer_of.end()) throw std::invalid_argument("fda_priority_analysis: no cancer for cell " + r.cell_id);
    CellPriority cp;
    cp.cell_id = r.cell_id;
    cp.cancer = cit->second;
    std::size_t pos = 0;
    auto& rr = restricted_rank[r.cell_id];
    for (const auto& [drug, score] : r.entries) {
      auto it = indications.find(drug);
      if (it == indications.end() || it->second.empty()) continue;
      rr[drug] = ++pos;
      if (it->second.count(cp.cancer)) cp.approved_ranks.emplace_back(drug, pos);
    }
    if (cp.approved_ranks.empty()) {
      rep.notes.push_back("cell " + r.cell_id + " excluded: no drug approved for " + cp.cancer);
      continue;
    }
    double s = 0;
    for (const auto& [d, k] : cp.approved_ranks) s += static_cast<double>(k);
    cp.mean_rank = s / static_cast<double>(cp.approved_ranks.size());
    cp.best_rank = cp.approved_ranks.front().second;
    cp.top_drug = cp.approved_ranks.front().first;
    by_cancer[cp.cancer].push_back(rep.cells.size());
    rep.cells.push_back(std::move(cp));
  }
  for (const auto& [cancer, idx] : by_cancer) {
    CancerPriority c;
    c.cancer = cancer;
    c.n_cells = idx.size();
    std::map<std::string, std::size_t> votes;
    std::set<std::string> approved;
    for (std::size_t i : idx) {
      const auto& cp = rep.cells[i];
      c.mean_rank += cp.mean_rank;
      c.best_rank += static_cast<double>(cp.best_rank);
      ++votes[cp.top_drug];
      for (const auto& [d, k] : cp.approved_ranks) approved.insert(d);
    }
    c.n_approved = approved.size();
    c.mean_rank /= static_cast<double>(idx.size());
    c.best_rank /= static_cast<double>(idx.size());
    std::size_t best_votes = 0;
    for (const auto& [d, v] : votes)
      if (v > best_votes) {
        best_votes = v;
        c.modal_top_drug = d;
      }
    c.modal_percent = 100.0 * static_cast<double>(best_votes) / static_cast<double>(idx.size());
    std::vector<double> ranks;
    for (std::size_t i : idx) ranks.push_back(static_cast<double>(restricted_rank[rep.cells[i].cell_id][c.modal_top_drug]));
    if (ranks.size() >= 2) {
      const double m = std::accumulate(ranks.begin(), ranks.end(), 0.0) / static_cast<double>(ranks.size());
      double v = 0;
      for (double x : ranks) v += (x - m) * (x - m);
      c.top_drug_rank_std = std::sqrt(v / static_cast<double>(ranks.size() - 1));
    }
    rep.cancers.push_back(std::move(c));
  }
  return rep;
}

struct PriorityComparison {
  std::string cancer;
  TTestResult mean_rank;
  TTestResult best_rank;
};

/// Per cancer, t-tests of per-cell mean and best ranks between two models.
/// Cancers with fewer than 2 cells in either report are skipped.
inline std::vector<PriorityComparison> compare_priority(const PriorityReport& a, const PriorityReport& b,
                                                        int n_tests = 1) {
  auto collect = [](const PriorityReport& r) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> m;
    for (const auto& c : r.cells) {
      m[c.cancer].first.push_back(c.mean_rank);
      m[c.cancer].second.push_back(static_cast<double>(c.best_rank));
    }
    return m;
  };
  const auto ma = collect(a), mb = collect(b);
  std::vector<PriorityComparison> out;
  for (const auto& [cancer, va] : ma) {
    auto it = mb.find(cancer);
    if (it == mb.end() || va.first.size() < 2 || it->second.first.size() < 2) continue;
    out.push_back({cancer, ttest_bonferroni(va.first, it->second.first, n_tests),
                   ttest_bonferroni(va.second, it->second.second, n_tests)});
  }
  return out;
}

}  // namespace cdr

#endif  // CDR_EVALUATION_HPP
