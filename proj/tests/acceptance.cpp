// Acceptance report: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cdr/expressiveness.hpp"
#include "cdr/pipeline.hpp"
#include "cdr/synthetic.hpp"
#include "oracles.hpp"

using namespace cdr;
namespace fs = std::filesystem;
namespace pl = cdr::pipeline;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Report {
  int failures = 0;
  void line(int id, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %d %-16s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cdr_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1 --------------------------------------------------------------------------

void check_gradients(Report& rep) {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::uniform_int_distribution<int> width(1, 16), layers(1, 3), act(0, 3);
  std::normal_distribution<double> z(0.0, 1.0), small(0.0, 0.1);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool bce = trial % 2 == 0;
    std::vector<int> dims = {width(rng)};
    const int n_layers = layers(rng);
    for (int l = 0; l + 1 < n_layers; ++l) dims.push_back(width(rng));
    dims.push_back(bce ? 1 : width(rng));
    MlpModel m = make_mlp(dims, static_cast<Activation>(act(rng)), bce ? Activation::sigmoid : Activation::identity,
                          0.0, 500 + static_cast<std::uint64_t>(trial));
    for (auto& b : m.biases)
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = small(rng);
    MatrixXd x(8, dims.front()), y(8, dims.back());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = bce ? (z(rng) > 0 ? 1.0 : 0.0) : z(rng);
    worst = std::max(worst, gradient_check(m, x, y, bce ? Loss::bce : Loss::mse));
  }
  const double secs = seconds_since(t0);
  rep.line(1, "gradient-check", worst < 1e-4 && secs < 5.0,
           fmt("50 random MLPs (bce+mse), max relative error %.2e (< 1e-4), %.2f s (< 5 s)", worst, secs));
}

// 2 --------------------------------------------------------------------------

void check_ces(Report& rep) {
  Rng rng(7);
  std::uniform_real_distribution<double> le(-4.0, 2.0);
  double worst = 0.0;
  bool monotone = true;
  for (int i = 0; i < 1000; ++i) {
    const double a = std::pow(10.0, le(rng)), l = std::pow(10.0, le(rng)), c = std::pow(10.0, le(rng));
    const double v = compute_ces(a, l, c);
    worst = std::max(worst, std::abs(v - oracle::ces(a, l, c)) / std::max(1.0, std::abs(v)));
    monotone = monotone && compute_ces(a * 1.1, l, c) < v && compute_ces(a, l * 1.1, c) < v && compute_ces(a, l, c * 1.1) < v;
  }
  rep.line(2, "ces", worst < 1e-12 && monotone,
           fmt("1000 random triples, max deviation %.2e (< 1e-12); strictly decreasing in each input: %s", worst,
               monotone ? "yes" : "no"));
}

// 3 --------------------------------------------------------------------------

void check_threshold(Report& rep) {
  Rng rng(11);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(100000);
  for (auto& x : v) x = z(rng);
  const ThresholdSpec s = compute_threshold(v);
  std::size_t pos = 0;
  for (double x : v) pos += static_cast<std::size_t>(binarize(x, s));
  const double frac = static_cast<double>(pos) / static_cast<double>(v.size());
  rep.line(3, "threshold", std::abs(frac - 0.1003) <= 0.01,
           fmt("100k standard normals, labeled-1 fraction %.4f (0.1003 +- 0.01), threshold %.4f", frac, s.threshold));
}

// 4 --------------------------------------------------------------------------

void check_metrics(Report& rep) {
  Rng rng(5);
  std::uniform_int_distribution<int> n_drugs(1, 20), n_cells(1, 10), score(0, 9), n_cancers(1, 4);
  std::bernoulli_distribution eff(0.3);
  int mismatches = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int nd = n_drugs(rng), nc = n_cells(rng), ncan = n_cancers(rng);
    std::vector<Ranking> rankings;
    std::map<std::string, std::set<std::string>> effective;
    std::map<std::string, std::string> cancer_of;
    std::map<std::string, std::vector<std::pair<std::string, double>>> raw;
    for (int c = 0; c < nc; ++c) {
      const std::string cell = "C" + std::to_string(c);
      cancer_of[cell] = "K" + std::to_string(c % ncan);
      for (int d = 0; d < nd; ++d) {
        raw[cell].emplace_back("D" + std::to_string(d), score(rng) / 10.0);
        if (eff(rng)) effective[cell].insert("D" + std::to_string(d));
      }
      rankings.push_back(rank_drugs(cell, raw[cell]));
    }
    std::vector<std::size_t> ks;
    for (int k = 1; k <= nd; ++k) ks.push_back(static_cast<std::size_t>(k));
    const MetricsReport m = compute_metrics(rankings, effective, cancer_of, ks);
    for (std::size_t k : ks) {
      std::map<std::string, double> per_cell;
      for (const auto& [cell, s] : raw) {
        per_cell[cell] = oracle::precision_at_k(s, effective[cell], k);
        mismatches += m.per_cell.at(cell).at(k) != per_cell[cell];
      }
      mismatches += m.overall.at(k) != oracle::cancer_overall(per_cell, cancer_of);
    }
  }

  // Published per-cancer rows and overall row of the reference test table.
  const std::vector<std::array<double, 5>> rows = {
      {1.0000, 1.0000, 1.0000, 0.9167, 0.9333}, {1.0000, 0.8750, 0.8333, 0.8125, 0.7500},
      {1.0000, 1.0000, 0.7778, 0.7500, 0.8000}, {1.0000, 1.0000, 1.0000, 0.8750, 0.9000},
      {1.0000, 1.0000, 1.0000, 0.9167, 0.8667}, {1.0000, 0.8333, 0.7778, 0.7500, 0.8000},
      {1.0000, 1.0000, 1.0000, 1.0000, 0.9333}, {1.0000, 1.0000, 1.0000, 1.0000, 0.9000},
      {0.9231, 0.9231, 0.8974, 0.8846, 0.8615}, {1.0000, 1.0000, 1.0000, 0.8750, 0.8615},
      {0.7500, 0.8750, 0.8333, 0.8125, 0.8000}, {1.0000, 1.0000, 0.8667, 0.9000, 0.8000}};
  const std::array<double, 5> published = {0.9728, 0.9589, 0.9155, 0.8744, 0.8454};
  std::string recomputed;
  bool table_ok = true;
  for (std::size_t k = 0; k < 5; ++k) {
    std::map<std::string, double> per_cell;
    std::map<std::string, std::string> cancer_of;
    for (std::size_t c = 0; c < rows.size(); ++c) {
      per_cell["c" + std::to_string(c)] = rows[c][k];
      cancer_of["c" + std::to_string(c)] = "k" + std::to_string(c);
    }
    const double v = precision_cancer_at_k(per_cell, cancer_of).overall;
    const bool ok = std::abs(v - published[k]) <= 5e-4;
    table_ok = table_ok && ok;
    recomputed += fmt(" k=%zu %.4f/%.4f%s", k + 1, v, published[k], ok ? "" : "(!)");
  }
  std::string detail = fmt("brute force on 200 instances: %d mismatches; table overall recomputed/published:", mismatches) +
                       recomputed;
  if (!table_ok)
    detail += ". The k=5 cancer rows average to 0.8505, not 0.8454. One of those rows has 4 test cells, so its P@5 "
              "must be a multiple of 0.05; its printed 0.8615 duplicates the 13-cell row above it. With 0.8000 in "
              "that cell the mean is 0.8454";
  rep.line(4, "metrics", mismatches == 0 && table_ok, detail);
}

// 5 --------------------------------------------------------------------------

void check_statistics(Report& rep) {
  Rng rng(13);
  std::uniform_int_distribution<int> n(3, 12);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-1.5, 1.5);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(static_cast<std::size_t>(n(rng))), b(static_cast<std::size_t>(n(rng)));
    const double d = shift(rng);
    for (auto& x : a) x = z(rng);
    for (auto& x : b) x = z(rng) + d;
    const TTestResult t = ttest_bonferroni(a, b);
    const double ref = oracle::t_p_simpson(oracle::pooled_t(a, b), static_cast<double>(a.size() + b.size() - 2));
    worst = std::max(worst, std::abs(t.p - ref));
  }
  const double p = correlation_p(-0.5037, 43);
  rep.line(5, "statistics", worst < 1e-6 && p >= 0.00055 && p <= 0.00065,
           fmt("t-test p vs Simpson integration, max deviation %.2e (< 1e-6) on 100 pairs; rho=-0.5037 n=43 p=%.6f "
               "([0.00055, 0.00065])",
               worst, p));
}

// 6 + 7 ----------------------------------------------------------------------

struct Prepared {
  pl::RunConfig cfg;
  pl::Workspace ws;
};

// Synthetic dataset -> ingest -> both encoders, as `cdr synth` + `cdr ingest` + `cdr pretrain` would.
Prepared prepare(const fs::path& dir, const SyntheticConfig& sc) {
  const DatasetPaths paths = write_synthetic((dir / "data").string(), make_synthetic(sc));
  Prepared p{pl::config_from_json(pl::synthetic_run_json(paths, sc.seed), dir / "data"), pl::Workspace{dir / "ws"}};
  pl::cmd_ingest(p.cfg, p.ws);
  pl::cmd_pretrain(p.cfg, p.ws, "both");
  return p;
}

double cv_metric(const pl::VariantResult& r, const std::string& key) { return pl::cv_means(r).at(key); }

void check_contrastive_end_to_end(Report& rep) {
  double sum_p1 = 0.0, worst_secs = 0.0, total_secs = 0.0;
  int beats = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t0 = Clock::now();
    SyntheticConfig sc;
    sc.seed = seed;
    const Prepared p = prepare(scratch("e2e"), sc);
    const pl::Bundle b = pl::load_bundle(p.ws);
    std::vector<pl::VariantResult> res;
    for (const auto& v : p.cfg.variants)
      res.push_back(pl::run_variant(b, pl::build_representations(b, v, p.ws), v, p.cfg.classifier, p.cfg.ks, p.cfg.seed, false));
    const double secs = seconds_since(t0);
    worst_secs = std::max(worst_secs, secs);
    total_secs += secs;
    const double p1 = cv_metric(res[0], "P_cell@1");
    const double p5 = cv_metric(res[0], "P_cell@5"), base5 = cv_metric(res[1], "P_cell@5");
    sum_p1 += p1;
    beats += p5 > base5;
    per_seed += fmt(" [seed %llu: P_cell@1 %.3f, P_cell@5 %.3f vs %.3f, %.1f s]", static_cast<unsigned long long>(seed),
                    p1, p5, base5, secs);
  }
  const double mean_p1 = sum_p1 / 5.0;
  rep.line(6, "contrastive-e2e", mean_p1 >= 0.9 && beats == 5 && worst_secs < 120.0,
           fmt("e_d+e_c+RF mean CV P_cell@1 %.3f (>= 0.9); P_cell@5 above f+g RF on %d/5 seeds; slowest run %.1f s "
               "(< 120 s), total %.1f s;",
               mean_p1, beats, worst_secs, total_secs) +
               per_seed);
}

void check_expressiveness(Report& rep) {
  SyntheticConfig sc;
  sc.seed = 0;
  const Prepared p = prepare(scratch("expr"), sc);
  const pl::Bundle b = pl::load_bundle(p.ws);
  double raw = 0.0, embedded = 0.0;
  for (const auto& v : pl::embedding_views(b, p.ws, "cell", 2, "cell")) {
    if (v.name == "g") raw = separability(v.set).mean;
    if (v.name == "e_c") embedded = separability(v.set).mean;
  }
  const double ratio = embedded / raw;

  Rng rng(17);
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd x(45, 5);
  std::vector<std::string> groups;
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 15; ++i) {
      for (int c = 0; c < 5; ++c) x(k * 15 + i, c) = z(rng) + (c == k ? 12.0 : 0.0);
      groups.push_back("C" + std::to_string(k));
    }
  int pure = 0, descended = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TsneConfig tc;
    tc.perplexity = 10.0;
    tc.seed = seed;
    const TsneResult r = tsne(x, tc);
    pure += nearest_centroid_purity(r.coords, groups) == 1.0;
    descended += r.final_kl < r.initial_kl;
  }
  std::string detail = fmt("cell separability e_c %.3f vs raw %.3f, ratio %.2f (>= 2); t-SNE 3 clusters: 100%% purity "
                           "on %d/10 seeds, final KL < initial KL on %d/10",
                           embedded, raw, ratio, pure, descended);
  if (ratio < 2.0)
    detail += ". Sigmoid embeddings of 4 cancers sit in the positive orthant, which keeps the mean inter-group cosine "
              "near 0.5 once the distance loss saturates; intra-group cosine is already near 1, so the ratio tops out "
              "near 2";
  rep.line(7, "expressiveness", ratio >= 2.0 && pure == 10 && descended == 10, detail);
}

// 8 --------------------------------------------------------------------------

std::uint64_t fnv1a(std::uint64_t h, const std::string& bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    h = fnv1a(fnv1a(h, fs::relative(f, root).string()), ss.str());
  }
  return h;
}

std::pair<std::uint64_t, std::size_t> full_workflow(const fs::path& dir) {
  SyntheticConfig sc;
  sc.seed = 4;
  sc.drugs_per_group = 8;
  sc.pretrain_cells_per_cancer = 12;
  Prepared p = prepare(dir, sc);
  p.cfg.classifier.rf.n_estimators = 20;
  pl::cmd_pretrain(p.cfg, p.ws, "ae");
  pl::cmd_train_eval(p.cfg, p.ws);
  pl::AnalyzeOptions opt;
  opt.min_group_size = 5;
  opt.perplexity = 10;
  opt.iters = 300;
  opt.sample_rows = 300;
  pl::analyze_tsne(p.cfg, p.ws, opt);
  opt.role = "both";
  pl::analyze_expressiveness(p.cfg, p.ws, opt);
  pl::analyze_feature_importance(p.cfg, p.ws, opt);
  pl::analyze_fda(p.cfg, p.ws, opt);
  const pl::Bundle b = pl::load_bundle(p.ws);
  opt.drug = b.drugs.front().drug_id;
  opt.cancer = b.cells.front().cancer_type;
  pl::analyze_gene_correlation(p.cfg, p.ws, opt);
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    n += e.is_regular_file();
  return {tree_hash(dir), n};
}

void check_determinism(Report& rep) {
  const auto [a, na] = full_workflow(scratch("det_a"));
  const auto [b, nb] = full_workflow(scratch("det_b"));
  rep.line(8, "determinism", a == b && na == nb && na > 30,
           fmt("full synthetic workflow twice in separate directories: %zu files, hash %016llx vs %016llx", na,
               static_cast<unsigned long long>(a), static_cast<unsigned long long>(b)));
}

// 9 --------------------------------------------------------------------------

double accuracy(const VectorXd& p, const std::vector<int>& y) {
  int ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += (p(static_cast<Eigen::Index>(i)) >= 0.5) == (y[i] == 1);
  return static_cast<double>(ok) / static_cast<double>(y.size());
}

void check_forest(Report& rep) {
  MatrixXd xor_x(4, 2);
  xor_x << 0, 0, 0, 1, 1, 0, 1, 1;
  const std::vector<int> xor_y = {0, 1, 1, 0};
  ForestConfig c;
  c.min_samples_split = 2;
  c.n_estimators = 25;
  c.seed = 1;
  const double acc = accuracy(predict_scores(train_forest(xor_x, xor_y, c), xor_x), xor_y);

  Rng rng(21);
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd x(400, 6);
  std::vector<int> y(400);
  for (int i = 0; i < 400; ++i) {
    for (int f = 0; f < 6; ++f) x(i, f) = z(rng);
    y[static_cast<std::size_t>(i)] = x(i, 0) > 0 ? 1 : 0;
  }
  ForestConfig s;
  s.n_estimators = 50;
  s.seed = 3;
  const VectorXd imp = forest_importance(train_forest(x, y, s));
  rep.line(9, "forest", acc == 1.0 && std::abs(imp.sum() - 1.0) <= 1e-9 && imp(0) >= 0.9,
           fmt("XOR training accuracy %.3f (1.0); importance sum - 1 = %.1e (+-1e-9); signal feature importance %.4f "
               "(>= 0.9)",
               acc, imp.sum() - 1.0, imp(0)));
}

}  // namespace

int main() {
  Report rep;
  const std::vector<std::function<void(Report&)>> criteria = {
      check_gradients,   check_ces,         check_threshold,      check_metrics,     check_statistics,
      check_contrastive_end_to_end, check_expressiveness, check_determinism, check_forest};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i](rep);
    } catch (const std::exception& e) {
      rep.line(static_cast<int>(i + 1), "error", false, e.what());
    }
  }
  std::printf("%d criteria failed\n", rep.failures);
  return rep.failures == 0 ? 0 : 1;
}
