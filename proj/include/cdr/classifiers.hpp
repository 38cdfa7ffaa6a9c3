#ifndef CDR_CLASSIFIERS_HPP
#define CDR_CLASSIFIERS_HPP

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdr/common.hpp"
#include "cdr/neural.hpp"

namespace cdr {

// ---------------------------------------------------------------------------
// Feature vectors: drug block first, then cell block.

enum class FeatureSource : std::uint8_t { drug, cell };

struct FeatureSet {
  MatrixXd x;
  std::vector<FeatureSource> source_mask;

  std::size_t drug_width() const {
    return static_cast<std::size_t>(std::count(source_mask.begin(), source_mask.end(), FeatureSource::drug));
  }
};

/// Row i of the result is [drug_rows(drug_index[i]) | cell_rows(cell_index[i])].
inline FeatureSet concat_features(const MatrixXd& drug_rows, std::span<const std::size_t> drug_index,
                                  const MatrixXd& cell_rows, std::span<const std::size_t> cell_index) {
  if (drug_index.size() != cell_index.size())
    throw std::invalid_argument("concat_features: index lists differ in length");
  const Eigen::Index dw = drug_rows.cols(), cw = cell_rows.cols();
  FeatureSet fs;
  fs.x.resize(static_cast<Eigen::Index>(drug_index.size()), dw + cw);
  for (std::size_t i = 0; i < drug_index.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    fs.x.row(r).head(dw) = drug_rows.row(static_cast<Eigen::Index>(drug_index[i]));
    fs.x.row(r).tail(cw) = cell_rows.row(static_cast<Eigen::Index>(cell_index[i]));
  }
  fs.source_mask.assign(static_cast<std::size_t>(dw), FeatureSource::drug);
  fs.source_mask.insert(fs.source_mask.end(), static_cast<std::size_t>(cw), FeatureSource::cell);
  return fs;
}

namespace detail {

inline void check_binary(const MatrixXd& x, std::span<const int> y) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw std::invalid_argument("classifier: X has " + std::to_string(x.rows()) + " rows but y has " +
                                std::to_string(y.size()));
  for (int v : y)
    if (v != 0 && v != 1) throw std::invalid_argument("classifier: labels must be 0 or 1");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Logistic regression

struct LogisticConfig {
  double l2 = 0.0;  // lambda; penalty is lambda/2 * |w|^2, intercept unpenalized
  double step = 1.0;
  int max_iter = 5000;
  double tol = 1e-6;
};

struct LogisticModel {
  VectorXd coefficients;
  double intercept = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;  // single-class labels without regularization
};

namespace detail {

inline double logistic_objective(const MatrixXd& x, const VectorXd& yv, const VectorXd& w, double b,
                                 double l2) {
  const VectorXd z = (x * w).array() + b;
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) s += softplus(z(i)) - yv(i) * z(i);
  return s / static_cast<double>(z.size()) + 0.5 * l2 * w.squaredNorm();
}

}  // namespace detail

/// Full-batch gradient descent on mean BCE (+ L2). The step is halved
/// whenever it would increase the objective.
inline LogisticModel train_logistic(const MatrixXd& x, std::span<const int> y, const LogisticConfig& cfg = {}) {
  detail::check_binary(x, y);
  if (x.rows() < 2) throw std::invalid_argument("train_logistic: need at least 2 rows");
  const double n = static_cast<double>(x.rows());
  VectorXd yv(x.rows());
  for (Eigen::Index i = 0; i < yv.size(); ++i) yv(i) = y[static_cast<std::size_t>(i)];
  LogisticModel m;
  m.coefficients = VectorXd::Zero(x.cols());
  const bool single_class = yv.minCoeff() == yv.maxCoeff();
  m.diverged = single_class && cfg.l2 == 0.0;

  double step = cfg.step;
  double obj = detail::logistic_objective(x, yv, m.coefficients, m.intercept, cfg.l2);
  for (int it = 0; it < cfg.max_iter; ++it) {
    VectorXd z = (x * m.coefficients).array() + m.intercept;
    VectorXd r(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) r(i) = sigmoid(z(i)) - yv(i);
    VectorXd gw = x.transpose() * r / n + cfg.l2 * m.coefficients;
    double gb = r.sum() / n;
    const double gmax = std::max(gw.size() ? gw.cwiseAbs().maxCoeff() : 0.0, std::abs(gb));
    m.iterations = it;
    if (gmax < cfg.tol) {
      m.converged = true;
      break;
    }
    bool moved = false;
    for (int h = 0; h < 60; ++h) {
      VectorXd w2 = m.coefficients - step * gw;
      double b2 = m.intercept - step * gb;
      double o2 = detail::logistic_objective(x, yv, w2, b2, cfg.l2);
      if (std::isfinite(o2) && o2 <= obj) {
        m.coefficients = std::move(w2);
        m.intercept = b2;
        obj = o2;
        moved = true;
        step = std::min(cfg.step, 2.0 * step);
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // step underflow: at numerical optimum
  }
  if (!m.coefficients.allFinite() || !std::isfinite(m.intercept))
    throw NumericalError("logistic regression produced non-finite coefficients");
  return m;
}

inline VectorXd predict_scores(const LogisticModel& m, const MatrixXd& x) {
  if (x.cols() != m.coefficients.size())
    throw std::invalid_argument("logistic: input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(m.coefficients.size()));
  VectorXd z = (x * m.coefficients).array() + m.intercept;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Random forest

enum class Criterion { gini, entropy };

inline std::string to_string(Criterion c) { return c == Criterion::gini ? "gini" : "entropy"; }

inline Criterion parse_criterion(const std::string& s) {
  if (s == "gini") return Criterion::gini;
  if (s == "entropy") return Criterion::entropy;
  throw InputError("criterion must be gini or entropy, got \"" + s + "\"");
}

struct ForestConfig {
  Criterion criterion = Criterion::gini;
  int n_estimators = 100;
  int min_samples_split = 20;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 -> worker_count()
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;     // weighted positive fraction
  double weight = 0.0;    // bootstrap-weighted sample count
  double decrease = 0.0;  // weighted impurity decrease of this split
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const double* row, Eigen::Index stride) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = row[n.feature * stride] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  std::size_t depth() const {
    std::function<std::size_t(int)> rec = [&](int i) -> std::size_t {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      return n.feature < 0 ? 0 : 1 + std::max(rec(n.left), rec(n.right));
    };
    return nodes.empty() ? 0 : rec(0);
  }
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  ForestConfig config;
  int n_features = 0;
};

inline double impurity(double pos, double total, Criterion c) {
  if (total <= 0.0) return 0.0;
  const double p = pos / total;
  if (c == Criterion::gini) return 2.0 * p * (1.0 - p);
  double h = 0.0;
  if (p > 0.0) h -= p * std::log2(p);
  if (p < 1.0) h -= (1.0 - p) * std::log2(1.0 - p);
  return h;
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXd& x, const std::vector<double>& yv,
              const std::vector<std::vector<std::uint32_t>>& global_order, const std::vector<double>& weight,
              const ForestConfig& cfg)
      : x_(x), y_(yv), w_(weight), cfg_(cfg), goes_left_(yv.size(), 0) {
    const std::size_t d = global_order.size();
    order_.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
      order_[f].reserve(global_order[f].size());
      for (std::uint32_t i : global_order[f])
        if (w_[i] > 0.0) order_[f].push_back(i);
    }
    buffer_.resize(order_.empty() ? 0 : order_[0].size());
  }

  DecisionTree build() {
    DecisionTree t;
    const std::size_t m = order_.empty() ? 0 : order_[0].size();
    struct Pending {
      int node;
      std::size_t begin, end;
    };
    t.nodes.emplace_back();
    std::vector<Pending> stack{{0, 0, m}};
    if (order_.empty()) {
      // No features: single leaf over the in-bag rows.
      double wsum = 0, pos = 0;
      for (std::size_t i = 0; i < w_.size(); ++i) {
        wsum += w_[i];
        pos += w_[i] * y_[i];
      }
      t.nodes[0].weight = wsum;
      t.nodes[0].value = wsum > 0 ? pos / wsum : 0.0;
      return t;
    }
    while (!stack.empty()) {
      Pending p = stack.back();
      stack.pop_back();
      double wsum = 0.0, pos = 0.0;
      for (std::size_t k = p.begin; k < p.end; ++k) {
        const std::uint32_t i = order_[0][k];
        wsum += w_[i];
        pos += w_[i] * y_[i];
      }
      TreeNode& node = t.nodes[static_cast<std::size_t>(p.node)];
      node.weight = wsum;
      node.value = wsum > 0.0 ? pos / wsum : 0.0;
      const double parent_imp = impurity(pos, wsum, cfg_.criterion);
      if (wsum < static_cast<double>(cfg_.min_samples_split) || parent_imp <= 0.0) continue;

      int best_f = -1;
      double best_thr = 0.0, best_dec = 0.0;
      for (std::size_t f = 0; f < order_.size(); ++f) {
        const auto& ord = order_[f];
        const double* col = x_.col(static_cast<Eigen::Index>(f)).data();
        double lw = 0.0, lp = 0.0;
        for (std::size_t k = p.begin; k + 1 < p.end; ++k) {
          const std::uint32_t i = ord[k];
          lw += w_[i];
          lp += w_[i] * y_[i];
          const double v = col[i], vn = col[ord[k + 1]];
          if (!(vn > v)) continue;
          const double rw = wsum - lw, rp = pos - lp;
          const double dec = wsum * parent_imp - lw * impurity(lp, lw, cfg_.criterion) -
                             rw * impurity(rp, rw, cfg_.criterion);
          if (dec > best_dec + 1e-12 * wsum) {
            best_dec = dec;
            best_f = static_cast<int>(f);
            best_thr = v + (vn - v) / 2.0;
            if (!(best_thr < vn)) best_thr = v;  // midpoint collapsed onto vn
          }
        }
      }
      if (best_f < 0) continue;

      const double* col = x_.col(best_f).data();
      std::size_t n_left = 0;
      for (std::size_t k = p.begin; k < p.end; ++k) {
        const std::uint32_t i = order_[0][k];
        goes_left_[i] = col[i] <= best_thr;
        n_left += goes_left_[i];
      }
      for (auto& ord : order_) {
        std::size_t l = p.begin, r = 0;
        for (std::size_t k = p.begin; k < p.end; ++k) {
          const std::uint32_t i = ord[k];
          if (goes_left_[i])
            ord[l++] = i;
          else
            buffer_[r++] = i;
        }
        std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r),
                  ord.begin() + static_cast<std::ptrdiff_t>(l));
      }
      const int li = static_cast<int>(t.nodes.size());
      t.nodes.emplace_back();
      t.nodes.emplace_back();
      TreeNode& parent = t.nodes[static_cast<std::size_t>(p.node)];
      parent.feature = best_f;
      parent.threshold = best_thr;
      parent.left = li;
      parent.right = li + 1;
      parent.decrease = best_dec;
      const std::size_t mid = p.begin + n_left;
      stack.push_back({li + 1, mid, p.end});
      stack.push_back({li, p.begin, mid});
    }
    return t;
  }

 private:
  const MatrixXd& x_;
  const std::vector<double>& y_;
  const std::vector<double>& w_;
  const ForestConfig& cfg_;
  std::vector<std::vector<std::uint32_t>> order_;
  std::vector<std::uint32_t> buffer_;
  std::vector<char> goes_left_;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers; each index is
/// handled exactly once, so results written by index are schedule-free.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  const unsigned t = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  for (unsigned w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline ForestModel train_forest(const MatrixXd& x, std::span<const int> y, const ForestConfig& cfg = {}) {
  detail::check_binary(x, y);
  if (x.rows() == 0) throw std::invalid_argument("train_forest: empty X");
  if (cfg.n_estimators <= 0) throw InputError("n_estimators must be > 0");
  if (cfg.min_samples_split < 2) throw InputError("min_samples_split must be >= 2");
  if (x.rows() < cfg.min_samples_split)
    throw std::invalid_argument("train_forest: fewer rows than min_samples_split");
  if (!x.allFinite()) throw std::invalid_argument("train_forest: non-finite feature value");
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t d = static_cast<std::size_t>(x.cols());
  std::vector<double> yv(y.begin(), y.end());

  std::vector<std::vector<std::uint32_t>> order(d);
  for (std::size_t f = 0; f < d; ++f) {
    order[f].resize(n);
    std::iota(order[f].begin(), order[f].end(), 0u);
    const double* col = x.col(static_cast<Eigen::Index>(f)).data();
    std::stable_sort(order[f].begin(), order[f].end(),
                     [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
  }

  ForestModel model;
  model.config = cfg;
  model.n_features = static_cast<int>(d);
  model.trees.resize(static_cast<std::size_t>(cfg.n_estimators));
  const unsigned threads = cfg.threads ? cfg.threads : worker_count();
  detail::parallel_for(model.trees.size(), threads, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> weight(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) weight[pick(rng)] += 1.0;
    detail::TreeBuilder builder(x, yv, order, weight, cfg);
    model.trees[t] = builder.build();
  });
  return model;
}

inline VectorXd predict_scores(const ForestModel& m, const MatrixXd& x) {
  if (x.cols() != m.n_features)
    throw std::invalid_argument("forest: input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(m.n_features));
  VectorXd out = VectorXd::Zero(x.rows());
  if (m.trees.empty()) return out;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (const auto& t : m.trees) s += t.predict(x.data() + r, x.rows());
    out(r) = s / static_cast<double>(m.trees.size());
  }
  return out;
}

/// Mean decrease in impurity: per-tree totals normalized to 1, averaged over
/// trees, then renormalized. All zeros when no tree ever splits.
inline VectorXd forest_importance(const ForestModel& m) {
  VectorXd acc = VectorXd::Zero(m.n_features);
  for (const auto& t : m.trees) {
    VectorXd per = VectorXd::Zero(m.n_features);
    for (const auto& n : t.nodes)
      if (n.feature >= 0) per(n.feature) += n.decrease;
    const double s = per.sum();
    if (s > 0.0) acc += per / s;
  }
  const double s = acc.sum();
  return s > 0.0 ? VectorXd(acc / s) : acc;
}

// ---------------------------------------------------------------------------
// DNN classifier

struct DnnConfig {
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::relu;
  double dropout_rate = 0.1;
  double val_fraction = 0.1;
  TrainConfig train = [] {
    TrainConfig c;
    c.decay_steps = 500;
    c.batch_size = 256;
    return c;
  }();
};

struct DnnModel {
  MlpModel net;
  TrainReport report;
};

inline DnnModel train_dnn(const MatrixXd& x, std::span<const int> y, const DnnConfig& cfg = {}) {
  detail::check_binary(x, y);
  if (x.rows() < 2) throw std::invalid_argument("train_dnn: need at least 2 rows");
  std::vector<int> dims = {static_cast<int>(x.cols())};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  MlpModel net = make_mlp(dims, cfg.activation, Activation::sigmoid, cfg.dropout_rate,
                          derive_seed(cfg.train.seed, "dnn-init"));
  MatrixXd yv(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) yv(i, 0) = y[static_cast<std::size_t>(i)];
  auto [ti, vi] = holdout_split(static_cast<std::size_t>(x.rows()), cfg.val_fraction,
                                derive_seed(cfg.train.seed, "dnn-split"));
  SupervisedSet tr{gather_rows(x, ti), gather_rows(yv, ti)};
  SupervisedSet va{gather_rows(x, vi), gather_rows(yv, vi)};
  TrainConfig tc = cfg.train;
  tc.loss = Loss::bce;
  auto [best, report] = train(std::move(net), tr, va, tc);
  return {std::move(best), std::move(report)};
}

inline VectorXd predict_scores(const DnnModel& m, const MatrixXd& x) { return predict(m.net, x).col(0); }

// ---------------------------------------------------------------------------
// Uniform handle over the three classifiers

enum class ClassifierKind { lr, rf, dnn };

inline std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::lr: return "lr";
    case ClassifierKind::rf: return "rf";
    case ClassifierKind::dnn: return "dnn";
  }
  return "lr";
}

inline ClassifierKind parse_classifier(const std::string& s) {
  if (s == "lr") return ClassifierKind::lr;
  if (s == "rf") return ClassifierKind::rf;
  if (s == "dnn") return ClassifierKind::dnn;
  throw InputError("classifier must be lr, rf or dnn, got \"" + s + "\"");
}

using Classifier = std::variant<LogisticModel, ForestModel, DnnModel>;

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::rf;
  LogisticConfig lr;
  ForestConfig rf;
  DnnConfig dnn;
};

inline Classifier train_classifier(const MatrixXd& x, std::span<const int> y, const ClassifierConfig& c) {
  switch (c.kind) {
    case ClassifierKind::lr: return train_logistic(x, y, c.lr);
    case ClassifierKind::rf: return train_forest(x, y, c.rf);
    case ClassifierKind::dnn: return train_dnn(x, y, c.dnn);
  }
  throw std::logic_error("unreachable");
}

inline VectorXd predict_scores(const Classifier& c, const MatrixXd& x) {
  return std::visit([&](const auto& m) { return predict_scores(m, x); }, c);
}

inline double predict_score(const Classifier& c, const VectorXd& row) {
  return predict_scores(c, MatrixXd(row.transpose()))(0);
}

// ---------------------------------------------------------------------------
// Feature importance

struct FeatureImportance {
  VectorXd values;
  double drug_mean = 0.0;
  double cell_mean = 0.0;
  std::string method;  // "mdi", "abs_coef" or "permutation"
};

inline double mean_bce(const VectorXd& p, std::span<const int> y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p(i), 1e-12, 1.0 - 1e-12);
    s -= y[static_cast<std::size_t>(i)] ? std::log(q) : std::log(1.0 - q);
  }
  return p.size() ? s / static_cast<double>(p.size()) : 0.0;
}

/// Mean increase in BCE when one column is shuffled, over `repeats` seeded
/// shuffles per feature.
template <class Model>
VectorXd permutation_importance(const Model& model, const MatrixXd& x, std::span<const int> y,
                                std::uint64_t seed, int repeats = 10) {
  detail::check_binary(x, y);
  const double base = mean_bce(predict_scores(model, x), y);
  VectorXd imp = VectorXd::Zero(x.cols());
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(f)));
    MatrixXd xp = x;
    double total = 0.0;
    for (int r = 0; r < repeats; ++r) {
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      for (Eigen::Index i = 0; i < x.rows(); ++i) xp(i, f) = x(perm[static_cast<std::size_t>(i)], f);
      total += mean_bce(predict_scores(model, xp), y) - base;
    }
    imp(f) = total / repeats;
  }
  return imp;
}

inline void fill_source_means(FeatureImportance& fi, std::span<const FeatureSource> mask) {
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(fi.values.size()))
    throw std::invalid_argument("feature_importance: source mask width mismatch");
  double ds = 0, cs = 0;
  std::size_t dn = 0, cn = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == FeatureSource::drug) {
      ds += fi.values(static_cast<Eigen::Index>(i));
      ++dn;
    } else {
      cs += fi.values(static_cast<Eigen::Index>(i));
      ++cn;
    }
  }
  fi.drug_mean = dn ? ds / static_cast<double>(dn) : 0.0;
  fi.cell_mean = cn ? cs / static_cast<double>(cn) : 0.0;
}

/// Forest: MDI; logistic: |coefficient|; DNN: permutation importance (needs
/// x and y).
inline FeatureImportance feature_importance(const Classifier& c, std::span<const FeatureSource> mask = {},
                                            const MatrixXd* x = nullptr, std::span<const int> y = {},
                                            std::uint64_t seed = 0) {
  FeatureImportance fi;
  if (const auto* lr = std::get_if<LogisticModel>(&c)) {
    fi.values = lr->coefficients.cwiseAbs();
    fi.method = "abs_coef";
  } else if (const auto* rf = std::get_if<ForestModel>(&c)) {
    fi.values = forest_importance(*rf);
    fi.method = "mdi";
  } else {
    if (x == nullptr || y.empty()) throw std::invalid_argument("feature_importance: DNN path needs X and y");
    fi.values = permutation_importance(std::get<DnnModel>(c), *x, y, seed);
    fi.method = "permutation";
  }
  fill_source_means(fi, mask);
  return fi;
}

struct CoefficientStability {
  double mean_abs_coef = 0.0;
  double mean_variance = 0.0;
};

/// Population variance of each coefficient across fold models, averaged
/// over dimensions; plus mean |coefficient| over all folds and dimensions.
inline CoefficientStability coefficient_stability(std::span<const LogisticModel> folds) {
  if (folds.size() < 2) throw std::invalid_argument("coefficient_stability: need at least 2 fold models");
  const Eigen::Index d = folds[0].coefficients.size();
  for (const auto& m : folds)
    if (m.coefficients.size() != d) throw std::invalid_argument("coefficient_stability: width mismatch across folds");
  if (d == 0) return {};
  MatrixXd c(static_cast<Eigen::Index>(folds.size()), d);
  for (std::size_t i = 0; i < folds.size(); ++i) c.row(static_cast<Eigen::Index>(i)) = folds[i].coefficients.transpose();
  const VectorXd mean = c.colwise().mean().transpose();
  const VectorXd var = (c.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  return {c.cwiseAbs().mean(), var.mean()};
}

/// Mean across-cell variance of predicted scores, over drugs that score
/// above 0.5 for at least one cell. Zero when no drug qualifies.
inline double per_drug_score_variance(const std::map<std::string, std::vector<double>>& scores_by_drug) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [drug, s] : scores_by_drug) {
    if (s.empty() || *std::max_element(s.begin(), s.end()) <= 0.5) continue;
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    double v = 0.0;
    for (double x : s) v += (x - mean) * (x - mean);
    total += v / static_cast<double>(s.size());
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridEntry {
  std::size_t index = 0;
  double metric = 0.0;
  std::map<std::string, double> metrics;  // all reported metrics
};

/// Scores every configuration with `evaluate(i) -> map<name, value>` and
/// ranks by `primary` desc, then index asc.
template <class EvalFn>
std::vector<GridEntry> grid_search(std::size_t n_configs, const std::string& primary, EvalFn&& evaluate,
                                   unsigned threads = 1) {
  if (n_configs == 0) throw std::invalid_argument("grid_search: empty configuration space");
  std::vector<GridEntry> out(n_configs);
  detail::parallel_for(n_configs, threads, [&](std::size_t i) {
    out[i].index = i;
    out[i].metrics = evaluate(i);
    auto it = out[i].metrics.find(primary);
    if (it == out[i].metrics.end()) throw std::invalid_argument("grid_search: metric " + primary + " not reported");
    out[i].metric = it->second;
  });
  std::stable_sort(out.begin(), out.end(), [](const GridEntry& a, const GridEntry& b) {
    if (a.metric != b.metric) return a.metric > b.metric;
    return a.index < b.index;
  });
  return out;
}

/// 2 criteria x 4 tree counts x 4 split minimums.
inline std::vector<ForestConfig> forest_grid(std::uint64_t seed = 0) {
  std::vector<ForestConfig> g;
  for (Criterion c : {Criterion::gini, Criterion::entropy})
    for (int n : {10, 25, 50, 100})
      for (int s : {5, 10, 20, 25}) {
        ForestConfig f;
        f.criterion = c;
        f.n_estimators = n;
        f.min_samples_split = s;
        f.seed = seed;
        g.push_back(f);
      }
  return g;
}

inline std::vector<DnnConfig> dnn_grid(std::uint64_t seed = 0) {
  const std::vector<std::vector<int>> layers = {
      {64, 32, 16}, {64, 32, 8}, {64, 16, 8}, {32, 16, 8}, {64, 64, 64}, {32, 32, 32},
      {16, 16, 16}, {64, 64},    {32, 32},    {16, 16},    {64, 32},     {64, 16},
      {32, 16},     {36},        {32},        {16}};
  std::vector<DnnConfig> g;
  for (const auto& h : layers)
    for (Activation a : {Activation::relu, Activation::sigmoid})
      for (double dr : {0.0, 0.1, 0.3})
        for (double lr : {0.01, 0.001})
          for (int ds : {50, 500}) {
            DnnConfig c;
            c.hidden = h;
            c.activation = a;
            c.dropout_rate = dr;
            c.train.learning_rate = lr;
            c.train.decay_steps = ds;
            c.train.seed = seed;
            g.push_back(c);
          }
  return g;
}

struct EncoderGridPoint {
  std::vector<int> hidden;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;
  double learning_rate = 0.01;
};

/// 2 depths x 3 widths x 2 activations x 3 dropout rates x 3 learning rates.
inline std::vector<EncoderGridPoint> encoder_grid() {
  std::vector<EncoderGridPoint> g;
  for (int depth : {1, 2})
    for (int width : {16, 32, 64})
      for (Activation a : {Activation::relu, Activation::sigmoid})
        for (double dr : {0.0, 0.1, 0.3})
          for (double lr : {0.01, 0.001, 0.0001})
            g.push_back({std::vector<int>(static_cast<std::size_t>(depth), width), a, dr, lr});
  return g;
}

// ---------------------------------------------------------------------------
// Snapshots

inline void to_json(nlohmann::json& j, const ForestConfig& c) {
  j = {{"criterion", to_string(c.criterion)},
       {"n_estimators", c.n_estimators},
       {"min_samples_split", c.min_samples_split},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ForestConfig& c) {
  c.criterion = parse_criterion(j.value("criterion", std::string("gini")));
  c.n_estimators = j.value("n_estimators", 100);
  c.min_samples_split = j.value("min_samples_split", 20);
  c.seed = j.value("seed", std::uint64_t{0});
}

namespace detail {

inline nlohmann::json node_json(const DecisionTree& t, int i) {
  const auto& n = t.nodes[static_cast<std::size_t>(i)];
  nlohmann::json j = {{"value", n.value}, {"weight", n.weight}};
  if (n.feature >= 0) {
    j["feature"] = n.feature;
    j["threshold"] = n.threshold;
    j["decrease"] = n.decrease;
    j["left"] = node_json(t, n.left);
    j["right"] = node_json(t, n.right);
  }
  return j;
}

inline int node_from_json(const nlohmann::json& j, DecisionTree& t, int n_features) {
  const int idx = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  TreeNode n;
  n.value = j.at("value").get<double>();
  n.weight = j.value("weight", 0.0);
  if (n.value < 0.0 || n.value > 1.0) throw InputError("forest snapshot: leaf value outside [0,1]");
  if (j.contains("feature")) {
    n.feature = j.at("feature").get<int>();
    if (n.feature < 0 || n.feature >= n_features) throw InputError("forest snapshot: feature index out of range");
    n.threshold = j.at("threshold").get<double>();
    n.decrease = j.value("decrease", 0.0);
    n.left = node_from_json(j.at("left"), t, n_features);
    n.right = node_from_json(j.at("right"), t, n_features);
  }
  t.nodes[static_cast<std::size_t>(idx)] = n;
  return idx;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ForestModel& m) {
  j = {{"type", "random_forest"}, {"config", m.config}, {"n_features", m.n_features}};
  auto& trees = j["trees"] = nlohmann::json::array();
  for (const auto& t : m.trees) trees.push_back(detail::node_json(t, 0));
}

inline void from_json(const nlohmann::json& j, ForestModel& m) {
  m.config = j.at("config").get<ForestConfig>();
  m.n_features = j.at("n_features").get<int>();
  m.trees.clear();
  for (const auto& tj : j.at("trees")) {
    DecisionTree t;
    detail::node_from_json(tj, t, m.n_features);
    m.trees.push_back(std::move(t));
  }
}

inline void to_json(nlohmann::json& j, const LogisticModel& m) {
  j = {{"type", "logistic"},
       {"coefficients", std::vector<double>(m.coefficients.data(), m.coefficients.data() + m.coefficients.size())},
       {"intercept", m.intercept},
       {"iterations", m.iterations},
       {"converged", m.converged},
       {"diverged", m.diverged}};
}

inline void from_json(const nlohmann::json& j, LogisticModel& m) {
  auto c = j.at("coefficients").get<std::vector<double>>();
  m.coefficients = Eigen::Map<VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  m.intercept = j.at("intercept").get<double>();
  m.iterations = j.value("iterations", 0);
  m.converged = j.value("converged", false);
  m.diverged = j.value("diverged", false);
}

inline nlohmann::json classifier_json(const Classifier& c) {
  if (const auto* lr = std::get_if<LogisticModel>(&c)) return *lr;
  if (const auto* rf = std::get_if<ForestModel>(&c)) return *rf;
  const auto& dnn = std::get<DnnModel>(c);
  nlohmann::json j = dnn.net;
  j["type"] = "dnn";
  j["report"] = dnn.report;
  return j;
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
  const std::string type = j.value("type", std::string());
  if (type == "logistic") return j.get<LogisticModel>();
  if (type == "random_forest") return j.get<ForestModel>();
  if (type == "dnn") return DnnModel{j.get<MlpModel>(), {}};
  throw InputError("unknown classifier snapshot type \"" + type + "\"");
}

}  // namespace cdr

#endif  // CDR_CLASSIFIERS_HPP
