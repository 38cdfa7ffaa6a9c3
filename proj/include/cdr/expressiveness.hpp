#ifndef CDR_EXPRESSIVENESS_HPP
#define CDR_EXPRESSIVENESS_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdr/common.hpp"
#include "cdr/csv.hpp"
#include "cdr/evaluation.hpp"

namespace cdr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct EmbeddingSet {
  std::vector<std::string> item_ids;
  MatrixXd vectors;  // one row per item
  std::vector<std::string> groups;

  std::size_t size() const { return item_ids.size(); }

  void validate() const {
    if (static_cast<std::size_t>(vectors.rows()) != item_ids.size() || groups.size() != item_ids.size())
      throw std::invalid_argument("EmbeddingSet: ids, vectors and groups differ in length");
  }
};

/// Keeps only items whose group has at least `min_size` members.
namespace detail {

inline EmbeddingSet keep_rows(const EmbeddingSet& s, const std::vector<Eigen::Index>& keep) {
  EmbeddingSet out;
  out.vectors.resize(static_cast<Eigen::Index>(keep.size()), s.vectors.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.item_ids.push_back(s.item_ids[static_cast<std::size_t>(keep[k])]);
    out.groups.push_back(s.groups[static_cast<std::size_t>(keep[k])]);
    out.vectors.row(static_cast<Eigen::Index>(k)) = s.vectors.row(keep[k]);
  }
  return out;
}

}  // namespace detail

inline EmbeddingSet filter_min_group_size(const EmbeddingSet& s, std::size_t min_size) {
  s.validate();
  std::map<std::string, std::size_t> count;
  for (const auto& g : s.groups) ++count[g];
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (count[s.groups[i]] >= min_size) keep.push_back(static_cast<Eigen::Index>(i));
  return detail::keep_rows(s, keep);
}

/// Removes all-zero vectors (cosine is undefined for them); `dropped`
/// receives their item ids.
inline EmbeddingSet drop_zero_vectors(const EmbeddingSet& s, std::vector<std::string>* dropped = nullptr) {
  s.validate();
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.vectors.row(static_cast<Eigen::Index>(i)).squaredNorm() > 0.0) keep.push_back(static_cast<Eigen::Index>(i));
    else if (dropped) dropped->push_back(s.item_ids[i]);
  }
  return detail::keep_rows(s, keep);
}

struct GroupSimilarity {
  std::size_t size = 0;
  double intra = std::numeric_limits<double>::quiet_NaN();  // NaN for singletons
  double inter = std::numeric_limits<double>::quiet_NaN();  // NaN when only one group exists
};

struct SimilarityReport {
  std::map<std::string, GroupSimilarity> groups;
  double mean_intra = std::numeric_limits<double>::quiet_NaN();
  double mean_inter = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;
};

inline SimilarityReport group_similarities(const EmbeddingSet& s) {
  s.validate();
  MatrixXd u = s.vectors;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double nrm = u.row(i).norm();
    if (!(nrm > 0.0)) throw std::invalid_argument("group_similarities: zero vector for item " + s.item_ids[static_cast<std::size_t>(i)]);
    u.row(i) /= nrm;
  }
  const MatrixXd cos = u * u.transpose();
  std::map<std::string, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < s.size(); ++i) members[s.groups[i]].push_back(static_cast<Eigen::Index>(i));

  SimilarityReport rep;
  double si = 0, se = 0;
  std::size_t ni = 0, ne = 0;
  for (const auto& [g, idx] : members) {
    GroupSimilarity gs;
    gs.size = idx.size();
    if (idx.size() >= 2) {
      double t = 0;
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b) t += cos(idx[a], idx[b]);
      gs.intra = t / (static_cast<double>(idx.size()) * static_cast<double>(idx.size() - 1) / 2.0);
      si += gs.intra;
      ++ni;
    } else {
      rep.notes.push_back("group " + g + " is a singleton; intra-group similarity undefined");
    }
    const std::size_t outside = s.size() - idx.size();
    if (outside > 0) {
      std::vector<char> in(s.size(), 0);
      for (auto i : idx) in[static_cast<std::size_t>(i)] = 1;
      double t = 0;
      for (auto i : idx)
        for (std::size_t j = 0; j < s.size(); ++j)
          if (!in[j]) t += cos(i, static_cast<Eigen::Index>(j));
      gs.inter = t / (static_cast<double>(idx.size()) * static_cast<double>(outside));
      se += gs.inter;
      ++ne;
    }
    rep.groups[g] = gs;
  }
  if (ni) rep.mean_intra = si / static_cast<double>(ni);
  if (ne) rep.mean_inter = se / static_cast<double>(ne);
  return rep;
}

struct SeparabilityReport {
  std::map<std::string, double> per_group;  // intra / inter
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;
};

inline SeparabilityReport separability(const SimilarityReport& sim) {
  SeparabilityReport rep;
  rep.notes = sim.notes;
  double s = 0;
  for (const auto& [g, gs] : sim.groups) {
    if (std::isnan(gs.intra) || std::isnan(gs.inter)) continue;
    if (std::abs(gs.inter) < 1e-12) {
      rep.notes.push_back("group " + g + " skipped: inter-group similarity is zero");
      continue;
    }
    rep.per_group[g] = gs.intra / gs.inter;
    s += rep.per_group[g];
  }
  if (!rep.per_group.empty()) rep.mean = s / static_cast<double>(rep.per_group.size());
  return rep;
}

inline SeparabilityReport separability(const EmbeddingSet& s) { return separability(group_similarities(s)); }

/// t-test of per-group separability ratios between two representations of
/// the same items, restricted to groups present in both.
inline TTestResult compare_separability(const SeparabilityReport& a, const SeparabilityReport& b, int n_tests = 1) {
  std::vector<double> va, vb;
  for (const auto& [g, r] : a.per_group)
    if (auto it = b.per_group.find(g); it != b.per_group.end()) {
      va.push_back(r);
      vb.push_back(it->second);
    }
  return ttest_bonferroni(va, vb, n_tests);
}

inline nlohmann::json similarity_json(const SimilarityReport& sim, const SeparabilityReport& sep) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json j;
  j["groups"] = nlohmann::json::object();
  for (const auto& [g, gs] : sim.groups) {
    auto it = sep.per_group.find(g);
    j["groups"][g] = {{"size", gs.size},
                      {"intra", num(gs.intra)},
                      {"inter", num(gs.inter)},
                      {"separability", it == sep.per_group.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second)}};
  }
  j["mean_intra"] = num(sim.mean_intra);
  j["mean_inter"] = num(sim.mean_inter);
  j["mean_separability"] = num(sep.mean);
  j["notes"] = sep.notes;
  return j;
}

// ---------------------------------------------------------------------------
// Exact t-SNE

struct TsneConfig {
  double perplexity = 30.0;
  int n_iters = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;  // upper bound; small sets use n / 2
  double exaggeration = 12.0;
  int switch_iter = 250;  // end of early exaggeration; momentum 0.5 -> 0.8
};

struct TsneResult {
  MatrixXd coords;  // n x 2
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

inline MatrixXd squared_distances(const MatrixXd& x) {
  const VectorXd sq = x.rowwise().squaredNorm();
  MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

/// Row-conditional Gaussian affinities; each row's bandwidth is bisected so
/// its entropy matches log(perplexity). Rows sum to 1.
inline MatrixXd conditional_affinities(const MatrixXd& x, double perplexity) {
  const Eigen::Index n = x.rows();
  if (n < 4) throw InputError("t-SNE needs at least 4 points");
  if (!(perplexity > 0.0) || perplexity > static_cast<double>(n - 1) / 3.0)
    throw InputError("t-SNE perplexity " + std::to_string(perplexity) + " infeasible for " + std::to_string(n) +
                     " points (must be in (0, " + std::to_string(static_cast<double>(n - 1) / 3.0) + "])");
  const MatrixXd d = squared_distances(x);
  const double target = std::log(perplexity);
  MatrixXd p = MatrixXd::Zero(n, n);
  VectorXd row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 50; ++it) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-d(i, j) * beta);
        sum += row(j);
      }
      sum = std::max(sum, 1e-12);
      double h = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) h += beta * d(i, j) * row(j);
      h = std::log(sum) + h / sum;
      row /= sum;
      const double diff = h - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
    const double s = row.sum();
    if (s > 0.0) {
      p.row(i) = row.transpose() / s;
    } else {
      // Every neighbor underflowed (isolated point); spread mass uniformly.
      p.row(i).setConstant(1.0 / static_cast<double>(n - 1));
      p(i, i) = 0.0;
    }
  }
  return p;
}

namespace detail {

inline double tsne_kl(const MatrixXd& p, const MatrixXd& y) {
  const Eigen::Index n = y.rows();
  const MatrixXd d = squared_distances(y);
  MatrixXd num = (1.0 + d.array()).inverse().matrix();
  num.diagonal().setZero();
  const double z = num.sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) {
        const double q = std::max(num(i, j) / z, 1e-12);
        kl += p(i, j) * std::log(p(i, j) / q);
      }
  return kl;
}

}  // namespace detail

inline TsneResult tsne(const MatrixXd& x, const TsneConfig& cfg = {}) {
  if (cfg.n_iters < 1) throw InputError("t-SNE n_iters must be >= 1");
  const Eigen::Index n = x.rows();
  const MatrixXd cond = conditional_affinities(x, cfg.perplexity);
  MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();

  Rng rng(cfg.seed);
  std::normal_distribution<double> init(0.0, 1e-2);
  MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = init(rng);
  TsneResult res;
  res.initial_kl = detail::tsne_kl(p, y);

  // A fixed step of 200 overshoots on a few dozen points and tears clusters apart.
  const double lr = std::min(cfg.learning_rate, static_cast<double>(n) / 2.0);
  MatrixXd update = MatrixXd::Zero(n, 2), gains = MatrixXd::Ones(n, 2);
  for (int it = 0; it < cfg.n_iters; ++it) {
    const bool early = it < cfg.switch_iter;
    const double exag = early ? cfg.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    const MatrixXd d = squared_distances(y);
    MatrixXd num = (1.0 + d.array()).inverse().matrix();
    num.diagonal().setZero();
    const double z = num.sum();
    // dC/dy_i = 4 sum_j (exag*p_ij - q_ij) num_ij (y_i - y_j)
    const MatrixXd w = ((exag * p).array() - num.array() / z).matrix().cwiseProduct(num);
    const VectorXd wsum = w.rowwise().sum();
    MatrixXd grad = 4.0 * (wsum.asDiagonal() * y - w * y);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = std::max(same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
      }
    update = momentum * update - lr * gains.cwiseProduct(grad);
    y += update;
    y.rowwise() -= y.colwise().mean();
    if (!y.allFinite()) throw NumericalError("t-SNE diverged at iteration " + std::to_string(it));
  }
  res.coords = y;
  res.final_kl = detail::tsne_kl(p, y);
  return res;
}

/// Fraction of points whose nearest group centroid (in `coords`) is their own group's.
inline double nearest_centroid_purity(const MatrixXd& coords, const std::vector<std::string>& groups) {
  std::map<std::string, std::pair<VectorXd, int>> cent;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto& c = cent[groups[i]];
    if (c.second == 0) c.first = VectorXd::Zero(coords.cols());
    c.first += coords.row(static_cast<Eigen::Index>(i)).transpose();
    ++c.second;
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::string arg;
    for (const auto& [g, c] : cent) {
      const double dist = (coords.row(static_cast<Eigen::Index>(i)).transpose() - c.first / c.second).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = g;
      }
    }
    hit += arg == groups[i];
  }
  return groups.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(groups.size());
}

inline void write_tsne_csv(const std::string& path, const EmbeddingSet& s, const MatrixXd& coords) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < s.size(); ++i)
    rows.push_back({s.item_ids[i], s.groups[i], csv::format_number(coords(static_cast<Eigen::Index>(i), 0)),
                    csv::format_number(coords(static_cast<Eigen::Index>(i), 1))});
  csv::write(path, {"item_id", "group", "x", "y"}, rows);
}

/// Scatter plot with one marker shape/colour per group and a legend.
inline std::string scatter_svg(const MatrixXd& coords, const std::vector<std::string>& groups,
                               const std::string& title = "") {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr int kColors = 10, kShapes = 4;
  const double W = 640, H = 480, pad = 40, legend_w = 160;
  std::vector<std::string> names;
  for (const auto& g : groups)
    if (std::find(names.begin(), names.end(), g) == names.end()) names.push_back(g);
  std::sort(names.begin(), names.end());
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (coords.rows() > 0) {
    x0 = coords.col(0).minCoeff();
    x1 = coords.col(0).maxCoeff();
    y0 = coords.col(1).minCoeff();
    y1 = coords.col(1).maxCoeff();
  }
  const double sx = (W - legend_w - 2 * pad) / std::max(x1 - x0, 1e-12);
  const double sy = (H - 2 * pad) / std::max(y1 - y0, 1e-12);
  auto marker = [&](std::ostringstream& os, double cx, double cy, std::size_t gi) {
    const char* col = colors[gi % kColors];
    switch ((gi / kColors + gi) % kShapes) {
      case 0: os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"3.5\" fill=\"" << col << "\"/>"; break;
      case 1: os << "<rect x=\"" << cx - 3 << "\" y=\"" << cy - 3 << "\" width=\"6\" height=\"6\" fill=\"" << col << "\"/>"; break;
      case 2:
        os << "<polygon points=\"" << cx << "," << cy - 4 << " " << cx - 4 << "," << cy + 3 << " " << cx + 4 << ","
           << cy + 3 << "\" fill=\"" << col << "\"/>";
        break;
      default:
        os << "<polygon points=\"" << cx << "," << cy - 4 << " " << cx + 4 << "," << cy << " " << cx << "," << cy + 4
           << " " << cx - 4 << "," << cy << "\" fill=\"" << col << "\"/>";
    }
    os << "\n";
  };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else if (c == '"') o += "&quot;";
      else o += c;
    }
    return o;
  };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) os << "<text x=\"" << pad << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const auto gi = static_cast<std::size_t>(
        std::find(names.begin(), names.end(), groups[static_cast<std::size_t>(i)]) - names.begin());
    marker(os, pad + (coords(i, 0) - x0) * sx, H - pad - (coords(i, 1) - y0) * sy, gi);
  }
  for (std::size_t g = 0; g < names.size(); ++g) {
    const double ly = pad + 18.0 * static_cast<double>(g);
    marker(os, W - legend_w + 10, ly, g);
    os << "<text x=\"" << W - legend_w + 20 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << esc(names[g])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace cdr

#endif  // CDR_EXPRESSIVENESS_HPP
