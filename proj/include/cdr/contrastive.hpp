#ifndef CDR_CONTRASTIVE_HPP
#define CDR_CONTRASTIVE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <tuple>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cdr/common.hpp"
#include "cdr/core_data.hpp"
#include "cdr/neural.hpp"

namespace cdr {

/// How two items are judged to be in the same group. Cells compare cancer
/// labels; drugs compare gene-target sets (any shared target, or identical
/// sets).
enum class GroupRule { label, overlap, exact };

inline std::string to_string(GroupRule r) {
  switch (r) {
    case GroupRule::label: return "label";
    case GroupRule::overlap: return "overlap";
    case GroupRule::exact: return "exact";
  }
  return "label";
}

inline GroupRule parse_group_rule(const std::string& s) {
  if (s == "label") return GroupRule::label;
  if (s == "overlap") return GroupRule::overlap;
  if (s == "exact") return GroupRule::exact;
  throw InputError("group_rule must be overlap, exact or label, got \"" + s + "\"");
}

struct GroupAssignment {
  std::vector<std::string> item_ids;
  std::map<std::string, std::string> group_of;
  std::vector<std::set<std::string>> target_sets;  // overlap/exact rules only
  GroupRule rule = GroupRule::label;

  std::size_t size() const { return item_ids.size(); }

  bool same_group(std::size_t i, std::size_t j) const {
    if (rule == GroupRule::label) return group_of.at(item_ids[i]) == group_of.at(item_ids[j]);
    const auto& a = target_sets[i];
    const auto& b = target_sets[j];
    if (rule == GroupRule::exact) return a == b;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
      if (*ia == *ib) return true;
      if (*ia < *ib)
        ++ia;
      else
        ++ib;
    }
    return false;
  }
};

/// Drugs with at least one gene target, grouped by their target signature.
inline GroupAssignment assign_drug_groups(std::span<const DrugRecord> drugs,
                                          GroupRule rule = GroupRule::overlap) {
  if (rule == GroupRule::label) throw std::invalid_argument("drug groups use overlap or exact");
  GroupAssignment g;
  g.rule = rule;
  for (const auto& d : drugs) {
    if (d.gene_targets.empty()) continue;
    g.item_ids.push_back(d.drug_id);
    g.group_of[d.drug_id] = detail::join_set(d.gene_targets);
    g.target_sets.push_back(d.gene_targets);
  }
  if (g.item_ids.empty()) throw InputError("no drugs with gene targets to group");
  return g;
}

inline GroupAssignment assign_label_groups(std::span<const std::string> ids,
                                           std::span<const std::string> labels) {
  if (ids.size() != labels.size()) throw std::invalid_argument("assign_label_groups: size mismatch");
  GroupAssignment g;
  g.rule = GroupRule::label;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    g.item_ids.push_back(ids[i]);
    g.group_of[ids[i]] = labels[i];
  }
  return g;
}

inline GroupAssignment assign_cell_groups(std::span<const CellLineRecord> cells) {
  std::vector<std::string> ids, labels;
  for (const auto& c : cells) {
    ids.push_back(c.cell_id);
    labels.push_back(c.cancer_type);
  }
  return assign_label_groups(ids, labels);
}

/// Pair of item indices into GroupAssignment::item_ids. label 0 = same
/// group, 1 = different groups.
struct ContrastivePair {
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  int label = 0;

  bool operator==(const ContrastivePair&) const = default;
};

/// Enumerates all unordered same-group and different-group pairs once, then
/// draws balanced samples. A held-out slice of each pool can be reserved
/// for validation so training draws never see it.
class PairSampler {
 public:
  explicit PairSampler(const GroupAssignment& g) {
    const std::size_t n = g.size();
    if (n < 2) throw InputError("pair sampling needs at least 2 items");
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j)
        (g.same_group(i, j) ? same_ : diff_).push_back({i, j, g.same_group(i, j) ? 0 : 1});
    if (same_.empty()) throw InputError("no same-group pair possible (every group is a singleton)");
    if (diff_.empty()) throw InputError("no different-group pair possible (single group)");
  }

  std::size_t same_available() const { return same_.size(); }
  std::size_t diff_available() const { return diff_.size(); }

  /// Moves a seeded random subset of each pool into a validation set of
  /// about n_pairs (balanced). At least one pair of each kind stays for
  /// training.
  std::vector<ContrastivePair> reserve_validation(std::size_t n_pairs, Rng& rng) {
    std::vector<ContrastivePair> val;
    auto take = [&](std::vector<ContrastivePair>& pool, std::size_t k) {
      std::shuffle(pool.begin(), pool.end(), rng);
      k = std::min(k, pool.size() > 1 ? pool.size() - 1 : std::size_t{0});
      val.insert(val.end(), pool.end() - static_cast<std::ptrdiff_t>(k), pool.end());
      pool.resize(pool.size() - k);
      std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
        return std::tie(a.left, a.right) < std::tie(b.left, b.right);
      });
    };
    take(same_, (n_pairs + 1) / 2);
    take(diff_, n_pairs / 2);
    return val;
  }

  /// ceil(n/2) same-group and floor(n/2) different-group pairs, each drawn
  /// without replacement while the pool lasts, then shuffled together.
  std::vector<ContrastivePair> sample(std::size_t n_pairs, Rng& rng) const {
    std::vector<ContrastivePair> out;
    out.reserve(n_pairs);
    draw(same_, (n_pairs + 1) / 2, rng, out);
    draw(diff_, n_pairs / 2, rng, out);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }

 private:
  static void draw(const std::vector<ContrastivePair>& pool, std::size_t k, Rng& rng,
                   std::vector<ContrastivePair>& out) {
    const std::size_t n = pool.size();
    while (k > 0) {
      const std::size_t take = std::min(k, n);
      // Floyd's algorithm: `take` distinct indices from [0, n).
      std::unordered_set<std::size_t> chosen;
      std::vector<std::size_t> order;
      for (std::size_t j = n - take; j < n; ++j) {
        std::uniform_int_distribution<std::size_t> u(0, j);
        std::size_t t = u(rng);
        if (!chosen.insert(t).second) {
          chosen.insert(j);
          order.push_back(j);
        } else {
          order.push_back(t);
        }
      }
      for (std::size_t idx : order) out.push_back(pool[idx]);
      k -= take;
    }
  }

  std::vector<ContrastivePair> same_;
  std::vector<ContrastivePair> diff_;
};

inline std::vector<ContrastivePair> sample_pairs(const GroupAssignment& g, std::size_t n_pairs,
                                                 std::uint64_t seed) {
  PairSampler sampler(g);
  Rng rng(seed);
  return sampler.sample(n_pairs, rng);
}

/// Per-feature z-scoring fitted on the pretraining inputs.
struct Standardizer {
  VectorXd mean;
  VectorXd scale;

  static Standardizer fit(const MatrixXd& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mean(c)).square().mean();
      const double sd = std::sqrt(var);
      s.scale(c) = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  MatrixXd apply(const MatrixXd& x) const {
    MatrixXd out = x;
    out.rowwise() -= mean.transpose();
    return out.array().rowwise() / scale.transpose().array();
  }
};

/// A pretrained encoder (Enc_d, Enc_c or the autoencoder's encoder half)
/// with its optional input scaling.
struct Encoder {
  MlpModel net;
  std::optional<Standardizer> scaler;
  std::string role;        // "drug", "cell" or "autoencoder"
  std::string group_rule;  // how pretraining pairs were labeled
};

inline MatrixXd embed(const MlpModel& encoder, const MatrixXd& items) { return predict(encoder, items); }

inline MatrixXd embed(const Encoder& encoder, const MatrixXd& items) {
  return predict(encoder.net, encoder.scaler ? encoder.scaler->apply(items) : items);
}

/// sigma(||Enc(left) - Enc(right)||): probability the two items come from
/// different groups. Always >= 0.5.
inline double snn_probability(const MlpModel& encoder, const VectorXd& left, const VectorXd& right) {
  MatrixXd both(2, left.size());
  if (left.size() != right.size()) throw std::invalid_argument("snn_probability: width mismatch");
  both.row(0) = left.transpose();
  both.row(1) = right.transpose();
  MatrixXd e = embed(encoder, both);
  return sigmoid((e.row(0) - e.row(1)).norm());
}

/// Mean BCE of the siamese probability over `pairs`, eval mode.
inline double snn_loss(const MlpModel& encoder, const MatrixXd& items,
                       std::span<const ContrastivePair> pairs) {
  if (pairs.empty()) return 0.0;
  MatrixXd e = embed(encoder, items);
  double s = 0.0;
  for (const auto& p : pairs) {
    const double d = (e.row(p.left) - e.row(p.right)).norm();
    s += softplus(d) - p.label * d;  // -[y log sig(d) + (1-y) log(1-sig(d))]
  }
  return s / static_cast<double>(pairs.size());
}

namespace detail {

/// Loss and gradients for one minibatch of pairs; both branches run through
/// the same parameters and their gradients accumulate.
inline double snn_batch_step(MlpModel& model, const MatrixXd& items,
                             std::span<const ContrastivePair> batch, Rng& rng, double lr) {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  MatrixXd stacked(2 * b, items.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    stacked.row(i) = items.row(batch[static_cast<std::size_t>(i)].left);
    stacked.row(b + i) = items.row(batch[static_cast<std::size_t>(i)].right);
  }
  Activations acts = forward(model, stacked, Mode::train, &rng);
  const MatrixXd& out = acts.output();
  MatrixXd d_out = MatrixXd::Zero(out.rows(), out.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const VectorXd diff = (out.row(i) - out.row(b + i)).transpose();
    const double d = diff.norm();
    const int y = batch[static_cast<std::size_t>(i)].label;
    loss += softplus(d) - y * d;
    if (d > 0.0) {
      const double coeff = (sigmoid(d) - y) / (static_cast<double>(b) * d);
      d_out.row(i) = coeff * diff.transpose();
      d_out.row(b + i) = -coeff * diff.transpose();
    }
  }
  sgd_step(model, backward(model, acts, output_delta_from_grad(model, acts, d_out)), lr);
  return loss / static_cast<double>(b);
}

}  // namespace detail

struct SnnConfig {
  std::vector<int> hidden = {16, 16};  // last entry is the embedding width
  Activation activation = Activation::relu;
  // Strictly positive embeddings keep cosine similarity defined.
  Activation embedding_activation = Activation::sigmoid;
  double dropout_rate = 0.1;
  std::size_t pairs_per_epoch = 0;  // 0 -> 4 x number of items
  double val_fraction = 0.1;
  bool standardize = false;
};

struct PretrainResult {
  Encoder encoder;
  TrainReport report;
};

/// Siamese pretraining. `items` rows align with `groups.item_ids`. Each
/// epoch draws fresh balanced pairs; a fixed held-out pair set (about
/// val_fraction of an epoch's pairs) drives early stopping.
inline PretrainResult pretrain_encoder(const MatrixXd& items, const GroupAssignment& groups,
                                       const SnnConfig& snn, const TrainConfig& cfg) {
  if (static_cast<std::size_t>(items.rows()) != groups.size())
    throw std::invalid_argument("pretrain_encoder: items/groups size mismatch");
  if (snn.hidden.empty()) throw InputError("encoder needs at least one layer");
  PretrainResult res;
  MatrixXd x = items;
  if (snn.standardize) {
    res.encoder.scaler = Standardizer::fit(items);
    x = res.encoder.scaler->apply(items);
  }
  std::vector<int> dims = {static_cast<int>(x.cols())};
  dims.insert(dims.end(), snn.hidden.begin(), snn.hidden.end());
  MlpModel model = make_mlp(dims, snn.activation, snn.embedding_activation, snn.dropout_rate,
                            derive_seed(cfg.seed, "snn-init"));

  PairSampler sampler(groups);
  const std::size_t per_epoch = snn.pairs_per_epoch ? snn.pairs_per_epoch : 4 * groups.size();
  Rng split_rng(derive_seed(cfg.seed, "snn-val"));
  const std::size_t n_val =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(snn.val_fraction * per_epoch)));
  const std::vector<ContrastivePair> val = sampler.reserve_validation(n_val, split_rng);

  auto epoch = [&](MlpModel& m, Rng& rng, long& step) {
    const auto pairs = sampler.sample(per_epoch, rng);
    double total = 0.0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < pairs.size(); start += bs) {
      const std::size_t end = std::min(pairs.size(), start + bs);
      std::span<const ContrastivePair> batch(pairs.data() + start, end - start);
      total += detail::snn_batch_step(m, x, batch, rng, learning_rate_at(cfg, step)) *
               static_cast<double>(batch.size());
      ++step;
    }
    return total / static_cast<double>(pairs.size());
  };
  auto val_loss = [&](const MlpModel& m) { return snn_loss(m, x, val); };
  auto [best, report] = fit(std::move(model), cfg, epoch, val_loss);
  res.encoder.net = std::move(best);
  res.encoder.group_rule = to_string(groups.rule);
  res.report = std::move(report);
  return res;
}

// ---------------------------------------------------------------------------
// Snapshots

inline void to_json(nlohmann::json& j, const Encoder& e) {
  j = e.net;
  j["role"] = e.role;
  j["group_rule"] = e.group_rule;
  if (e.scaler) {
    j["input_scaling"] = {
        {"mean", std::vector<double>(e.scaler->mean.data(), e.scaler->mean.data() + e.scaler->mean.size())},
        {"scale", std::vector<double>(e.scaler->scale.data(), e.scaler->scale.data() + e.scaler->scale.size())}};
  }
}

inline void from_json(const nlohmann::json& j, Encoder& e) {
  e.net = j.get<MlpModel>();
  e.role = j.value("role", std::string());
  e.group_rule = j.value("group_rule", std::string());
  e.scaler.reset();
  if (j.contains("input_scaling")) {
    auto mean = j["input_scaling"].at("mean").get<std::vector<double>>();
    auto scale = j["input_scaling"].at("scale").get<std::vector<double>>();
    if (mean.size() != static_cast<std::size_t>(e.net.input_width()) || scale.size() != mean.size())
      throw InputError("encoder snapshot: input_scaling width mismatch");
    Standardizer s;
    s.mean = Eigen::Map<VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.scale = Eigen::Map<VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
    e.scaler = s;
  }
}

}  // namespace cdr

#endif  // CDR_CONTRASTIVE_HPP
