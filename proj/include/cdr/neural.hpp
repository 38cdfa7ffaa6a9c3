#ifndef CDR_NEURAL_HPP
#define CDR_NEURAL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdr/common.hpp"

namespace cdr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { identity, relu, sigmoid, softplus };
enum class Loss { bce, mse };
enum class Mode { train, eval };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "softplus") return Activation::softplus;
  throw InputError("unknown activation \"" + s + "\"");
}

inline std::string to_string(Loss l) { return l == Loss::bce ? "bce" : "mse"; }

inline Loss parse_loss(const std::string& s) {
  if (s == "bce") return Loss::bce;
  if (s == "mse") return Loss::mse;
  throw InputError("unknown loss \"" + s + "\"");
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Dense feed-forward network. Weight matrix l maps layer l to layer l+1 and
/// has shape dims[l+1] x dims[l]. Hidden layers use `activations[l]` and
/// inverted dropout in train mode; the output layer uses `output_activation`.
struct MlpModel {
  std::vector<int> layer_dims;
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  std::vector<Activation> activations;
  Activation output_activation = Activation::identity;
  double dropout_rate = 0.0;

  std::size_t n_layers() const { return weights.size(); }
  int input_width() const { return layer_dims.front(); }
  int output_width() const { return layer_dims.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  bool operator==(const MlpModel& o) const {
    if (layer_dims != o.layer_dims || activations != o.activations ||
        output_activation != o.output_activation || dropout_rate != o.dropout_rate)
      return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    return true;
  }
};

/// Uniform init: He range sqrt(6/fan_in) for relu layers, Xavier range
/// sqrt(6/(fan_in+fan_out)) otherwise. Biases start at zero.
inline MlpModel make_mlp(const std::vector<int>& dims, Activation hidden, Activation output,
                         double dropout_rate, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  for (int d : dims)
    if (d <= 0) throw std::invalid_argument("make_mlp: layer widths must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw std::invalid_argument("make_mlp: dropout_rate must be in [0,1)");
  MlpModel m;
  m.layer_dims = dims;
  m.activations.assign(dims.size() - 2, hidden);
  m.output_activation = output;
  m.dropout_rate = dropout_rate;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    const Activation act = l + 2 < dims.size() ? hidden : output;
    const double limit = act == Activation::relu ? std::sqrt(6.0 / fan_in)
                                                 : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = u(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(VectorXd::Zero(fan_out));
  }
  return m;
}

inline MlpModel zero_like(const MlpModel& m) {
  MlpModel z = m;
  for (auto& w : z.weights) w.setZero();
  for (auto& b : z.biases) b.setZero();
  return z;
}

inline void apply_activation(MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return sigmoid(v); }); break;
    case Activation::softplus: z = z.unaryExpr([](double v) { return softplus(v); }); break;
  }
}

/// Derivative of the activation given pre-activation z and output a.
inline MatrixXd activation_derivative(const MatrixXd& z, const MatrixXd& a, Activation act) {
  switch (act) {
    case Activation::identity: return MatrixXd::Ones(z.rows(), z.cols());
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::sigmoid: return (a.array() * (1.0 - a.array())).matrix();
    case Activation::softplus: return z.unaryExpr([](double v) { return sigmoid(v); });
  }
  return MatrixXd::Ones(z.rows(), z.cols());
}

/// Per-layer values of one forward pass. post[0] is the input batch,
/// post[l+1] = act(pre[l]) (times the dropout mask on hidden layers).
struct Activations {
  std::vector<MatrixXd> pre;
  std::vector<MatrixXd> post;
  std::vector<MatrixXd> masks;  // one per hidden layer; empty in eval mode

  const MatrixXd& output() const { return post.back(); }
};

inline Activations forward(const MlpModel& model, const MatrixXd& input, Mode mode,
                           Rng* rng = nullptr) {
  if (input.cols() != model.input_width())
    throw std::invalid_argument("forward: input width " + std::to_string(input.cols()) +
                                " != model input width " + std::to_string(model.input_width()));
  const bool drop = mode == Mode::train && model.dropout_rate > 0.0;
  if (drop && rng == nullptr) throw std::invalid_argument("forward: train-mode dropout needs an rng");
  Activations acts;
  acts.post.push_back(input);
  const std::size_t L = model.n_layers();
  for (std::size_t l = 0; l < L; ++l) {
    MatrixXd z = acts.post.back() * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    MatrixXd a = z;
    const bool hidden = l + 1 < L;
    apply_activation(a, hidden ? model.activations[l] : model.output_activation);
    if (hidden && drop) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double keep = 1.0 - model.dropout_rate;
      MatrixXd mask(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
          mask(i, j) = u(*rng) >= model.dropout_rate ? 1.0 / keep : 0.0;
      a = a.cwiseProduct(mask);
      acts.masks.push_back(std::move(mask));
    }
    acts.pre.push_back(std::move(z));
    acts.post.push_back(std::move(a));
  }
  return acts;
}

/// Eval-mode output.
inline MatrixXd predict(const MlpModel& model, const MatrixXd& input) {
  return forward(model, input, Mode::eval).output();
}

struct Gradients {
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
};

/// Backpropagates dL/d(pre-activation of the output layer).
inline Gradients backward(const MlpModel& model, const Activations& acts, const MatrixXd& delta_out) {
  const std::size_t L = model.n_layers();
  Gradients g;
  g.weights.resize(L);
  g.biases.resize(L);
  MatrixXd delta = delta_out;
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l] = delta.transpose() * acts.post[l];
    g.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    MatrixXd d_post = delta * model.weights[l];
    if (!acts.masks.empty()) d_post = d_post.cwiseProduct(acts.masks[l - 1]);
    // post[l] = act(pre[l-1]) * mask; derivative taken on the unmasked value.
    MatrixXd unmasked = acts.pre[l - 1];
    apply_activation(unmasked, model.activations[l - 1]);
    delta = d_post.cwiseProduct(activation_derivative(acts.pre[l - 1], unmasked,
                                                      model.activations[l - 1]));
  }
  return g;
}

/// Converts dL/d(output) into dL/d(output pre-activation).
inline MatrixXd output_delta_from_grad(const MlpModel& model, const Activations& acts,
                                       const MatrixXd& d_output) {
  return d_output.cwiseProduct(
      activation_derivative(acts.pre.back(), acts.output(), model.output_activation));
}

/// Mean loss over all output entries. BCE requires a sigmoid output and is
/// evaluated from logits.
inline double batch_loss(const MlpModel& model, const Activations& acts, const MatrixXd& targets,
                         Loss loss) {
  const double n = static_cast<double>(targets.size());
  if (loss == Loss::bce) {
    if (model.output_activation != Activation::sigmoid)
      throw std::invalid_argument("bce loss needs a sigmoid output layer");
    const MatrixXd& z = acts.pre.back();
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      s += softplus(z(i)) - targets(i) * z(i);
    return s / n;
  }
  return (acts.output() - targets).squaredNorm() / n;
}

inline MatrixXd loss_delta(const MlpModel& model, const Activations& acts, const MatrixXd& targets,
                           Loss loss) {
  const double n = static_cast<double>(targets.size());
  if (loss == Loss::bce) {
    if (model.output_activation != Activation::sigmoid)
      throw std::invalid_argument("bce loss needs a sigmoid output layer");
    return (acts.output() - targets) / n;
  }
  return output_delta_from_grad(model, acts, 2.0 * (acts.output() - targets) / n);
}

inline void check_targets(const MlpModel& model, const MatrixXd& input, const MatrixXd& targets) {
  if (targets.rows() != input.rows() || targets.cols() != model.output_width())
    throw std::invalid_argument("target shape does not match batch/output width");
}

/// Exact gradients of the mean batch loss (eval mode, no dropout).
inline Gradients gradients(const MlpModel& model, const MatrixXd& input, const MatrixXd& targets,
                           Loss loss) {
  check_targets(model, input, targets);
  Activations acts = forward(model, input, Mode::eval);
  return backward(model, acts, loss_delta(model, acts, targets, loss));
}

inline double evaluate_loss(const MlpModel& model, const MatrixXd& input, const MatrixXd& targets,
                            Loss loss) {
  check_targets(model, input, targets);
  return batch_loss(model, forward(model, input, Mode::eval), targets, loss);
}

/// Visits every parameter in a fixed order (layer by layer, weights then
/// biases).
template <class Model, class Fn>
void for_each_parameter(Model& model, Fn&& fn) {
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < model.weights[l].size(); ++i) fn(model.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < model.biases[l].size(); ++i) fn(model.biases[l].data()[i]);
  }
}

inline std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.insert(out.end(), g.weights[l].data(), g.weights[l].data() + g.weights[l].size());
    out.insert(out.end(), g.biases[l].data(), g.biases[l].data() + g.biases[l].size());
  }
  return out;
}

struct DefaultGradient {
  Gradients operator()(const MlpModel& m, const MatrixXd& x, const MatrixXd& t, Loss loss) const {
    return gradients(m, x, t, loss);
  }
};

/// Worst relative error |a - n| / max(|a|, |n|) between the analytic
/// gradient and central finite differences. Entries where both are below
/// `abs_floor` count as agreeing (0/0 -> 0).
template <class GradFn = DefaultGradient>
double gradient_check(const MlpModel& model, const MatrixXd& input, const MatrixXd& targets,
                      Loss loss, GradFn grad_fn = {}, double h = 1e-5, double abs_floor = 1e-9) {
  const std::vector<double> analytic = flatten(grad_fn(model, input, targets, loss));
  MlpModel probe = model;
  std::vector<double*> params;
  for_each_parameter(probe, [&](double& p) { params.push_back(&p); });
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = *params[k];
    *params[k] = saved + h;
    const double up = evaluate_loss(probe, input, targets, loss);
    *params[k] = saved - h;
    const double down = evaluate_loss(probe, input, targets, loss);
    *params[k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[k];
    const double denom = std::max(std::abs(a), std::abs(numeric));
    if (denom < abs_floor) continue;
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.01;
  double decay_rate = 0.99;
  int decay_steps = 1024;
  int patience = 10;
  double min_delta = 1e-4;
  int batch_size = 512;
  int max_epochs = 1000;
  std::uint64_t seed = 0;
  Loss loss = Loss::bce;

  void validate() const {
    if (!(learning_rate > 0)) throw InputError("learning_rate must be > 0");
    if (!(decay_rate > 0 && decay_rate <= 1)) throw InputError("decay_rate must be in (0,1]");
    if (decay_steps <= 0) throw InputError("decay_steps must be > 0");
    if (patience <= 0) throw InputError("patience must be > 0");
    if (!(min_delta >= 0)) throw InputError("min_delta must be >= 0");
    if (batch_size <= 0) throw InputError("batch_size must be > 0");
    if (max_epochs <= 0) throw InputError("max_epochs must be > 0");
  }
};

/// lr * decay_rate^(step / decay_steps), continuous exponent.
inline double learning_rate_at(const TrainConfig& c, long step) {
  return c.learning_rate *
         std::pow(c.decay_rate, static_cast<double>(step) / static_cast<double>(c.decay_steps));
}

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = 0;  // 1-based
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, double>> loss_curve;  // (train, val) per epoch
  bool stopped_early = false;
};

inline void sgd_step(MlpModel& model, const Gradients& g, double lr) {
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    model.weights[l] -= lr * g.weights[l];
    model.biases[l] -= lr * g.biases[l];
  }
}

/// Generic epoch loop shared by supervised, autoencoder and siamese
/// training. `run_epoch(model, rng, step)` performs one pass of updates and
/// returns the mean training loss; `val_loss(model)` scores the held-out set.
///
/// Patience counts epochs whose val loss fails to beat the best counted
/// improvement by at least min_delta. The returned parameters are those of
/// the epoch with the lowest val loss seen.
template <class EpochFn, class ValFn>
std::pair<MlpModel, TrainReport> fit(MlpModel model, const TrainConfig& cfg, EpochFn&& run_epoch,
                                     ValFn&& val_loss) {
  cfg.validate();
  Rng rng(cfg.seed);
  TrainReport report;
  MlpModel best = model;
  double reference = std::numeric_limits<double>::infinity();  // for patience
  bool have_reference = false;
  int wait = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double train_loss = run_epoch(model, rng, step);
    const double val = val_loss(model);
    if (!std::isfinite(train_loss) || !std::isfinite(val)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                           " (train " + std::to_string(train_loss) + ", val " +
                           std::to_string(val) + ")");
    }
    report.loss_curve.emplace_back(train_loss, val);
    report.epochs_run = epoch;
    if (val < report.best_val_loss) {
      report.best_val_loss = val;
      report.best_epoch = epoch;
      best = model;
    }
    if (!have_reference || val < reference - cfg.min_delta) {
      reference = val;
      have_reference = true;
      wait = 0;
    } else if (++wait >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }
  return {std::move(best), std::move(report)};
}

struct SupervisedSet {
  MatrixXd x;
  MatrixXd y;
};

inline MatrixXd gather_rows(const MatrixXd& m, std::span<const std::size_t> idx) {
  MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Minibatch SGD on (x, y) with the configured loss.
inline std::pair<MlpModel, TrainReport> train(MlpModel model, const SupervisedSet& train_set,
                                              const SupervisedSet& val_set, const TrainConfig& cfg) {
  if (train_set.x.rows() == 0 || val_set.x.rows() == 0)
    throw std::invalid_argument("train: empty train or validation set");
  check_targets(model, train_set.x, train_set.y);
  check_targets(model, val_set.x, val_set.y);
  const std::size_t n = static_cast<std::size_t>(train_set.x.rows());
  std::vector<std::size_t> order(n);
  auto epoch = [&](MlpModel& m, Rng& rng, long& step) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      MatrixXd xb = gather_rows(train_set.x, idx);
      MatrixXd yb = gather_rows(train_set.y, idx);
      Activations acts = forward(m, xb, Mode::train, &rng);
      total += batch_loss(m, acts, yb, cfg.loss) * static_cast<double>(idx.size());
      sgd_step(m, backward(m, acts, loss_delta(m, acts, yb, cfg.loss)), learning_rate_at(cfg, step));
      ++step;
    }
    return total / static_cast<double>(n);
  };
  auto val = [&](const MlpModel& m) { return evaluate_loss(m, val_set.x, val_set.y, cfg.loss); };
  return fit(std::move(model), cfg, epoch, val);
}

/// Seeded split of row indices into (train, validation); the validation
/// share is at least one row whenever n >= 2.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(
    std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  else n_val = 0;
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

// ---------------------------------------------------------------------------
// Autoencoder baseline

struct AutoencoderConfig {
  std::vector<int> hidden;  // encoder-side hidden widths, input side first
  int bottleneck = 16;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;
  double val_fraction = 0.1;
  TrainConfig train;
};

/// Symmetric encoder/decoder trained on MSE reconstruction. Use
/// encoder_half() for the bottleneck embedding.
inline std::pair<MlpModel, TrainReport> train_autoencoder(const MatrixXd& data,
                                                          const AutoencoderConfig& cfg) {
  if (data.rows() == 0 || data.cols() == 0) throw std::invalid_argument("train_autoencoder: empty matrix");
  std::vector<int> dims = {static_cast<int>(data.cols())};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.bottleneck);
  dims.insert(dims.end(), cfg.hidden.rbegin(), cfg.hidden.rend());
  dims.push_back(static_cast<int>(data.cols()));
  MlpModel model = make_mlp(dims, cfg.activation, Activation::identity, cfg.dropout_rate,
                            derive_seed(cfg.train.seed, "ae-init"));
  TrainConfig tc = cfg.train;
  tc.loss = Loss::mse;
  SupervisedSet tr, va;
  const std::size_t n = static_cast<std::size_t>(data.rows());
  if (n >= 10) {
    auto [ti, vi] = holdout_split(n, cfg.val_fraction, derive_seed(cfg.train.seed, "ae-split"));
    tr.x = gather_rows(data, ti);
    va.x = gather_rows(data, vi);
  } else {
    tr.x = data;
    va.x = data;
  }
  tr.y = tr.x;
  va.y = va.x;
  return train(std::move(model), tr, va, tc);
}

/// First half of a symmetric autoencoder (input through bottleneck).
inline MlpModel encoder_half(const MlpModel& ae) {
  const std::size_t L = ae.n_layers();
  if (L % 2 != 0) throw std::invalid_argument("encoder_half: not a symmetric autoencoder");
  const std::size_t half = L / 2;
  MlpModel enc;
  enc.layer_dims.assign(ae.layer_dims.begin(), ae.layer_dims.begin() + static_cast<std::ptrdiff_t>(half + 1));
  enc.weights.assign(ae.weights.begin(), ae.weights.begin() + static_cast<std::ptrdiff_t>(half));
  enc.biases.assign(ae.biases.begin(), ae.biases.begin() + static_cast<std::ptrdiff_t>(half));
  enc.activations.assign(ae.activations.begin(), ae.activations.begin() + static_cast<std::ptrdiff_t>(half - 1));
  enc.output_activation = ae.activations[half - 1];
  enc.dropout_rate = ae.dropout_rate;
  return enc;
}

// ---------------------------------------------------------------------------
// Snapshots

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"decay_rate", c.decay_rate},
       {"decay_steps", c.decay_steps},     {"patience", c.patience},
       {"min_delta", c.min_delta},         {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},       {"seed", c.seed},
       {"loss", to_string(c.loss)}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.decay_rate = j.value("decay_rate", d.decay_rate);
  c.decay_steps = j.value("decay_steps", d.decay_steps);
  c.patience = j.value("patience", d.patience);
  c.min_delta = j.value("min_delta", d.min_delta);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.seed = j.value("seed", d.seed);
  c.loss = parse_loss(j.value("loss", to_string(d.loss)));
}

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (auto [t, v] : r.loss_curve) curve.push_back({t, v});
  j = {{"epochs_run", r.epochs_run},
       {"best_epoch", r.best_epoch},
       {"best_val_loss", r.best_val_loss},
       {"stopped_early", r.stopped_early},
       {"loss_curve", curve}};
}

inline void to_json(nlohmann::json& j, const MlpModel& m) {
  nlohmann::json acts = nlohmann::json::array();
  for (auto a : m.activations) acts.push_back(to_string(a));
  nlohmann::json ws = nlohmann::json::array(), bs = nlohmann::json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(m.weights[l].size()));
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) w.push_back(m.weights[l](r, c));
    ws.push_back(w);
    bs.push_back(std::vector<double>(m.biases[l].data(), m.biases[l].data() + m.biases[l].size()));
  }
  j = {{"layer_dims", m.layer_dims},
       {"activations", acts},
       {"output_activation", to_string(m.output_activation)},
       {"dropout_rate", m.dropout_rate},
       {"weights", ws},
       {"biases", bs}};
}

inline void from_json(const nlohmann::json& j, MlpModel& m) {
  m.layer_dims = j.at("layer_dims").get<std::vector<int>>();
  if (m.layer_dims.size() < 2) throw InputError("model snapshot: need at least two layer dims");
  m.activations.clear();
  for (const auto& a : j.at("activations")) m.activations.push_back(parse_activation(a.get<std::string>()));
  m.output_activation = parse_activation(j.at("output_activation").get<std::string>());
  m.dropout_rate = j.at("dropout_rate").get<double>();
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  const std::size_t L = m.layer_dims.size() - 1;
  if (ws.size() != L || bs.size() != L || m.activations.size() != L - 1)
    throw InputError("model snapshot: layer count mismatch");
  m.weights.clear();
  m.biases.clear();
  for (std::size_t l = 0; l < L; ++l) {
    const int rows = m.layer_dims[l + 1], cols = m.layer_dims[l];
    auto w = ws[l].get<std::vector<double>>();
    auto b = bs[l].get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) ||
        b.size() != static_cast<std::size_t>(rows))
      throw InputError("model snapshot: parameter shape mismatch in layer " + std::to_string(l));
    MatrixXd W(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) W(r, c) = w[static_cast<std::size_t>(r) * cols + c];
    m.weights.push_back(std::move(W));
    m.biases.push_back(Eigen::Map<VectorXd>(b.data(), rows));
  }
}

}  // namespace cdr

#endif  // CDR_NEURAL_HPP
