#ifndef CDR_PIPELINE_HPP
#define CDR_PIPELINE_HPP

// End-to-end commands behind the `cdr` binary. Every command reads a run
// config plus the workspace written by earlier commands and writes its own
// subdirectory; outputs depend only on inputs, config and seed.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cdr/classifiers.hpp"
#include "cdr/common.hpp"
#include "cdr/contrastive.hpp"
#include "cdr/core_data.hpp"
#include "cdr/csv.hpp"
#include "cdr/evaluation.hpp"
#include "cdr/expressiveness.hpp"
#include "cdr/neural.hpp"
#include "cdr/scoring.hpp"

namespace cdr::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

struct Variant {
  std::string drug_repr = "e_d";  // f | e_d
  std::string cell_repr = "e_c";  // g | e_c
  ClassifierKind classifier = ClassifierKind::rf;

  std::string name() const { return drug_repr + "-" + cell_repr + "-" + to_string(classifier); }
  bool operator==(const Variant&) const = default;
};

inline Variant parse_variant(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, spec.find(',') != std::string::npos ? ',' : '-');) parts.push_back(p);
  if (parts.size() != 3) throw InputError("variant must look like e_d,e_c,rf (got \"" + spec + "\")");
  Variant v;
  v.drug_repr = parts[0];
  v.cell_repr = parts[1];
  if (v.drug_repr != "f" && v.drug_repr != "e_d") throw InputError("drug representation must be f or e_d");
  if (v.cell_repr != "g" && v.cell_repr != "e_c") throw InputError("cell representation must be g or e_c");
  v.classifier = parse_classifier(parts[2]);
  return v;
}

struct EncoderSettings {
  SnnConfig snn;
  TrainConfig train;
};

struct RunConfig {
  std::optional<DatasetPaths> paths;
  std::uint64_t seed = 0;
  LogBase log_base = LogBase::e;
  GroupRule group_rule = GroupRule::overlap;
  std::vector<Variant> variants = {Variant{}};
  EncoderSettings drug_encoder;
  EncoderSettings cell_encoder;
  AutoencoderConfig autoencoder;
  ClassifierConfig classifier;
  SplitOptions splits;
  std::size_t pretrain_min_cancer_size = 10;
  double gate_threshold = kPublishedThreshold;  // CES cut for the 1%-effective cell gate
  std::vector<std::size_t> ks = {1, 2, 3, 4, 5, 10};
  std::string grid_metric = "P_cell@1";
  std::string workspace = "cdr_out";
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw InputError("config: unknown key \"" + k + "\" in " + where);
}

inline void read_train(const json& j, TrainConfig& t, const std::string& where) {
  check_keys(j, {"learning_rate", "decay_rate", "decay_steps", "patience", "min_delta", "batch_size", "max_epochs"},
             where);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.decay_rate = j.value("decay_rate", t.decay_rate);
  t.decay_steps = j.value("decay_steps", t.decay_steps);
  t.patience = j.value("patience", t.patience);
  t.min_delta = j.value("min_delta", t.min_delta);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.validate();
}

inline json write_train(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"decay_rate", t.decay_rate}, {"decay_steps", t.decay_steps},
          {"patience", t.patience},           {"min_delta", t.min_delta},   {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs}};
}

inline void read_encoder(const json& j, EncoderSettings& e, const std::string& where) {
  check_keys(j, {"hidden", "activation", "embedding_activation", "dropout", "pairs_per_epoch", "val_fraction", "standardize", "train"}, where);
  e.snn.hidden = j.value("hidden", e.snn.hidden);
  if (j.contains("activation")) e.snn.activation = parse_activation(j["activation"].get<std::string>());
  if (j.contains("embedding_activation"))
    e.snn.embedding_activation = parse_activation(j["embedding_activation"].get<std::string>());
  e.snn.dropout_rate = j.value("dropout", e.snn.dropout_rate);
  e.snn.pairs_per_epoch = j.value("pairs_per_epoch", e.snn.pairs_per_epoch);
  e.snn.val_fraction = j.value("val_fraction", e.snn.val_fraction);
  e.snn.standardize = j.value("standardize", e.snn.standardize);
  if (j.contains("train")) read_train(j["train"], e.train, where + ".train");
  for (int h : e.snn.hidden)
    if (h <= 0) throw InputError("config: " + where + ".hidden widths must be positive");
  if (e.snn.hidden.empty()) throw InputError("config: " + where + ".hidden must not be empty");
  if (e.snn.dropout_rate < 0 || e.snn.dropout_rate >= 1) throw InputError("config: " + where + ".dropout must be in [0,1)");
}

inline json write_encoder(const EncoderSettings& e) {
  return {{"hidden", e.snn.hidden},
          {"activation", to_string(e.snn.activation)},
          {"embedding_activation", to_string(e.snn.embedding_activation)},
          {"dropout", e.snn.dropout_rate},
          {"pairs_per_epoch", e.snn.pairs_per_epoch},
          {"val_fraction", e.snn.val_fraction},
          {"standardize", e.snn.standardize},
          {"train", write_train(e.train)}};
}

}  // namespace detail

inline RunConfig default_config() {
  RunConfig c;
  c.drug_encoder.snn.standardize = false;
  c.cell_encoder.snn.standardize = true;
  c.autoencoder.hidden = {64};
  c.autoencoder.bottleneck = 16;
  return c;
}

/// Parses a config object; relative data paths resolve against `base_dir`.
inline RunConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  detail::check_keys(j, {"paths", "seed", "log_base", "group_rule", "variant", "variants", "drug_encoder",
                         "cell_encoder", "autoencoder", "classifier", "splits", "pretrain_min_cancer_size", "gate_threshold", "ks",
                         "grid_metric", "workspace"},
                     "config");
  RunConfig c = default_config();
  try {
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      detail::check_keys(p, {"pairs", "drugs", "cells", "genes"}, "paths");
      auto get = [&](const char* k) {
        if (!p.contains(k)) throw InputError(std::string("config: paths.") + k + " is required");
        fs::path v = p[k].get<std::string>();
        return (v.is_relative() && !base_dir.empty() ? base_dir / v : v).string();
      };
      c.paths = DatasetPaths{get("pairs"), get("drugs"), get("cells"), get("genes")};
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("log_base")) c.log_base = parse_log_base(j["log_base"].get<std::string>());
    if (j.contains("group_rule")) {
      c.group_rule = parse_group_rule(j["group_rule"].get<std::string>());
      if (c.group_rule == GroupRule::label) throw InputError("config: group_rule must be overlap or exact");
    }
    if (j.contains("variant") && j.contains("variants")) throw InputError("config: give either variant or variants");
    if (j.contains("variant")) c.variants = {parse_variant(j["variant"].get<std::string>())};
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j["variants"]) c.variants.push_back(parse_variant(v.get<std::string>()));
      if (c.variants.empty()) throw InputError("config: variants must not be empty");
    }
    if (j.contains("drug_encoder")) detail::read_encoder(j["drug_encoder"], c.drug_encoder, "drug_encoder");
    if (j.contains("cell_encoder")) detail::read_encoder(j["cell_encoder"], c.cell_encoder, "cell_encoder");
    if (j.contains("autoencoder")) {
      const auto& a = j["autoencoder"];
      detail::check_keys(a, {"hidden", "bottleneck", "activation", "dropout", "train"}, "autoencoder");
      c.autoencoder.hidden = a.value("hidden", c.autoencoder.hidden);
      c.autoencoder.bottleneck = a.value("bottleneck", c.autoencoder.bottleneck);
      if (a.contains("activation")) c.autoencoder.activation = parse_activation(a["activation"].get<std::string>());
      c.autoencoder.dropout_rate = a.value("dropout", c.autoencoder.dropout_rate);
      if (a.contains("train")) detail::read_train(a["train"], c.autoencoder.train, "autoencoder.train");
    }
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      detail::check_keys(k, {"lr", "rf", "dnn"}, "classifier");
      if (k.contains("lr")) {
        detail::check_keys(k["lr"], {"l2", "max_iter", "tol"}, "classifier.lr");
        c.classifier.lr.l2 = k["lr"].value("l2", c.classifier.lr.l2);
        c.classifier.lr.max_iter = k["lr"].value("max_iter", c.classifier.lr.max_iter);
        c.classifier.lr.tol = k["lr"].value("tol", c.classifier.lr.tol);
      }
      if (k.contains("rf")) {
        detail::check_keys(k["rf"], {"criterion", "n_estimators", "min_samples_split"}, "classifier.rf");
        const auto& r = k["rf"];
        if (r.contains("criterion")) c.classifier.rf.criterion = parse_criterion(r["criterion"].get<std::string>());
        c.classifier.rf.n_estimators = r.value("n_estimators", c.classifier.rf.n_estimators);
        c.classifier.rf.min_samples_split = r.value("min_samples_split", c.classifier.rf.min_samples_split);
      }
      if (k.contains("dnn")) {
        const auto& d = k["dnn"];
        detail::check_keys(d, {"hidden", "activation", "dropout", "val_fraction", "train"}, "classifier.dnn");
        c.classifier.dnn.hidden = d.value("hidden", c.classifier.dnn.hidden);
        if (d.contains("activation")) c.classifier.dnn.activation = parse_activation(d["activation"].get<std::string>());
        c.classifier.dnn.dropout_rate = d.value("dropout", c.classifier.dnn.dropout_rate);
        c.classifier.dnn.val_fraction = d.value("val_fraction", c.classifier.dnn.val_fraction);
        if (d.contains("train")) detail::read_train(d["train"], c.classifier.dnn.train, "classifier.dnn.train");
      }
    }
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      detail::check_keys(s, {"novel_min_cells", "test_percent", "folds"}, "splits");
      c.splits.novel_min_cells = s.value("novel_min_cells", c.splits.novel_min_cells);
      c.splits.test_percent = s.value("test_percent", c.splits.test_percent);
      c.splits.n_folds = s.value("folds", c.splits.n_folds);
      if (c.splits.n_folds < 2) throw InputError("config: splits.folds must be >= 2");
      if (c.splits.test_percent >= 100) throw InputError("config: splits.test_percent must be < 100");
    }
    c.pretrain_min_cancer_size = j.value("pretrain_min_cancer_size", c.pretrain_min_cancer_size);
    c.gate_threshold = j.value("gate_threshold", c.gate_threshold);
    if (j.contains("ks")) {
      c.ks = j["ks"].get<std::vector<std::size_t>>();
      if (c.ks.empty() || std::count(c.ks.begin(), c.ks.end(), 0u)) throw InputError("config: ks must be positive");
    }
    c.grid_metric = j.value("grid_metric", c.grid_metric);
    c.workspace = j.value("workspace", c.workspace);
    if (fs::path(c.workspace).is_relative() && !base_dir.empty()) c.workspace = (base_dir / c.workspace).string();
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return c;
}

/// Canonical echo of the effective configuration (no workspace location,
/// so relocated runs stay byte-identical).
inline json config_to_json(const RunConfig& c) {
  json j;
  if (c.paths)
    j["paths"] = {{"pairs", fs::path(c.paths->pairs).filename().string()},
                  {"drugs", fs::path(c.paths->drugs).filename().string()},
                  {"cells", fs::path(c.paths->cells).filename().string()},
                  {"genes", fs::path(c.paths->genes).filename().string()}};
  j["seed"] = c.seed;
  j["log_base"] = to_string(c.log_base);
  j["group_rule"] = to_string(c.group_rule);
  j["variants"] = json::array();
  for (const auto& v : c.variants) j["variants"].push_back(v.drug_repr + "," + v.cell_repr + "," + to_string(v.classifier));
  j["drug_encoder"] = detail::write_encoder(c.drug_encoder);
  j["cell_encoder"] = detail::write_encoder(c.cell_encoder);
  j["autoencoder"] = {{"hidden", c.autoencoder.hidden},
                      {"bottleneck", c.autoencoder.bottleneck},
                      {"activation", to_string(c.autoencoder.activation)},
                      {"dropout", c.autoencoder.dropout_rate},
                      {"train", detail::write_train(c.autoencoder.train)}};
  j["classifier"] = {
      {"lr", {{"l2", c.classifier.lr.l2}, {"max_iter", c.classifier.lr.max_iter}, {"tol", c.classifier.lr.tol}}},
      {"rf",
       {{"criterion", to_string(c.classifier.rf.criterion)},
        {"n_estimators", c.classifier.rf.n_estimators},
        {"min_samples_split", c.classifier.rf.min_samples_split}}},
      {"dnn",
       {{"hidden", c.classifier.dnn.hidden},
        {"activation", to_string(c.classifier.dnn.activation)},
        {"dropout", c.classifier.dnn.dropout_rate},
        {"val_fraction", c.classifier.dnn.val_fraction},
        {"train", detail::write_train(c.classifier.dnn.train)}}}};
  j["splits"] = {{"novel_min_cells", c.splits.novel_min_cells},
                 {"test_percent", c.splits.test_percent},
                 {"folds", c.splits.n_folds}};
  j["pretrain_min_cancer_size"] = c.pretrain_min_cancer_size;
  j["gate_threshold"] = c.gate_threshold;
  j["ks"] = c.ks;
  j["grid_metric"] = c.grid_metric;
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": invalid JSON: " + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path), fs::path(path).parent_path());
}

/// Run config for a synthetic dataset written by write_synthetic; data paths
/// are relative to the config's directory.
inline json synthetic_run_json(const DatasetPaths& p, std::uint64_t seed) {
  auto rel = [](const std::string& s) { return fs::path(s).filename().string(); };
  json run = {{"paths", {{"pairs", rel(p.pairs)}, {"drugs", rel(p.drugs)}, {"cells", rel(p.cells)}, {"genes", rel(p.genes)}}},
              {"seed", seed},
              {"workspace", "out"}};
  // Small datasets need more, smaller SGD steps than the defaults.
  const json enc = {{"train", {{"batch_size", 32}, {"learning_rate", 0.1}}}};
  run["drug_encoder"] = enc;
  run["cell_encoder"] = enc;
  run["autoencoder"] = {{"train", {{"batch_size", 32}, {"learning_rate", 0.05}}}};
  run["variants"] = {"e_d,e_c,rf", "f,g,rf"};
  return run;
}

// ---------------------------------------------------------------------------
// Output helpers

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                           const json& extra = json::object()) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  json j = {{"command", command}, {"config", config_to_json(cfg)}, {"files", files}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(dir / "manifest.json", j);
}

struct Workspace {
  fs::path root;
  fs::path dataset() const { return root / "dataset"; }
  fs::path encoders() const { return root / "encoders"; }
  fs::path train_eval() const { return root / "train_eval"; }
  fs::path analysis(const std::string& sub) const { return root / "analysis" / sub; }
};

// ---------------------------------------------------------------------------
// ingest

struct LabeledPair {
  std::string drug_id;
  std::string cell_id;
  double ces = 0.0;
  int label = 0;
};

struct IngestSummary {
  std::size_t n_pairs = 0, n_drugs = 0, n_cells = 0, n_pretrain_cells = 0;
  ThresholdSpec threshold;
  std::map<std::string, std::size_t> drops;  // rule -> count of pair rows
  std::size_t rejected_rows = 0;
};

inline IngestSummary cmd_ingest(const RunConfig& cfg, const Workspace& ws) {
  if (!cfg.paths) throw InputError("ingest: config has no \"paths\" block");
  for (const auto& p : {cfg.paths->pairs, cfg.paths->drugs, cfg.paths->cells, cfg.paths->genes})
    if (!fs::exists(p)) throw InputError("ingest: input file not found: " + p);
  RawDataset raw = parse_dataset(*cfg.paths);
  PairFilterResult pf = filter_and_dedup_pairs(raw.pairs, raw.drugs);
  score_pairs(pf.pairs, cfg.log_base);
  std::vector<double> ces;
  ces.reserve(pf.pairs.size());
  for (const auto& p : pf.pairs) ces.push_back(*p.ces);
  if (ces.size() < 2) throw InputError("ingest: fewer than 2 pairs survive quality filtering");
  const ThresholdSpec spec = compute_threshold(ces, cfg.log_base);

  const ExpressionMatrix em = select_genes(raw.expression, raw.panel);
  const std::vector<CellLineRecord> with_expr = to_cell_records(em);
  CellFilterResult cf = filter_cell_lines(pf.pairs, with_expr, cfg.gate_threshold);
  label_pairs(cf.pairs, spec);

  std::unordered_set<std::string> evaluated;
  for (const auto& p : pf.pairs) evaluated.insert(p.cell_id);
  const auto pretrain = select_pretraining_cells(with_expr, evaluated, cfg.pretrain_min_cancer_size);
  const SplitPlan plan = make_splits(cf.cells, cfg.seed, cfg.splits);

  std::vector<DrugRecord> drugs;
  for (const auto& d : raw.drugs)
    if (!d.withdrawn) drugs.push_back(d);
  std::sort(drugs.begin(), drugs.end(), [](const auto& a, const auto& b) { return a.drug_id < b.drug_id; });
  std::vector<CellLineRecord> known;
  for (const auto& c : with_expr)
    if (!is_unknown_cancer(c.cancer_type)) known.push_back(c);
  std::sort(known.begin(), known.end(), [](const auto& a, const auto& b) { return a.cell_id < b.cell_id; });

  const fs::path dir = ws.dataset();
  fs::create_directories(dir);
  write_pairs_csv((dir / "pairs.csv").string(), pf.pairs);
  write_drugs_csv((dir / "drugs.csv").string(), drugs);
  write_cells_csv((dir / "cells.csv").string(), raw.panel, known);
  write_gene_panel((dir / "genes.txt").string(), raw.panel);
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : cf.pairs)
      rows.push_back({p.drug_id, p.cell_id, csv::format_number(*p.ces), std::to_string(*p.label)});
    csv::write((dir / "labels.csv").string(), {"drug_id", "cell_id", "ces", "label"}, rows);
  }
  write_json(dir / "threshold.json", spec);
  write_json(dir / "splits.json", plan);
  {
    std::string s;
    for (const auto& c : pretrain) s += c.cell_id + "\n";
    write_text(dir / "pretrain_cells.txt", s);
  }

  IngestSummary sum;
  sum.n_pairs = cf.pairs.size();
  {
    std::set<std::string> d, c;
    for (const auto& p : cf.pairs) {
      d.insert(p.drug_id);
      c.insert(p.cell_id);
    }
    sum.n_drugs = d.size();
    sum.n_cells = c.size();
  }
  sum.n_pretrain_cells = pretrain.size();
  sum.threshold = spec;
  sum.rejected_rows = raw.rejected.size();
  {
    std::string audit;
    for (const auto& d : raw.rejected) {
      json j = {{"rule", "rejected_row"}, {"table", fs::path(d.file).filename().string()}, {"line", d.line},
                {"message", d.message}};
      audit += j.dump() + "\n";
    }
    for (const auto* log : {&pf.audit, &cf.audit})
      for (const auto& a : *log) {
        audit += json(a).dump() + "\n";
        if (a.table == "pairs") ++sum.drops[a.rule];
      }
    write_text(dir / "audit.jsonl", audit);
  }
  write_json(dir / "summary.json", {{"pairs", sum.n_pairs},
                                    {"drugs", sum.n_drugs},
                                    {"cell_lines", sum.n_cells},
                                    {"pretraining_cells", sum.n_pretrain_cells},
                                    {"novel_test_cells", plan.novel_test.size()},
                                    {"trained_on_test_cells", plan.trained_on_test.size()},
                                    {"threshold", spec.threshold}});
  write_json(dir / "audit_summary.json", {{"pair_drops", sum.drops}, {"rejected_rows", sum.rejected_rows}});
  write_manifest(dir, "ingest", cfg);
  return sum;
}

// ---------------------------------------------------------------------------
// Dataset bundle (ingest output)

struct Bundle {
  std::vector<DrugRecord> drugs;
  std::unordered_map<std::string, std::size_t> drug_index;
  GenePanel panel;
  std::vector<CellLineRecord> cells;
  std::unordered_map<std::string, std::size_t> cell_index;
  std::vector<LabeledPair> labels;
  ThresholdSpec threshold;
  SplitPlan splits;
  std::vector<std::string> pretrain_cells;

  const CellLineRecord& cell(const std::string& id) const { return cells[cell_index.at(id)]; }
  std::map<std::string, std::string> cancer_of() const {
    std::map<std::string, std::string> m;
    for (const auto& c : cells) m[c.cell_id] = c.cancer_type;
    return m;
  }
};

inline Bundle load_bundle(const Workspace& ws) {
  const fs::path dir = ws.dataset();
  if (!fs::exists(dir / "labels.csv"))
    throw InputError("no dataset in " + dir.string() + "; run `cdr ingest` first");
  Bundle b;
  std::vector<Diagnostic> rejected;
  b.drugs = parse_drugs((dir / "drugs.csv").string(), rejected);
  b.panel = read_gene_panel((dir / "genes.txt").string());
  const ExpressionTable et = parse_cells((dir / "cells.csv").string(), rejected);
  if (!rejected.empty())
    throw InputError("dataset " + dir.string() + " is corrupt: " + rejected.front().file + ":" +
                     std::to_string(rejected.front().line) + ": " + rejected.front().message);
  b.cells = to_cell_records(select_genes(et, b.panel));
  for (std::size_t i = 0; i < b.drugs.size(); ++i) b.drug_index[b.drugs[i].drug_id] = i;
  for (std::size_t i = 0; i < b.cells.size(); ++i) b.cell_index[b.cells[i].cell_id] = i;

  const csv::Table t = csv::read((dir / "labels.csv").string());
  if (t.header != std::vector<std::string>{"drug_id", "cell_id", "ces", "label"})
    throw InputError((dir / "labels.csv").string() + ": unexpected header");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto ces = row.size() == 4 ? csv::parse_number(row[2]) : std::nullopt;
    if (!ces || (row[3] != "0" && row[3] != "1") || !b.drug_index.count(row[0]) || !b.cell_index.count(row[1]))
      throw InputError((dir / "labels.csv").string() + ":" + std::to_string(t.lines[r]) + ": invalid row");
    b.labels.push_back({row[0], row[1], *ces, row[3] == "1"});
  }
  try {
    b.threshold = read_json_file((dir / "threshold.json").string()).get<ThresholdSpec>();
    b.splits = read_json_file((dir / "splits.json").string()).get<SplitPlan>();
  } catch (const json::exception& e) {
    throw InputError("dataset " + dir.string() + ": " + e.what());
  }
  std::ifstream in(dir / "pretrain_cells.txt");
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) {
      if (!b.cell_index.count(line)) throw InputError("pretrain_cells.txt names unknown cell " + line);
      b.pretrain_cells.push_back(line);
    }
  return b;
}

// ---------------------------------------------------------------------------
// Representations

inline MatrixXd fingerprint_matrix(const std::vector<DrugRecord>& drugs) {
  MatrixXd m(static_cast<Eigen::Index>(drugs.size()), static_cast<Eigen::Index>(kFingerprintBits));
  for (std::size_t i = 0; i < drugs.size(); ++i)
    for (std::size_t b = 0; b < kFingerprintBits; ++b)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = drugs[i].fingerprint[b] ? 1.0 : 0.0;
  return m;
}

inline MatrixXd expression_matrix(const std::vector<CellLineRecord>& cells) {
  const Eigen::Index w = cells.empty() ? 0 : static_cast<Eigen::Index>(cells.front().expression.size());
  MatrixXd m(static_cast<Eigen::Index>(cells.size()), w);
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (Eigen::Index g = 0; g < w; ++g) m(static_cast<Eigen::Index>(i), g) = cells[i].expression[static_cast<std::size_t>(g)];
  return m;
}

inline fs::path encoder_path(const Workspace& ws, const std::string& role) {
  return ws.encoders() / (role + "_encoder.json");
}

inline Encoder load_encoder(const Workspace& ws, const std::string& role) {
  const fs::path p = encoder_path(ws, role);
  if (!fs::exists(p)) {
    const std::string flag = role == "autoencoder" ? "ae" : role;
    throw InputError("no " + role + " encoder at " + p.string() + "; run `cdr pretrain --role " + flag + "` first");
  }
  try {
    Encoder e = read_json_file(p.string()).get<Encoder>();
    return e;
  } catch (const json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

struct Representations {
  MatrixXd drugs;  // rows aligned with Bundle::drugs
  MatrixXd cells;  // rows aligned with Bundle::cells
};

inline Representations build_representations(const Bundle& b, const Variant& v, const Workspace& ws,
                                              const Encoder* drug_enc = nullptr, const Encoder* cell_enc = nullptr) {
  Representations r;
  const MatrixXd f = fingerprint_matrix(b.drugs);
  const MatrixXd g = expression_matrix(b.cells);
  if (v.drug_repr == "e_d") {
    std::optional<Encoder> loaded;
    if (!drug_enc) drug_enc = &loaded.emplace(load_encoder(ws, "drug"));
    if (drug_enc->net.input_width() != f.cols()) throw InputError("drug encoder input width does not match fingerprints");
    r.drugs = embed(*drug_enc, f);
  } else {
    r.drugs = f;
  }
  if (v.cell_repr == "e_c") {
    std::optional<Encoder> loaded;
    if (!cell_enc) cell_enc = &loaded.emplace(load_encoder(ws, "cell"));
    if (cell_enc->net.input_width() != g.cols())
      throw InputError("cell encoder input width does not match the gene panel");
    r.cells = embed(*cell_enc, g);
  } else {
    r.cells = g;
  }
  return r;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOutcome {
  std::optional<PretrainResult> drug;
  std::optional<PretrainResult> cell;
  std::optional<std::pair<MlpModel, TrainReport>> autoencoder;
};

inline PretrainResult pretrain_drug_encoder(const Bundle& b, const RunConfig& cfg, const EncoderSettings& es) {
  std::set<std::string> in_pairs;
  for (const auto& p : b.labels) in_pairs.insert(p.drug_id);
  std::vector<DrugRecord> subset;
  for (const auto& d : b.drugs)
    if (in_pairs.count(d.drug_id) && !d.gene_targets.empty()) subset.push_back(d);
  const GroupAssignment groups = assign_drug_groups(subset, cfg.group_rule);
  TrainConfig tc = es.train;
  tc.seed = derive_seed(cfg.seed, "pretrain-drug");
  PretrainResult r = pretrain_encoder(fingerprint_matrix(subset), groups, es.snn, tc);
  r.encoder.role = "drug";
  return r;
}

inline PretrainResult pretrain_cell_encoder(const Bundle& b, const RunConfig& cfg, const EncoderSettings& es) {
  std::vector<CellLineRecord> subset;
  for (const auto& id : b.pretrain_cells) subset.push_back(b.cell(id));
  if (subset.empty()) throw InputError("no pretraining cell lines (all cell lines have response data?)");
  const GroupAssignment groups = assign_cell_groups(subset);
  TrainConfig tc = es.train;
  tc.seed = derive_seed(cfg.seed, "pretrain-cell");
  PretrainResult r = pretrain_encoder(expression_matrix(subset), groups, es.snn, tc);
  r.encoder.role = "cell";
  return r;
}

/// role: "drug", "cell", "both" or "ae".
inline PretrainOutcome cmd_pretrain(const RunConfig& cfg, const Workspace& ws, const std::string& role) {
  if (role != "drug" && role != "cell" && role != "both" && role != "ae")
    throw InputError("--role must be drug, cell, both or ae");
  const Bundle b = load_bundle(ws);
  PretrainOutcome out;
  const bool do_drug = role == "drug" || role == "both";
  const bool do_cell = role == "cell" || role == "both";
  if (do_drug && do_cell && worker_count() > 1) {
    std::exception_ptr err;
    std::thread t([&] {
      try {
        out.drug = pretrain_drug_encoder(b, cfg, cfg.drug_encoder);
      } catch (...) {
        err = std::current_exception();
      }
    });
    out.cell = pretrain_cell_encoder(b, cfg, cfg.cell_encoder);
    t.join();
    if (err) std::rethrow_exception(err);
  } else {
    if (do_drug) out.drug = pretrain_drug_encoder(b, cfg, cfg.drug_encoder);
    if (do_cell) out.cell = pretrain_cell_encoder(b, cfg, cfg.cell_encoder);
  }
  const fs::path dir = ws.encoders();
  fs::create_directories(dir);
  for (auto* r : {&out.drug, &out.cell})
    if (*r) {
      write_json(encoder_path(ws, (*r)->encoder.role), (*r)->encoder);
      write_json(dir / ((*r)->encoder.role + "_report.json"), (*r)->report);
    }
  if (role == "ae") {
    std::vector<CellLineRecord> subset;
    for (const auto& id : b.pretrain_cells) subset.push_back(b.cell(id));
    if (subset.empty()) throw InputError("no pretraining cell lines for the autoencoder");
    const MatrixXd g = expression_matrix(subset);
    const Standardizer scaler = Standardizer::fit(g);
    AutoencoderConfig ac = cfg.autoencoder;
    ac.train.seed = derive_seed(cfg.seed, "pretrain-ae");
    out.autoencoder = train_autoencoder(scaler.apply(g), ac);
    Encoder e{encoder_half(out.autoencoder->first), scaler, "autoencoder", "reconstruction"};
    write_json(encoder_path(ws, "autoencoder"), e);
    write_json(dir / "autoencoder_report.json", out.autoencoder->second);
  }
  write_manifest(dir, "pretrain", cfg);
  return out;
}

// ---------------------------------------------------------------------------
// train-eval

struct PairRows {
  std::vector<std::size_t> drug_row;
  std::vector<std::size_t> cell_row;
  std::vector<int> y;
  std::vector<std::size_t> label_index;  // into Bundle::labels
};

inline PairRows select_pairs(const Bundle& b, const std::set<std::string>& cells) {
  PairRows r;
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    const auto& p = b.labels[i];
    if (!cells.count(p.cell_id)) continue;
    r.drug_row.push_back(b.drug_index.at(p.drug_id));
    r.cell_row.push_back(b.cell_index.at(p.cell_id));
    r.y.push_back(p.label);
    r.label_index.push_back(i);
  }
  return r;
}

inline FeatureSet features_for(const Representations& rep, const PairRows& rows) {
  return concat_features(rep.drugs, rows.drug_row, rep.cells, rows.cell_row);
}

inline ClassifierConfig seeded(ClassifierConfig c, std::uint64_t seed) {
  c.rf.seed = seed;
  c.dnn.train.seed = seed;
  return c;
}

/// Rankings per cell over the drugs measured for that cell.
inline std::vector<Ranking> rank_rows(const Bundle& b, const PairRows& rows, const VectorXd& scores) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> per_cell;
  for (std::size_t i = 0; i < rows.label_index.size(); ++i) {
    const auto& p = b.labels[rows.label_index[i]];
    per_cell[p.cell_id].emplace_back(p.drug_id, scores(static_cast<Eigen::Index>(i)));
  }
  std::vector<Ranking> out;
  for (auto& [cell, s] : per_cell) out.push_back(rank_drugs(cell, std::move(s)));
  return out;
}

inline std::map<std::string, std::set<std::string>> effective_sets(const Bundle& b) {
  std::map<std::string, std::set<std::string>> e;
  for (const auto& p : b.labels)
    if (p.label) e[p.cell_id].insert(p.drug_id);
  return e;
}

struct FoldResult {
  std::map<std::size_t, double> p_cell;    // mean over the fold's cells
  std::map<std::size_t, double> p_cancer;  // unweighted mean over cancers
};

struct VariantResult {
  Variant variant;
  std::vector<FoldResult> folds;
  std::vector<Classifier> fold_models;
  Classifier final_model;
  std::vector<Ranking> trained_on_rankings;
  std::vector<Ranking> novel_rankings;
  MetricsReport trained_on;
  MetricsReport novel;
};

inline FoldResult summarize_fold(const MetricsReport& m) {
  FoldResult f;
  for (std::size_t k : m.ks) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& [cell, pk] : m.per_cell)
      if (auto it = pk.find(k); it != pk.end()) {
        s += it->second;
        ++n;
      }
    if (n) f.p_cell[k] = s / static_cast<double>(n);
    if (auto it = m.overall.find(k); it != m.overall.end()) f.p_cancer[k] = it->second;
  }
  return f;
}

inline std::set<std::string> training_cells(const SplitPlan& plan) {
  std::set<std::string> s;
  for (const auto& f : plan.folds) s.insert(f.begin(), f.end());
  return s;
}

/// k-fold CV over the training cells, then a final fit on all of them and
/// evaluation on both test sets.
inline VariantResult run_variant(const Bundle& b, const Representations& rep, const Variant& v,
                                 const ClassifierConfig& base, const std::vector<std::size_t>& ks,
                                 std::uint64_t seed, bool final_fit = true) {
  VariantResult res;
  res.variant = v;
  ClassifierConfig cc = base;
  cc.kind = v.classifier;
  const auto effective = effective_sets(b);
  const auto cancer_of = b.cancer_of();
  const std::size_t K = b.splits.folds.size();
  for (std::size_t f = 0; f < K; ++f) {
    std::set<std::string> train_cells, eval_cells = b.splits.folds[f];
    for (std::size_t o = 0; o < K; ++o)
      if (o != f) train_cells.insert(b.splits.folds[o].begin(), b.splits.folds[o].end());
    const PairRows tr = select_pairs(b, train_cells), ev = select_pairs(b, eval_cells);
    if (tr.y.empty() || ev.y.empty()) throw InputError("fold " + std::to_string(f) + " has no training or evaluation pairs");
    const FeatureSet xtr = features_for(rep, tr);
    Classifier model = train_classifier(xtr.x, tr.y, seeded(cc, derive_seed(seed, "fold-" + std::to_string(f))));
    const VectorXd scores = predict_scores(model, features_for(rep, ev).x);
    const auto rankings = rank_rows(b, ev, scores);
    res.folds.push_back(summarize_fold(compute_metrics(rankings, effective, cancer_of, ks)));
    res.fold_models.push_back(std::move(model));
  }
  if (!final_fit) return res;
  const PairRows all = select_pairs(b, training_cells(b.splits));
  res.final_model = train_classifier(features_for(rep, all).x, all.y, seeded(cc, derive_seed(seed, "final")));
  auto evaluate = [&](const std::set<std::string>& cells, std::vector<Ranking>& rk, MetricsReport& m) {
    const PairRows rows = select_pairs(b, cells);
    if (rows.y.empty()) {
      m.ks = ks;
      return;
    }
    rk = rank_rows(b, rows, predict_scores(res.final_model, features_for(rep, rows).x));
    m = compute_metrics(rk, effective, cancer_of, ks);
  };
  evaluate(b.splits.trained_on_test, res.trained_on_rankings, res.trained_on);
  evaluate(b.splits.novel_test, res.novel_rankings, res.novel);
  return res;
}

inline std::map<std::string, double> cv_means(const VariantResult& r) {
  std::map<std::string, double> m;
  std::map<std::string, std::size_t> n;
  for (const auto& f : r.folds) {
    for (const auto& [k, v] : f.p_cell) {
      m["P_cell@" + std::to_string(k)] += v;
      ++n["P_cell@" + std::to_string(k)];
    }
    for (const auto& [k, v] : f.p_cancer) {
      m["P_cancer@" + std::to_string(k)] += v;
      ++n["P_cancer@" + std::to_string(k)];
    }
  }
  for (auto& [k, v] : m) v /= static_cast<double>(n[k]);
  return m;
}

inline void write_rankings_csv(const fs::path& path, const std::vector<const std::vector<Ranking>*>& sets) {
  std::vector<std::vector<std::string>> rows;
  for (const auto* set : sets)
    for (const auto& r : *set)
      for (std::size_t i = 0; i < r.entries.size(); ++i)
        rows.push_back({r.cell_id, r.entries[i].first, csv::format_number(r.entries[i].second), std::to_string(i + 1)});
  fs::create_directories(path.parent_path());
  csv::write(path.string(), {"cell_id", "drug_id", "score", "rank"}, rows);
}

inline std::vector<Ranking> read_rankings_csv(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 3 || t.header[0] != "cell_id" || t.header[1] != "drug_id" || t.header[2] != "score")
    throw InputError(path + ": header must start with cell_id,drug_id,score");
  std::map<std::string, std::vector<std::pair<std::string, double>>> per_cell;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto s = t.rows[r].size() >= 3 ? csv::parse_number(t.rows[r][2]) : std::nullopt;
    if (!s) throw InputError(path + ":" + std::to_string(t.lines[r]) + ": invalid score");
    per_cell[t.rows[r][0]].emplace_back(t.rows[r][1], *s);
  }
  std::vector<Ranking> out;
  for (auto& [c, s] : per_cell) out.push_back(rank_drugs(c, std::move(s)));
  return out;
}

inline json fold_json(const VariantResult& r) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    json j;
    for (const auto& [k, v] : f.p_cell) j["P_cell@" + std::to_string(k)] = v;
    for (const auto& [k, v] : f.p_cancer) j["P_cancer@" + std::to_string(k)] = v;
    folds.push_back(j);
  }
  return {{"folds", folds}, {"mean", cv_means(r)}};
}

struct StatRow {
  std::string model_a, model_b, metric;
  TTestResult t;
};

/// Pairwise variant comparisons on per-fold means, Bonferroni over the
/// number of variant pairs.
inline std::vector<StatRow> compare_variants(const std::vector<VariantResult>& results,
                                             const std::vector<std::size_t>& ks) {
  std::vector<StatRow> rows;
  const int n_pairs = static_cast<int>(results.size() * (results.size() - 1) / 2);
  for (std::size_t a = 0; a < results.size(); ++a)
    for (std::size_t c = a + 1; c < results.size(); ++c)
      for (const char* kind : {"P_cell", "P_cancer"})
        for (std::size_t k : ks) {
          std::vector<double> va, vb;
          auto pick = [&](const VariantResult& r, std::vector<double>& out) {
            for (const auto& f : r.folds) {
              const auto& m = std::string(kind) == "P_cell" ? f.p_cell : f.p_cancer;
              if (auto it = m.find(k); it != m.end()) out.push_back(it->second);
            }
          };
          pick(results[a], va);
          pick(results[c], vb);
          if (va.size() < 2 || vb.size() < 2) continue;
          rows.push_back({results[a].variant.name(), results[c].variant.name(), std::string(kind) + "@" + std::to_string(k),
                          ttest_bonferroni(va, vb, std::max(1, n_pairs))});
        }
  return rows;
}

inline void write_stats_csv(const fs::path& path, const std::vector<StatRow>& rows) {
  auto num = [](double v) { return std::isnan(v) ? std::string("NA") : csv::format_number(v); };
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({r.model_a, r.model_b, r.metric, num(r.t.mean_a), num(r.t.mean_b), num(r.t.t_stat),
                   std::to_string(r.t.df), num(r.t.p), num(r.t.p_adjusted), std::to_string(r.t.n_tests),
                   stars(r.t.p_adjusted)});
  csv::write(path.string(), {"model_a", "model_b", "metric", "mean_a", "mean_b", "t", "df", "p", "p_adj", "n_tests", "stars"},
             out);
}

struct TrainEvalOptions {
  bool grid = false;           // classifier grid
  bool grid_encoders = false;  // encoder grid (re-pretrains per point)
  std::size_t grid_limit = 0;  // 0 = whole grid
};

inline std::vector<VariantResult> cmd_train_eval(const RunConfig& cfg, const Workspace& ws,
                                                 const TrainEvalOptions& opt = {}) {
  const Bundle b = load_bundle(ws);
  std::vector<VariantResult> results;
  const fs::path root = ws.train_eval();
  fs::create_directories(root);
  for (const auto& v : cfg.variants) {
    const Representations rep = build_representations(b, v, ws);
    VariantResult r = run_variant(b, rep, v, cfg.classifier, cfg.ks, cfg.seed);
    const fs::path dir = root / v.name();
    fs::create_directories(dir);
    write_rankings_csv(dir / "rankings.csv", {&r.trained_on_rankings, &r.novel_rankings});
    json metrics = metrics_json(r.trained_on);
    metrics["variant"] = v.name();
    metrics["novel_test"] = metrics_json(r.novel);
    metrics["cv"] = fold_json(r);
    write_json(dir / "metrics.json", metrics);
    write_json(dir / "model.json", classifier_json(r.final_model));
    if (v.classifier == ClassifierKind::lr) {
      json folds = json::array();
      for (const auto& m : r.fold_models) folds.push_back(classifier_json(m));
      write_json(dir / "cv_models.json", folds);
    }
    write_manifest(dir, "train-eval", cfg, {{"variant", v.name()}});
    results.push_back(std::move(r));
  }
  write_stats_csv(root / "stats.csv", compare_variants(results, cfg.ks));

  if (opt.grid || opt.grid_encoders) {
    const Variant& v = cfg.variants.front();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> metric_names;
    for (const char* kind : {"P_cell@", "P_cancer@"})
      for (std::size_t k : cfg.ks) metric_names.push_back(kind + std::to_string(k));
    if (std::find(metric_names.begin(), metric_names.end(), cfg.grid_metric) == metric_names.end())
      throw InputError("grid_metric " + cfg.grid_metric + " is not one of the computed metrics");
    auto emit = [&](const std::string& file, const std::vector<json>& configs, const std::vector<GridEntry>& ranked) {
      std::vector<std::string> header = {"rank", "index", "config"};
      header.insert(header.end(), metric_names.begin(), metric_names.end());
      std::vector<std::vector<std::string>> out;
      for (std::size_t i = 0; i < ranked.size(); ++i) {
        std::vector<std::string> row = {std::to_string(i + 1), std::to_string(ranked[i].index),
                                        configs[ranked[i].index].dump()};
        for (const auto& m : metric_names) row.push_back(csv::format_number(ranked[i].metrics.at(m)));
        out.push_back(std::move(row));
      }
      csv::write((root / file).string(), header, out);
    };
    if (opt.grid) {
      std::vector<ClassifierConfig> space;
      std::vector<json> described;
      ClassifierConfig base = cfg.classifier;
      base.kind = v.classifier;
      if (v.classifier == ClassifierKind::rf) {
        for (const auto& f : forest_grid()) {
          ClassifierConfig c = base;
          c.rf = f;
          space.push_back(c);
          described.push_back(f);
        }
      } else if (v.classifier == ClassifierKind::dnn) {
        for (const auto& d : dnn_grid()) {
          ClassifierConfig c = base;
          c.dnn = d;
          space.push_back(c);
          described.push_back({{"hidden", d.hidden}, {"activation", to_string(d.activation)}, {"dropout", d.dropout_rate},
                               {"learning_rate", d.train.learning_rate}, {"decay_steps", d.train.decay_steps}});
        }
      } else {
        for (double l2 : {0.0, 1e-4, 1e-3, 1e-2, 1e-1}) {
          ClassifierConfig c = base;
          c.lr.l2 = l2;
          space.push_back(c);
          described.push_back({{"l2", l2}});
        }
      }
      if (opt.grid_limit && opt.grid_limit < space.size()) {
        space.resize(opt.grid_limit);
        described.resize(opt.grid_limit);
      }
      const Representations rep = build_representations(b, v, ws);
      const auto ranked = grid_search(space.size(), cfg.grid_metric, [&](std::size_t i) {
        return cv_means(run_variant(b, rep, v, space[i], cfg.ks, cfg.seed, false));
      });
      emit("grid.csv", described, ranked);
    }
    if (opt.grid_encoders) {
      auto points = encoder_grid();
      if (opt.grid_limit && opt.grid_limit < points.size()) points.resize(opt.grid_limit);
      std::vector<json> described;
      for (const auto& p : points)
        described.push_back({{"hidden", p.hidden}, {"activation", to_string(p.activation)}, {"dropout", p.dropout_rate},
                             {"learning_rate", p.learning_rate}});
      const auto ranked = grid_search(points.size(), cfg.grid_metric, [&](std::size_t i) {
        auto settings = [&](EncoderSettings e) {
          e.snn.hidden = points[i].hidden;
          e.snn.activation = points[i].activation;
          e.snn.dropout_rate = points[i].dropout_rate;
          e.train.learning_rate = points[i].learning_rate;
          return e;
        };
        std::optional<Encoder> de, ce;
        if (v.drug_repr == "e_d") de = pretrain_drug_encoder(b, cfg, settings(cfg.drug_encoder)).encoder;
        if (v.cell_repr == "e_c") ce = pretrain_cell_encoder(b, cfg, settings(cfg.cell_encoder)).encoder;
        const Representations rep = build_representations(b, v, ws, de ? &*de : nullptr, ce ? &*ce : nullptr);
        return cv_means(run_variant(b, rep, v, cfg.classifier, cfg.ks, cfg.seed, false));
      });
      emit("encoder_grid.csv", described, ranked);
    }
  }
  write_manifest(root, "train-eval", cfg);
  return results;
}

// ---------------------------------------------------------------------------
// analyze

inline Classifier load_model(const Workspace& ws, const Variant& v) {
  const fs::path p = ws.train_eval() / v.name() / "model.json";
  if (!fs::exists(p))
    throw InputError("no trained model for variant " + v.name() + " at " + p.string() + "; run `cdr train-eval` first");
  try {
    return classifier_from_json(read_json_file(p.string()));
  } catch (const json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

/// Scores every (drug, cell) combination for the given cells and drug subset.
inline std::vector<Ranking> score_all(const Bundle& b, const Representations& rep, const Classifier& model,
                                      const std::vector<std::string>& cells, const std::vector<std::size_t>& drug_rows) {
  std::vector<Ranking> out;
  for (const auto& cell : cells) {
    const std::size_t ci = b.cell_index.at(cell);
    std::vector<std::size_t> crow(drug_rows.size(), ci);
    const FeatureSet fs = concat_features(rep.drugs, drug_rows, rep.cells, crow);
    const VectorXd s = predict_scores(model, fs.x);
    std::vector<std::pair<std::string, double>> scores;
    for (std::size_t i = 0; i < drug_rows.size(); ++i)
      scores.emplace_back(b.drugs[drug_rows[i]].drug_id, s(static_cast<Eigen::Index>(i)));
    out.push_back(rank_drugs(cell, std::move(scores)));
  }
  return out;
}

struct AnalyzeOptions {
  std::string rankings;           // precomputed rankings.csv instead of model scoring
  std::string baseline_rankings;  // fda-priority comparison
  int n_tests = 1;
  std::string drug;
  std::string cancer;
  double rho = 0.35;
  double p = 0.1;
  std::string role = "cell";  // expressiveness / tsne
  std::string repr = "embed";  // tsne: raw | embed | ae
  std::optional<std::size_t> min_group_size;
  double perplexity = 30.0;
  int iters = 1000;
  std::size_t sample_rows = 5000;  // permutation importance
};

inline std::vector<Ranking> rankings_for(const Bundle& b, const RunConfig& cfg, const Workspace& ws,
                                         const AnalyzeOptions& opt, const std::vector<std::string>& cells,
                                         const std::vector<std::size_t>& drug_rows, const std::string& file) {
  if (!file.empty()) {
    std::set<std::string> allowed;
    for (auto r : drug_rows) allowed.insert(b.drugs[r].drug_id);
    std::vector<Ranking> out;
    for (auto& r : read_rankings_csv(file)) {
      std::vector<std::pair<std::string, double>> kept;
      for (auto& e : r.entries)
        if (allowed.count(e.first)) kept.push_back(e);
      if (!kept.empty()) out.push_back(rank_drugs(r.cell_id, std::move(kept)));
    }
    return out;
  }
  (void)opt;
  const Variant& v = cfg.variants.front();
  const Representations rep = build_representations(b, v, ws);
  return score_all(b, rep, load_model(ws, v), cells, drug_rows);
}

inline void analyze_fda(const RunConfig& cfg, const Workspace& ws, const AnalyzeOptions& opt) {
  const Bundle b = load_bundle(ws);
  std::vector<std::size_t> candidates;
  std::map<std::string, std::set<std::string>> indications;
  for (std::size_t i = 0; i < b.drugs.size(); ++i)
    if (!b.drugs[i].indications.empty()) {
      candidates.push_back(i);
      indications[b.drugs[i].drug_id] = b.drugs[i].indications;
    }
  if (candidates.empty()) throw InputError("fda-priority: no drug has a reported indication");
  const auto train = training_cells(b.splits);
  std::vector<std::string> cells;
  for (const auto& c : b.cells)
    if (!train.count(c.cell_id)) cells.push_back(c.cell_id);
  const auto cancer_of = b.cancer_of();
  auto report_for = [&](const std::string& file) {
    auto rk = rankings_for(b, cfg, ws, opt, cells, candidates, file);
    std::vector<Ranking> known;
    for (auto& r : rk) {
      if (!cancer_of.count(r.cell_id)) throw InputError("fda-priority: rankings name unknown cell " + r.cell_id);
      known.push_back(std::move(r));
    }
    return fda_priority_analysis(known, indications, cancer_of);
  };
  const PriorityReport rep = report_for(opt.rankings);
  const fs::path dir = ws.analysis("fda-priority");
  fs::create_directories(dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : rep.cells)
    rows.push_back({c.cell_id, c.cancer, std::to_string(c.approved_ranks.size()), csv::format_number(c.mean_rank),
                    std::to_string(c.best_rank), c.top_drug});
  csv::write((dir / "fda_cells.csv").string(), {"cell_id", "cancer", "approved_drugs", "mean_rank", "best_rank", "top_drug"},
             rows);
  rows.clear();
  for (const auto& c : rep.cancers)
    rows.push_back({c.cancer, std::to_string(c.n_cells), std::to_string(c.n_approved), csv::format_number(c.mean_rank),
                    csv::format_number(c.best_rank), c.modal_top_drug, csv::format_number(c.modal_percent),
                    csv::format_number(c.top_drug_rank_std)});
  csv::write((dir / "fda_cancers.csv").string(),
             {"cancer", "cell_count", "drug_count", "mean_priority", "max_priority", "top_drug", "top_drug_percent",
              "top_drug_rank_std"},
             rows);
  json extra = {{"notes", rep.notes}};
  if (!opt.baseline_rankings.empty()) {
    const PriorityReport base = report_for(opt.baseline_rankings);
    rows.clear();
    for (const auto& c : compare_priority(rep, base, opt.n_tests))
      for (const auto& [name, t] : {std::pair{"mean_priority", c.mean_rank}, std::pair{"max_priority", c.best_rank}})
        rows.push_back({c.cancer, name, csv::format_number(t.mean_a), csv::format_number(t.mean_b),
                        csv::format_number(t.t_stat), std::to_string(t.df), csv::format_number(t.p),
                        csv::format_number(t.p_adjusted), stars(t.p_adjusted)});
    csv::write((dir / "fda_comparison.csv").string(),
               {"cancer", "metric", "mean_model", "mean_baseline", "t", "df", "p", "p_adj", "stars"}, rows);
  }
  write_manifest(dir, "analyze fda-priority", cfg, extra);
}

inline void analyze_gene_correlation(const RunConfig& cfg, const Workspace& ws, const AnalyzeOptions& opt) {
  const Bundle b = load_bundle(ws);
  if (opt.drug.empty() || opt.cancer.empty()) throw InputError("gene-correlation needs --drug and --cancer");
  std::optional<std::size_t> target;
  for (std::size_t i = 0; i < b.drugs.size(); ++i)
    if (b.drugs[i].drug_id == opt.drug || b.drugs[i].name == opt.drug) target = i;
  if (!target) throw InputError("gene-correlation: unknown drug " + opt.drug);
  std::vector<std::string> cells;
  for (const auto& c : b.cells)
    if (c.cancer_type == opt.cancer) cells.push_back(c.cell_id);
  if (cells.size() < 3) throw InputError("gene-correlation: fewer than 3 cell lines of cancer " + opt.cancer);
  std::vector<std::size_t> all(b.drugs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto rk = rankings_for(b, cfg, ws, opt, cells, all, opt.rankings);
  std::vector<double> priority;
  std::vector<std::vector<double>> expr;
  for (const auto& r : rk) {
    if (!b.cell_index.count(r.cell_id) || b.cell(r.cell_id).cancer_type != opt.cancer) continue;
    auto pos = r.rank_of(b.drugs[*target].drug_id);
    if (!pos) continue;
    priority.push_back(static_cast<double>(*pos));
    expr.push_back(b.cell(r.cell_id).expression);
  }
  if (priority.size() < 3) throw InputError("gene-correlation: fewer than 3 ranked cell lines for the drug");
  const auto genes = priority_correlation_screen(priority, b.panel.genes, expr, opt.rho, opt.p);
  const fs::path dir = ws.analysis("gene-correlation");
  fs::create_directories(dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto& g : genes) rows.push_back({g.gene, csv::format_number(g.rho), csv::format_number(g.p)});
  csv::write((dir / "gene_correlation.csv").string(), {"gene", "rho", "p"}, rows);
  write_manifest(dir, "analyze gene-correlation", cfg,
                 {{"drug", b.drugs[*target].drug_id}, {"cancer", opt.cancer}, {"n_cells", priority.size()},
                  {"rho_min", opt.rho}, {"p_max", opt.p}});
}

struct NamedEmbedding {
  std::string name;
  EmbeddingSet set;
};

/// Raw and embedded views of cells (groups = cancer) or drugs (groups = MOA).
inline std::vector<NamedEmbedding> embedding_views(const Bundle& b, const Workspace& ws, const std::string& role,
                                                   std::size_t min_group, const std::string& required = {}) {
  std::vector<NamedEmbedding> out;
  EmbeddingSet base;
  MatrixXd raw;
  std::string raw_name;
  if (role == "cell") {
    std::vector<CellLineRecord> cells;
    for (const auto& c : b.cells) cells.push_back(c);
    raw = expression_matrix(cells);
    for (const auto& c : cells) {
      base.item_ids.push_back(c.cell_id);
      base.groups.push_back(c.cancer_type);
    }
    raw_name = "g";
  } else if (role == "drug") {
    std::vector<DrugRecord> drugs;
    for (const auto& d : b.drugs)
      if (d.moa && !d.moa->empty()) drugs.push_back(d);
    raw = fingerprint_matrix(drugs);
    for (const auto& d : drugs) {
      base.item_ids.push_back(d.drug_id);
      base.groups.push_back(*d.moa);
    }
    raw_name = "f";
  } else {
    throw InputError("--role must be cell or drug");
  }
  auto add = [&](const std::string& name, MatrixXd m) {
    EmbeddingSet s = base;
    s.vectors = std::move(m);
    out.push_back({name, filter_min_group_size(s, min_group)});
  };
  add(raw_name, raw);
  auto try_encoder = [&](const std::string& enc_role, const std::string& name) {
    if (!fs::exists(encoder_path(ws, enc_role))) {
      if (enc_role == required) load_encoder(ws, enc_role);  // throws with a hint
      return;
    }
    add(name, embed(load_encoder(ws, enc_role), raw));
  };
  if (role == "cell") {
    try_encoder("cell", "e_c");
    try_encoder("autoencoder", "e_ae");
  } else {
    try_encoder("drug", "e_d");
  }
  return out;
}

inline void analyze_expressiveness(const RunConfig& cfg, const Workspace& ws, const AnalyzeOptions& opt) {
  const Bundle b = load_bundle(ws);
  json report = json::object();
  const std::vector<std::string> roles = opt.role == "both" ? std::vector<std::string>{"cell", "drug"}
                                                              : std::vector<std::string>{opt.role};
  for (const auto& role : roles) {
    const std::size_t min_group = opt.min_group_size.value_or(role == "cell" ? 15 : 10);
    const auto views = embedding_views(b, ws, role, min_group);
    json jr;
    jr["min_group_size"] = min_group;
    std::vector<SeparabilityReport> seps;
    for (const auto& v : views) {
      if (v.set.size() == 0) throw InputError("expressiveness: no " + role + " group has at least " +
                                              std::to_string(min_group) + " members");
      std::vector<std::string> zero;
      const EmbeddingSet nonzero = drop_zero_vectors(v.set, &zero);
      const auto sim = group_similarities(nonzero);
      seps.push_back(separability(sim));
      jr["representations"][v.name] = similarity_json(sim, seps.back());
      if (!zero.empty()) jr["representations"][v.name]["zero_vectors_dropped"] = zero;
    }
    jr["comparisons"] = json::array();
    // every embedding against the raw input, and e_c against e_ae
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 1; i < views.size(); ++i) pairs.emplace_back(i, 0);
    for (std::size_t i = 1; i < views.size(); ++i)
      for (std::size_t k = 1; k < views.size(); ++k)
        if (views[i].name == "e_c" && views[k].name == "e_ae") pairs.emplace_back(i, k);
    const int n_tests = static_cast<int>(std::max<std::size_t>(1, pairs.size()));
    for (const auto& [i, k] : pairs) {
      if (seps[i].per_group.size() < 2 || seps[k].per_group.size() < 2) continue;
      const TTestResult t = compare_separability(seps[i], seps[k], n_tests);
      jr["comparisons"].push_back({{"a", views[i].name},
                                   {"b", views[k].name},
                                   {"mean_a", t.mean_a},
                                   {"mean_b", t.mean_b},
                                   {"t", t.t_stat},
                                   {"df", t.df},
                                   {"p", t.p},
                                   {"p_adj", t.p_adjusted},
                                   {"stars", stars(t.p_adjusted)},
                                   {"test", "pooled two-sample t-test on per-group separability ratios"}});
    }
    report[role] = jr;
  }
  const fs::path dir = ws.analysis("expressiveness");
  write_json(dir / "expressiveness.json", report);
  write_manifest(dir, "analyze expressiveness", cfg);
}

inline void analyze_tsne(const RunConfig& cfg, const Workspace& ws, const AnalyzeOptions& opt) {
  const Bundle b = load_bundle(ws);
  if (opt.role != "cell" && opt.role != "drug") throw InputError("tsne: --role must be cell or drug");
  const std::size_t min_group = opt.min_group_size.value_or(opt.role == "cell" ? 15 : 10);
  std::string wanted, required;
  if (opt.repr == "raw") {
    wanted = opt.role == "cell" ? "g" : "f";
  } else if (opt.repr == "embed") {
    wanted = opt.role == "cell" ? "e_c" : "e_d";
    required = opt.role;
  } else if (opt.repr == "ae" && opt.role == "cell") {
    wanted = "e_ae";
    required = "autoencoder";
  } else {
    throw InputError("tsne: --repr must be raw, embed or (cells only) ae");
  }
  const auto views = embedding_views(b, ws, opt.role, min_group, required);
  const auto it = std::find_if(views.begin(), views.end(), [&](const auto& v) { return v.name == wanted; });
  TsneConfig tc;
  tc.perplexity = opt.perplexity;
  tc.n_iters = opt.iters;
  tc.seed = derive_seed(cfg.seed, "tsne");
  const TsneResult r = tsne(it->set.vectors, tc);
  const fs::path dir = ws.analysis("tsne");
  fs::create_directories(dir);
  write_tsne_csv((dir / "tsne.csv").string(), it->set, r.coords);
  write_text(dir / "tsne.svg", scatter_svg(r.coords, it->set.groups, opt.role + " " + wanted));
  write_manifest(dir, "analyze tsne", cfg,
                 {{"representation", wanted}, {"min_group_size", min_group}, {"initial_kl", r.initial_kl},
                  {"final_kl", r.final_kl}, {"perplexity", opt.perplexity}, {"iterations", opt.iters}});
}

inline void analyze_feature_importance(const RunConfig& cfg, const Workspace& ws, const AnalyzeOptions& opt) {
  const Bundle b = load_bundle(ws);
  const Variant& v = cfg.variants.front();
  const Representations rep = build_representations(b, v, ws);
  const Classifier model = load_model(ws, v);
  PairRows rows = select_pairs(b, training_cells(b.splits));
  FeatureSet fs = features_for(rep, rows);
  FeatureImportance fi;
  if (std::holds_alternative<DnnModel>(model)) {
    std::vector<std::size_t> idx(rows.y.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opt.sample_rows) {
      Rng rng(derive_seed(cfg.seed, "importance-sample"));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.sample_rows);
      std::sort(idx.begin(), idx.end());
    }
    MatrixXd xs = gather_rows(fs.x, idx);
    std::vector<int> ys;
    for (auto i : idx) ys.push_back(rows.y[i]);
    fi = feature_importance(model, fs.source_mask, &xs, ys, derive_seed(cfg.seed, "importance"));
  } else {
    fi = feature_importance(model, fs.source_mask);
  }
  const fs::path dir = ws.analysis("feature-importance");
  fs::create_directories(dir);
  std::vector<std::vector<std::string>> out;
  for (Eigen::Index i = 0; i < fi.values.size(); ++i)
    out.push_back({std::to_string(i), fs.source_mask[static_cast<std::size_t>(i)] == FeatureSource::drug ? "drug" : "cell",
                   csv::format_number(fi.values(i))});
  csv::write((dir / "feature_importance.csv").string(), {"feature", "source", "importance"}, out);

  json summary = {{"variant", v.name()}, {"method", fi.method}, {"drug_mean", fi.drug_mean}, {"cell_mean", fi.cell_mean}};
  const fs::path cvm = ws.train_eval() / v.name() / "cv_models.json";
  if (v.classifier == ClassifierKind::lr && fs::exists(cvm)) {
    std::vector<LogisticModel> folds;
    for (const auto& j : read_json_file(cvm.string())) folds.push_back(j.get<LogisticModel>());
    if (folds.size() >= 2) {
      const auto st = coefficient_stability(folds);
      summary["coefficient_stability"] = {{"mean_abs_coef", st.mean_abs_coef}, {"mean_variance", st.mean_variance}};
    }
  }
  // Spread of each drug's score across held-out cell lines.
  std::set<std::string> held = b.splits.trained_on_test;
  held.insert(b.splits.novel_test.begin(), b.splits.novel_test.end());
  const PairRows test = select_pairs(b, held);
  if (!test.y.empty()) {
    const VectorXd s = predict_scores(model, features_for(rep, test).x);
    std::map<std::string, std::vector<double>> by_drug;
    for (std::size_t i = 0; i < test.label_index.size(); ++i)
      by_drug[b.labels[test.label_index[i]].drug_id].push_back(s(static_cast<Eigen::Index>(i)));
    summary["per_drug_score_variance"] = per_drug_score_variance(by_drug);
  }
  write_json(dir / "feature_importance.json", summary);
  write_manifest(dir, "analyze feature-importance", cfg);
}

}  // namespace cdr::pipeline

#endif  // CDR_PIPELINE_HPP
