#ifndef CDR_SYNTHETIC_HPP
#define CDR_SYNTHETIC_HPP

// Planted-structure data generator used by the tests, the acceptance suite
// and `cdr synth`. Drug response is a function of (drug group, cancer type)
// plus label noise; drug fingerprints carry a group prototype and cell
// expression carries a weak per-gene cancer offset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cdr/common.hpp"
#include "cdr/core_data.hpp"
#include "cdr/csv.hpp"

namespace cdr {

struct SyntheticConfig {
  int n_drug_groups = 3;
  int drugs_per_group = 20;
  int n_cancers = 4;
  int cdr_cells_per_cancer = 20;
  int pretrain_cells_per_cancer = 30;
  int small_cancer_cells = 0;  // > 0 adds a cancer with this many CDR lines
  int n_genes = 60;
  int extra_genes = 4;  // columns in cells.csv that are not in the panel
  double gene_signal = 0.6;  // sd of per-gene cancer offsets (noise sd is 1)
  double label_noise = 0.05;
  double untargeted_fraction = 0.1;
  int prototype_bits = 40;
  double bit_flip = 0.2;
  double background_bits = 0.05;
  bool include_defects = true;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  std::vector<RawPair> pairs;
  std::vector<DrugRecord> drugs;
  ExpressionTable cells;
  GenePanel panel;
  std::map<std::string, int> drug_group;
  std::map<std::string, std::string> cell_cancer;
  std::vector<std::string> cancers;
  std::vector<int> active_group;  // per cancer: the drug group that works
};

inline const std::vector<std::string>& synthetic_cancer_names() {
  static const std::vector<std::string> names = {"Breast",   "Lung",     "Skin",   "Kidney",  "Bone",
                                                 "Ovary",    "Pancreas", "Liver",  "Gastric", "Bladder",
                                                 "Prostate", "Thyroid"};
  return names;
}

namespace detail {

inline std::string numbered(const std::string& prefix, int i, int width = 3) {
  std::string s = std::to_string(i);
  return prefix + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace detail

inline SyntheticDataset make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_drug_groups < 1 || cfg.drugs_per_group < 1 || cfg.n_cancers < 1 || cfg.n_genes < 1)
    throw InputError("synthetic: group, drug, cancer and gene counts must be positive");
  const int total_cancers = cfg.n_cancers + (cfg.small_cancer_cells > 0 ? 1 : 0);
  if (total_cancers > static_cast<int>(synthetic_cancer_names().size()))
    throw InputError("synthetic: at most " + std::to_string(synthetic_cancer_names().size()) + " cancers");

  SyntheticDataset ds;
  Rng rng(derive_seed(cfg.seed, "synthetic"));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int c = 0; c < total_cancers; ++c) {
    ds.cancers.push_back(synthetic_cancer_names()[static_cast<std::size_t>(c)]);
    ds.active_group.push_back(c % cfg.n_drug_groups);
  }

  // Drugs: each group has a fingerprint prototype, a core target and a MOA.
  std::vector<std::vector<int>> prototype(static_cast<std::size_t>(cfg.n_drug_groups));
  {
    std::vector<int> bits(kFingerprintBits);
    std::iota(bits.begin(), bits.end(), 0);
    std::shuffle(bits.begin(), bits.end(), rng);
    for (int g = 0; g < cfg.n_drug_groups; ++g)
      for (int b = 0; b < cfg.prototype_bits; ++b)
        prototype[static_cast<std::size_t>(g)].push_back(
            bits[static_cast<std::size_t>((g * cfg.prototype_bits + b) % static_cast<int>(kFingerprintBits))]);
  }
  int drug_no = 0;
  for (int g = 0; g < cfg.n_drug_groups; ++g) {
    for (int k = 0; k < cfg.drugs_per_group; ++k) {
      DrugRecord d;
      d.drug_id = detail::numbered("D", ++drug_no);
      d.name = "compound-" + std::to_string(drug_no);
      for (std::size_t b = 0; b < kFingerprintBits; ++b)
        if (unif(rng) < cfg.background_bits) d.fingerprint.set(b);
      for (int b : prototype[static_cast<std::size_t>(g)])
        d.fingerprint.set(static_cast<std::size_t>(b), unif(rng) >= cfg.bit_flip);
      if (unif(rng) >= cfg.untargeted_fraction) {
        d.gene_targets.insert("TGT" + std::to_string(g) + "_CORE");
        if (unif(rng) < 0.5) d.gene_targets.insert("TGT" + std::to_string(g) + "_" + std::to_string(k % 3));
      }
      d.moa = "MOA" + std::to_string(g);
      for (int c = 0; c < total_cancers; ++c) {
        const bool active = ds.active_group[static_cast<std::size_t>(c)] == g;
        if (unif(rng) < (active ? 0.3 : 0.05)) d.indications.insert(ds.cancers[static_cast<std::size_t>(c)]);
      }
      ds.drug_group[d.drug_id] = g;
      ds.drugs.push_back(std::move(d));
    }
  }
  // Every cancer gets at least one approved drug from its active group.
  for (int c = 0; c < total_cancers; ++c) {
    const std::string& name = ds.cancers[static_cast<std::size_t>(c)];
    bool any = false;
    for (const auto& d : ds.drugs) any |= d.indications.count(name) > 0;
    if (!any)
      ds.drugs[static_cast<std::size_t>(ds.active_group[static_cast<std::size_t>(c)] * cfg.drugs_per_group)]
          .indications.insert(name);
  }

  // Genes and cells.
  for (int i = 1; i <= cfg.n_genes; ++i) ds.panel.genes.push_back(detail::numbered("G", i));
  std::vector<std::string> columns = ds.panel.genes;
  for (int i = 1; i <= cfg.extra_genes; ++i)
    columns.insert(columns.begin() + static_cast<std::ptrdiff_t>((i * 7) % (columns.size() + 1)),
                   detail::numbered("X", i));
  ds.cells.genes = columns;
  std::vector<std::vector<double>> offset(static_cast<std::size_t>(total_cancers + 1),
                                          std::vector<double>(columns.size()));
  std::vector<double> base(columns.size());
  for (auto& b : base) b = 5.0 + unif(rng) * 3.0;
  for (auto& row : offset)
    for (auto& v : row) v = cfg.gene_signal * gauss(rng);

  int cell_no = 0;
  auto add_cell = [&](int cancer_idx, const std::string& cancer_name, bool with_expression) {
    const std::string id = detail::numbered("C", ++cell_no);
    ds.cells.cell_ids.push_back(id);
    ds.cells.cancer_types.push_back(cancer_name);
    if (with_expression) {
      std::vector<double> v(columns.size());
      for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = std::max(0.0, base[j] + offset[static_cast<std::size_t>(cancer_idx)][j] + gauss(rng));
      ds.cells.rows.emplace_back(std::move(v));
    } else {
      ds.cells.rows.emplace_back(std::nullopt);
    }
    ds.cell_cancer[id] = cancer_name;
    return id;
  };

  // Response measurements: (auc, lower limit, ic50) around an effective or
  // an ineffective profile, with small multiplicative jitter.
  auto jitter = [&](double v) { return v * std::exp(0.03 * gauss(rng)); };
  int screen_flip = 0;
  auto add_pair = [&](const std::string& drug, const std::string& cell, bool effective) {
    RawPair p;
    p.drug_id = drug;
    p.cell_id = cell;
    p.auc = jitter(effective ? 0.1 : 0.9);
    p.lower_limit = jitter(effective ? 0.005 : 0.5);
    p.ic50 = jitter(effective ? 0.0005 : 5.0);
    p.r_squared = 0.75 + 0.24 * unif(rng);
    p.screen_id = (++screen_flip % 10 == 0) ? "HTS002" : "MTS010";
    ds.pairs.push_back(p);
  };
  auto screen_cell = [&](const std::string& cell, int cancer_idx) {
    for (const auto& d : ds.drugs) {
      bool eff = ds.drug_group[d.drug_id] == ds.active_group[static_cast<std::size_t>(cancer_idx)];
      if (unif(rng) < cfg.label_noise) eff = !eff;
      add_pair(d.drug_id, cell, eff);
    }
  };

  for (int c = 0; c < total_cancers; ++c) {
    const int n_cdr = c < cfg.n_cancers ? cfg.cdr_cells_per_cancer : cfg.small_cancer_cells;
    const std::string& name = ds.cancers[static_cast<std::size_t>(c)];
    for (int k = 0; k < n_cdr; ++k) screen_cell(add_cell(c, name, true), c);
    if (c < cfg.n_cancers)
      for (int k = 0; k < cfg.pretrain_cells_per_cancer; ++k) add_cell(c, name, true);
  }

  if (cfg.include_defects) {
    // Unknown cancer types, a screened line without expression, a line with
    // no effective drugs, withdrawn drugs, duplicates and low-quality fits.
    for (int k = 0; k < 2; ++k) screen_cell(add_cell(total_cancers, "Unknown", true), 0);
    screen_cell(add_cell(0, ds.cancers[0], false), 0);
    {
      const std::string dead = add_cell(1 % total_cancers, ds.cancers[static_cast<std::size_t>(1 % total_cancers)], true);
      for (const auto& d : ds.drugs) add_pair(d.drug_id, dead, false);
    }
    for (int k = 0; k < 2; ++k) {
      DrugRecord d = ds.drugs[static_cast<std::size_t>(k)];
      d.drug_id = detail::numbered("W", k + 1);
      d.name = "withdrawn-" + std::to_string(k + 1);
      d.withdrawn = true;
      ds.drug_group[d.drug_id] = ds.drug_group[ds.drugs[static_cast<std::size_t>(k)].drug_id];
      ds.drugs.push_back(d);
      for (std::size_t c = 0; c < 5 && c < ds.cells.cell_ids.size(); ++c) add_pair(d.drug_id, ds.cells.cell_ids[c], true);
    }
    const std::size_t n = ds.pairs.size();
    for (std::size_t i = 0; i < n; i += 37) {
      RawPair dup = ds.pairs[i];
      dup.screen_id = dup.screen_id == "MTS010" ? "MTS005" : "MTS006";
      dup.r_squared = std::min(0.999, dup.r_squared.value() + 0.01);
      dup.auc = dup.auc.value() * 1.5;
      ds.pairs.push_back(dup);
    }
    for (std::size_t i = 5; i < n; i += 97) {
      RawPair bad = ds.pairs[i];
      bad.screen_id = "MTS004";
      switch ((i / 97) % 4) {
        case 0: bad.r_squared = 0.5; break;
        case 1: bad.ic50.reset(); break;
        case 2: bad.lower_limit = -0.1; break;
        default: bad.auc = 0.0; break;
      }
      // Keep the defect unique to its (drug, cell) by pointing it at a
      // drug/cell combination that is otherwise unscreened.
      bad.cell_id = "C999";
      bad.drug_id = ds.drugs[i % ds.drugs.size()].drug_id;
      ds.pairs.push_back(bad);
    }
  }
  return ds;
}

inline void write_raw_pairs_csv(const std::string& path, const std::vector<RawPair>& pairs) {
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string(); };
  std::vector<std::vector<std::string>> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs)
    rows.push_back({p.drug_id, p.cell_id, opt(p.auc), opt(p.lower_limit), opt(p.ic50), opt(p.r_squared), p.screen_id});
  csv::write(path, pairs_header(), rows);
}

inline void write_expression_csv(const std::string& path, const ExpressionTable& t) {
  std::vector<std::string> header = {"cell_id", "cancer_type"};
  header.insert(header.end(), t.genes.begin(), t.genes.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < t.cell_ids.size(); ++i) {
    std::vector<std::string> r = {t.cell_ids[i], t.cancer_types[i]};
    if (t.rows[i]) {
      for (double v : *t.rows[i]) r.push_back(csv::format_number(v));
    } else {
      r.resize(header.size());
    }
    rows.push_back(std::move(r));
  }
  csv::write(path, header, rows);
}

/// Writes pairs.csv, drugs.csv, cells.csv and genes.txt into `dir`.
inline DatasetPaths write_synthetic(const std::string& dir, const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir);
  DatasetPaths p{dir + "/pairs.csv", dir + "/drugs.csv", dir + "/cells.csv", dir + "/genes.txt"};
  write_raw_pairs_csv(p.pairs, ds.pairs);
  write_drugs_csv(p.drugs, ds.drugs);
  write_expression_csv(p.cells, ds.cells);
  write_gene_panel(p.genes, ds.panel);
  return p;
}

}  // namespace cdr

#endif  // CDR_SYNTHETIC_HPP
