#ifndef CDR_CORE_DATA_HPP
#define CDR_CORE_DATA_HPP

#include <algorithm>
#include <array>
#include <bitset>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cdr/common.hpp"
#include "cdr/csv.hpp"
#include "cdr/scoring.hpp"

namespace cdr {

inline constexpr std::size_t kFingerprintBits = 256;
using Fingerprint = std::bitset<kFingerprintBits>;

struct DrugRecord {
  std::string drug_id;
  std::string name;
  Fingerprint fingerprint;
  std::set<std::string> gene_targets;
  std::optional<std::string> moa;
  bool withdrawn = false;
  std::set<std::string> indications;  // FDA-approved cancer types
};

struct CellLineRecord {
  std::string cell_id;
  std::string cancer_type;
  std::vector<double> expression;  // panel order
};

/// One curve-level screen outcome. Measurements are optional until the pair
/// passes filter_and_dedup_pairs.
struct RawPair {
  std::string drug_id;
  std::string cell_id;
  std::optional<double> auc;
  std::optional<double> lower_limit;
  std::optional<double> ic50;
  std::optional<double> r_squared;
  std::string screen_id;
  std::size_t line = 0;
};

struct PairRecord {
  std::string drug_id;
  std::string cell_id;
  double auc = 0.0;
  double lower_limit = 0.0;
  double ic50 = 0.0;
  double r_squared = 0.0;
  std::string screen_id;
  std::optional<double> ces;
  std::optional<int> label;
};

inline RawPair to_raw(const PairRecord& p) {
  return {p.drug_id, p.cell_id, p.auc, p.lower_limit, p.ic50, p.r_squared, p.screen_id, 0};
}

struct GenePanel {
  std::vector<std::string> genes;
};

/// Wide expression table as read from cells.csv. Rows whose expression
/// fields are all empty carry no vector (expression absent).
struct ExpressionTable {
  std::vector<std::string> genes;
  std::vector<std::string> cell_ids;
  std::vector<std::string> cancer_types;
  std::vector<std::optional<std::vector<double>>> rows;
};

struct Diagnostic {
  std::string file;
  std::size_t line = 0;
  std::string message;
};

/// One dropped row and the single rule that dropped it.
struct AuditEntry {
  std::string rule;
  std::string table;  // "pairs", "drugs" or "cells"
  std::string key;
  std::size_t line = 0;
};

inline void to_json(nlohmann::json& j, const AuditEntry& a) {
  j = {{"rule", a.rule}, {"table", a.table}, {"key", a.key}, {"line", a.line}};
}

struct RawDataset {
  std::vector<RawPair> pairs;
  std::vector<DrugRecord> drugs;
  ExpressionTable expression;
  GenePanel panel;
  std::vector<Diagnostic> rejected;
};

struct DatasetPaths {
  std::string pairs;
  std::string drugs;
  std::string cells;
  std::string genes;
};

namespace detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(s[i])) ++i;
  return s.substr(i);
}

inline std::set<std::string> split_set(const std::string& field) {
  std::set<std::string> out;
  std::size_t start = 0;
  while (start <= field.size()) {
    std::size_t end = field.find(';', start);
    if (end == std::string::npos) end = field.size();
    std::string item = trim(field.substr(start, end - start));
    if (!item.empty()) out.insert(item);
    start = end + 1;
  }
  return out;
}

inline std::string join_set(const std::set<std::string>& s) {
  std::string out;
  for (const auto& x : s) {
    if (!out.empty()) out.push_back(';');
    out += x;
  }
  return out;
}

inline void require_header(const csv::Table& t, const std::vector<std::string>& expected,
                           const std::string& path) {
  if (t.header != expected) {
    throw InputError(path + ": header mismatch, expected \"" + csv::join(expected) +
                     "\", got \"" + csv::join(t.header) + "\"");
  }
}

}  // namespace detail

inline const std::vector<std::string>& pairs_header() {
  static const std::vector<std::string> h = {"drug_id", "cell_id",  "auc",      "lower_limit",
                                             "ic50",    "r_squared", "screen_id"};
  return h;
}

inline const std::vector<std::string>& drugs_header() {
  static const std::vector<std::string> h = {"drug_id", "name",      "fingerprint", "gene_targets",
                                             "moa",     "withdrawn", "indications"};
  return h;
}

inline std::vector<RawPair> parse_pairs(const std::string& path, std::vector<Diagnostic>& rejected) {
  csv::Table t = csv::read(path);
  detail::require_header(t, pairs_header(), path);
  std::vector<RawPair> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.lines[r];
    if (row.size() != 7) {
      rejected.push_back({path, line, "expected 7 fields, got " + std::to_string(row.size())});
      continue;
    }
    RawPair p;
    p.drug_id = detail::trim(row[0]);
    p.cell_id = detail::trim(row[1]);
    p.screen_id = detail::trim(row[6]);
    p.line = line;
    if (p.drug_id.empty() || p.cell_id.empty()) {
      rejected.push_back({path, line, "empty drug_id or cell_id"});
      continue;
    }
    std::array<std::optional<double>*, 4> slots = {&p.auc, &p.lower_limit, &p.ic50, &p.r_squared};
    bool ok = true;
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string field = detail::trim(row[2 + k]);
      if (field.empty()) continue;  // missing; dropped later by the filter
      auto v = csv::parse_number(field);
      if (!v) {
        rejected.push_back({path, line,
                            "non-numeric " + pairs_header()[2 + k] + " \"" + field + "\""});
        ok = false;
        break;
      }
      *slots[k] = *v;
    }
    if (ok) out.push_back(std::move(p));
  }
  return out;
}

inline std::optional<Fingerprint> parse_fingerprint(const std::string& s) {
  if (s.size() != kFingerprintBits) return std::nullopt;
  Fingerprint f;
  for (std::size_t i = 0; i < kFingerprintBits; ++i) {
    if (s[i] == '1')
      f.set(i);
    else if (s[i] != '0')
      return std::nullopt;
  }
  return f;
}

inline std::string fingerprint_string(const Fingerprint& f) {
  std::string s(kFingerprintBits, '0');
  for (std::size_t i = 0; i < kFingerprintBits; ++i)
    if (f.test(i)) s[i] = '1';
  return s;
}

inline std::vector<DrugRecord> parse_drugs(const std::string& path,
                                           std::vector<Diagnostic>& rejected) {
  csv::Table t = csv::read(path);
  detail::require_header(t, drugs_header(), path);
  std::vector<DrugRecord> out;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.lines[r];
    if (row.size() != 7) {
      rejected.push_back({path, line, "expected 7 fields, got " + std::to_string(row.size())});
      continue;
    }
    DrugRecord d;
    d.drug_id = detail::trim(row[0]);
    if (d.drug_id.empty()) {
      rejected.push_back({path, line, "empty drug_id"});
      continue;
    }
    if (!seen.insert(d.drug_id).second) {
      rejected.push_back({path, line, "duplicate drug_id " + d.drug_id});
      continue;
    }
    d.name = detail::trim(row[1]);
    auto fp = parse_fingerprint(detail::trim(row[2]));
    if (!fp) {
      rejected.push_back({path, line, "fingerprint must be 256 characters of 0/1"});
      continue;
    }
    d.fingerprint = *fp;
    d.gene_targets = detail::split_set(row[3]);
    std::string moa = detail::trim(row[4]);
    if (!moa.empty()) d.moa = moa;
    std::string w = detail::trim(row[5]);
    if (w == "1")
      d.withdrawn = true;
    else if (w != "0") {
      rejected.push_back({path, line, "withdrawn must be 0 or 1"});
      continue;
    }
    d.indications = detail::split_set(row[6]);
    out.push_back(std::move(d));
  }
  return out;
}

inline ExpressionTable parse_cells(const std::string& path, std::vector<Diagnostic>& rejected) {
  csv::Table t = csv::read(path);
  if (t.header.size() < 2 || t.header[0] != "cell_id" || t.header[1] != "cancer_type") {
    throw InputError(path + ": header must start with cell_id,cancer_type");
  }
  ExpressionTable table;
  table.genes.assign(t.header.begin() + 2, t.header.end());
  {
    std::unordered_set<std::string> uniq(table.genes.begin(), table.genes.end());
    if (uniq.size() != table.genes.size()) throw InputError(path + ": duplicate gene column");
  }
  std::unordered_set<std::string> seen;
  const std::size_t width = t.header.size();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.lines[r];
    if (row.size() != width) {
      rejected.push_back({path, line, "expected " + std::to_string(width) + " fields, got " +
                                          std::to_string(row.size())});
      continue;
    }
    std::string id = detail::trim(row[0]);
    if (id.empty() || !seen.insert(id).second) {
      rejected.push_back({path, line, id.empty() ? "empty cell_id" : "duplicate cell_id " + id});
      continue;
    }
    std::size_t n_empty = 0;
    for (std::size_t c = 2; c < width; ++c)
      if (detail::trim(row[c]).empty()) ++n_empty;
    std::optional<std::vector<double>> values;
    if (n_empty != width - 2 || width == 2) {
      if (n_empty > 0) {
        rejected.push_back({path, line, "partially missing expression"});
        continue;
      }
      std::vector<double> v(width - 2);
      bool ok = true;
      for (std::size_t c = 2; c < width && ok; ++c) {
        auto x = csv::parse_number(row[c]);
        if (!x) {
          rejected.push_back({path, line, "non-numeric expression for " + t.header[c]});
          ok = false;
        } else if (*x < 0.0) {
          rejected.push_back({path, line, "negative expression for " + t.header[c]});
          ok = false;
        } else {
          v[c - 2] = *x;
        }
      }
      if (!ok) continue;
      values = std::move(v);
    }
    table.cell_ids.push_back(std::move(id));
    table.cancer_types.push_back(detail::trim(row[1]));
    table.rows.push_back(std::move(values));
  }
  return table;
}

inline GenePanel read_gene_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  GenePanel panel;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    if (!seen.insert(line).second) throw InputError(path + ": duplicate gene " + line);
    panel.genes.push_back(line);
  }
  if (panel.genes.empty()) throw InputError(path + ": empty gene panel");
  return panel;
}

/// Loads the four input tables. Row-level problems become diagnostics in
/// `rejected`; missing files and header mismatches throw InputError. No
/// filtering or cross-referencing happens here.
inline RawDataset parse_dataset(const DatasetPaths& paths) {
  RawDataset raw;
  raw.panel = read_gene_panel(paths.genes);
  raw.pairs = parse_pairs(paths.pairs, raw.rejected);
  raw.drugs = parse_drugs(paths.drugs, raw.rejected);
  raw.expression = parse_cells(paths.cells, raw.rejected);
  return raw;
}

struct PairFilterResult {
  std::vector<PairRecord> pairs;  // sorted by (cell_id, drug_id)
  std::vector<AuditEntry> audit;
};

inline constexpr double kMinRSquared = 0.7;
inline constexpr const char* kPreferredScreen = "MTS010";

/// Drops pairs with missing or out-of-range measurements, poor curve fits,
/// unknown or withdrawn drugs, then resolves duplicate (drug, cell) pairs:
/// an MTS010 record wins, otherwise the highest R^2, ties broken by the
/// lexicographically smallest screen_id.
inline PairFilterResult filter_and_dedup_pairs(std::span<const RawPair> raw,
                                               std::span<const DrugRecord> drugs) {
  std::unordered_map<std::string, const DrugRecord*> by_id;
  for (const auto& d : drugs) by_id.emplace(d.drug_id, &d);

  PairFilterResult res;
  auto drop = [&](const RawPair& p, const char* rule) {
    res.audit.push_back({rule, "pairs", p.drug_id + "|" + p.cell_id, p.line});
  };

  std::map<std::pair<std::string, std::string>, std::vector<std::pair<PairRecord, std::size_t>>>
      groups;
  for (const auto& p : raw) {
    if (!p.auc || !p.lower_limit || !p.ic50 || !p.r_squared) {
      drop(p, "missing_measurement");
      continue;
    }
    if (*p.lower_limit < 0.0) {
      drop(p, "negative_lower_limit");
      continue;
    }
    if (!(*p.auc > 0.0) || !(*p.lower_limit > 0.0) || !(*p.ic50 > 0.0)) {
      drop(p, "nonpositive_measurement");
      continue;
    }
    if (*p.r_squared < kMinRSquared) {
      drop(p, "low_r_squared");
      continue;
    }
    auto it = by_id.find(p.drug_id);
    if (it == by_id.end()) {
      drop(p, "unknown_drug");
      continue;
    }
    if (it->second->withdrawn) {
      drop(p, "withdrawn_drug");
      continue;
    }
    PairRecord rec{p.drug_id, p.cell_id,   *p.auc, *p.lower_limit, *p.ic50,
                   *p.r_squared, p.screen_id, {},   {}};
    groups[{p.cell_id, p.drug_id}].emplace_back(std::move(rec), p.line);
  }

  auto better = [](const PairRecord& a, const PairRecord& b) {
    const bool am = a.screen_id == kPreferredScreen;
    const bool bm = b.screen_id == kPreferredScreen;
    if (am != bm) return am;
    if (a.r_squared != b.r_squared) return a.r_squared > b.r_squared;
    return a.screen_id < b.screen_id;
  };

  for (auto& [key, members] : groups) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < members.size(); ++i)
      if (better(members[i].first, members[best].first)) best = i;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i == best) continue;
      res.audit.push_back({"duplicate", "pairs", key.second + "|" + key.first, members[i].second});
    }
    res.pairs.push_back(std::move(members[best].first));
  }
  return res;
}

inline bool is_unknown_cancer(const std::string& cancer) {
  std::string lower;
  for (unsigned char c : cancer) lower.push_back(static_cast<char>(std::tolower(c)));
  return lower.empty() || lower == "unknown" || lower == "non-cancerous" || lower == "noncancerous";
}

struct ExpressionMatrix {
  std::vector<std::string> cell_ids;
  std::vector<std::string> cancer_types;
  std::vector<std::vector<double>> values;  // cells x panel, panel order
};

/// Projects the expression table onto the panel columns, in panel order.
/// Rows without expression are left out.
inline ExpressionMatrix select_genes(const ExpressionTable& table, const GenePanel& panel) {
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < table.genes.size(); ++i) col.emplace(table.genes[i], i);
  std::vector<std::size_t> idx;
  idx.reserve(panel.genes.size());
  for (const auto& g : panel.genes) {
    auto it = col.find(g);
    if (it == col.end()) throw InputError("gene " + g + " not found");
    idx.push_back(it->second);
  }
  ExpressionMatrix m;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (!table.rows[r]) continue;
    std::vector<double> v(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) v[k] = (*table.rows[r])[idx[k]];
    m.cell_ids.push_back(table.cell_ids[r]);
    m.cancer_types.push_back(table.cancer_types[r]);
    m.values.push_back(std::move(v));
  }
  return m;
}

inline std::vector<CellLineRecord> to_cell_records(const ExpressionMatrix& m) {
  std::vector<CellLineRecord> out;
  out.reserve(m.cell_ids.size());
  for (std::size_t i = 0; i < m.cell_ids.size(); ++i)
    out.push_back({m.cell_ids[i], m.cancer_types[i], m.values[i]});
  return out;
}

/// Assigns CES to every pair. Pairs must already have positive measurements.
inline void score_pairs(std::vector<PairRecord>& pairs, LogBase base = LogBase::e) {
  for (auto& p : pairs) p.ces = compute_ces(p.auc, p.lower_limit, p.ic50, base);
}

inline void label_pairs(std::vector<PairRecord>& pairs, const ThresholdSpec& spec) {
  for (auto& p : pairs) p.label = binarize(p.ces.value(), spec);
}

inline constexpr double kMinEffectiveFraction = 0.01;

struct CellFilterResult {
  std::vector<PairRecord> pairs;
  std::vector<CellLineRecord> cells;  // retained CDR cell lines, sorted by id
  std::vector<AuditEntry> audit;
};

/// Keeps cell lines with a known cancer type, an expression vector, and at
/// least 1% of screened drugs at CES >= `threshold` (exactly 1% passes).
/// Pairs of removed cell lines are dropped under the same rule. `cells`
/// lists every known cell line; an empty expression vector (or absence from
/// the list) means expression is unavailable.
inline CellFilterResult filter_cell_lines(std::span<const PairRecord> pairs,
                                          std::span<const CellLineRecord> cells,
                                          double threshold) {
  std::unordered_map<std::string, const CellLineRecord*> by_id;
  for (const auto& c : cells) by_id.emplace(c.cell_id, &c);

  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // screened, effective
  for (const auto& p : pairs) {
    auto& c = counts[p.cell_id];
    ++c.first;
    if (p.ces.value() >= threshold) ++c.second;
  }

  std::map<std::string, std::string> removed;  // cell -> rule
  CellFilterResult res;
  for (const auto& [cell, cnt] : counts) {
    auto it = by_id.find(cell);
    const char* rule = nullptr;
    if (it != by_id.end() && is_unknown_cancer(it->second->cancer_type))
      rule = "unknown_cancer";
    else if (it == by_id.end() || it->second->expression.empty())
      rule = "missing_expression";
    else if (100 * cnt.second < cnt.first)  // effective fraction < 1%
      rule = "few_effective";
    if (rule) {
      removed.emplace(cell, rule);
      res.audit.push_back({rule, "cells", cell, 0});
    } else {
      res.cells.push_back(*it->second);
    }
  }
  for (const auto& p : pairs) {
    auto it = removed.find(p.cell_id);
    if (it == removed.end())
      res.pairs.push_back(p);
    else
      res.audit.push_back({it->second, "pairs", p.drug_id + "|" + p.cell_id, 0});
  }
  return res;
}

/// Cell lines without CDR data used for encoder pretraining: known cancer
/// type, and the cancer has at least `min_cancer_size` lines with
/// expression data (counted over all lines, CDR ones included).
inline std::vector<CellLineRecord> select_pretraining_cells(
    std::span<const CellLineRecord> cells_with_expression,
    const std::unordered_set<std::string>& cdr_evaluated, std::size_t min_cancer_size = 10) {
  std::map<std::string, std::size_t> per_cancer;
  for (const auto& c : cells_with_expression) ++per_cancer[c.cancer_type];
  std::vector<CellLineRecord> out;
  for (const auto& c : cells_with_expression) {
    if (cdr_evaluated.count(c.cell_id)) continue;
    if (is_unknown_cancer(c.cancer_type)) continue;
    if (per_cancer[c.cancer_type] < min_cancer_size) continue;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.cell_id < b.cell_id; });
  return out;
}

// ---------------------------------------------------------------------------
// Splits

inline constexpr std::size_t kFolds = 5;

struct SplitOptions {
  std::size_t novel_min_cells = 15;  // cancers below this go entirely to novel_test
  std::size_t test_percent = 15;
  std::size_t n_folds = kFolds;
};

struct SplitPlan {
  std::set<std::string> novel_test;
  std::set<std::string> trained_on_test;
  std::vector<std::set<std::string>> folds;
  std::uint64_t seed = 0;
  std::vector<std::string> notes;

  /// Fold index of a training cell line, or -1.
  int fold_of(const std::string& cell) const {
    for (std::size_t f = 0; f < folds.size(); ++f)
      if (folds[f].count(cell)) return static_cast<int>(f);
    return -1;
  }
};

/// round(percent/100 * n), half rounded up, computed in integers.
inline std::size_t test_count(std::size_t n, std::size_t percent) {
  std::size_t k = (percent * n + 50) / 100;
  if (n >= 2 && k == 0) k = 1;
  return k;
}

/// Per cancer: a seeded shuffle, the first round(15%) lines to the
/// trained-on test set, the rest dealt round-robin into the folds.
/// Cancers with fewer than `novel_min_cells` lines go to novel_test whole.
inline SplitPlan make_splits(std::span<const CellLineRecord> cdr_cells, std::uint64_t seed,
                             const SplitOptions& opt = {}) {
  std::map<std::string, std::vector<std::string>> by_cancer;
  for (const auto& c : cdr_cells) by_cancer[c.cancer_type].push_back(c.cell_id);

  SplitPlan plan;
  plan.seed = seed;
  plan.folds.resize(opt.n_folds);
  for (auto& [cancer, ids] : by_cancer) {
    std::sort(ids.begin(), ids.end());
    if (ids.size() < opt.novel_min_cells) {
      plan.novel_test.insert(ids.begin(), ids.end());
      continue;
    }
    Rng rng(derive_seed(seed, cancer));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::size_t n_test = test_count(ids.size(), opt.test_percent);
    if (ids.size() == 1) {
      n_test = 0;
      plan.notes.push_back("cancer " + cancer + " has a single cell line; assigned to a fold");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i < n_test)
        plan.trained_on_test.insert(ids[i]);
      else
        plan.folds[(i - n_test) % opt.n_folds].insert(ids[i]);
    }
  }
  return plan;
}

inline void to_json(nlohmann::json& j, const SplitPlan& p) {
  j = nlohmann::json::object();
  j["seed"] = p.seed;
  j["novel_test"] = p.novel_test;
  j["trained_on_test"] = p.trained_on_test;
  j["folds"] = p.folds;
  j["notes"] = p.notes;
}

inline void from_json(const nlohmann::json& j, SplitPlan& p) {
  p.seed = j.at("seed").get<std::uint64_t>();
  p.novel_test = j.at("novel_test").get<std::set<std::string>>();
  p.trained_on_test = j.at("trained_on_test").get<std::set<std::string>>();
  p.folds = j.at("folds").get<std::vector<std::set<std::string>>>();
  p.notes = j.value("notes", std::vector<std::string>{});
}

// ---------------------------------------------------------------------------
// Writers (same schemas as the inputs, so outputs can be re-ingested)

inline void write_pairs_csv(const std::string& path, std::span<const PairRecord> pairs) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs)
    rows.push_back({p.drug_id, p.cell_id, csv::format_number(p.auc),
                    csv::format_number(p.lower_limit), csv::format_number(p.ic50),
                    csv::format_number(p.r_squared), p.screen_id});
  csv::write(path, pairs_header(), rows);
}

inline void write_drugs_csv(const std::string& path, std::span<const DrugRecord> drugs) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& d : drugs)
    rows.push_back({d.drug_id, d.name, fingerprint_string(d.fingerprint),
                    detail::join_set(d.gene_targets), d.moa.value_or(""), d.withdrawn ? "1" : "0",
                    detail::join_set(d.indications)});
  csv::write(path, drugs_header(), rows);
}

inline void write_cells_csv(const std::string& path, const GenePanel& panel,
                            std::span<const CellLineRecord> cells) {
  std::vector<std::string> header = {"cell_id", "cancer_type"};
  header.insert(header.end(), panel.genes.begin(), panel.genes.end());
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : cells) {
    std::vector<std::string> r = {c.cell_id, c.cancer_type};
    for (double v : c.expression) r.push_back(csv::format_number(v));
    rows.push_back(std::move(r));
  }
  csv::write(path, header, rows);
}

inline void write_gene_panel(const std::string& path, const GenePanel& panel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& g : panel.genes) out << g << '\n';
}

}  // namespace cdr

#endif  // CDR_CORE_DATA_HPP
