// cdr: batch driver for ingest / pretrain / train-eval / analyze.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cdr/pipeline.hpp"
#include "cdr/synthetic.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
  auto* opt = app->add_option("--config", c.config, "run config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "workspace directory (default: config \"workspace\")");
}

cdr::pipeline::RunConfig resolve(const Common& c, cdr::pipeline::Workspace& ws) {
  cdr::pipeline::RunConfig cfg = c.config.empty() ? cdr::pipeline::default_config() : cdr::pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  ws.root = c.out.empty() ? std::filesystem::path(cfg.workspace) : std::filesystem::path(c.out);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  namespace pl = cdr::pipeline;
  CLI::App app{"cdr: cell line drug response prioritization"};
  app.require_subcommand(1);

  Common ingest_c, pre_c, te_c, an_c, synth_c;
  auto* ingest = app.add_subcommand("ingest", "filter, score, label and split raw screening data");
  add_common(ingest, ingest_c);

  auto* pretrain = app.add_subcommand("pretrain", "train the drug and cell encoders");
  add_common(pretrain, pre_c);
  std::string role = "both";
  pretrain->add_option("--role", role, "drug | cell | both | ae")->check(CLI::IsMember({"drug", "cell", "both", "ae"}));

  auto* train_eval = app.add_subcommand("train-eval", "cross-validate and evaluate classifier variants");
  add_common(train_eval, te_c);
  std::vector<std::string> variants;
  pl::TrainEvalOptions te_opt;
  train_eval->add_option("--variant", variants, "e.g. e_d,e_c,rf (repeatable; overrides config)");
  train_eval->add_flag("--grid", te_opt.grid, "sweep the classifier hyperparameter grid");
  train_eval->add_flag("--grid-encoders", te_opt.grid_encoders, "sweep the encoder hyperparameter grid");
  train_eval->add_option("--grid-limit", te_opt.grid_limit, "evaluate only the first N grid points");

  auto* analyze = app.add_subcommand("analyze", "post-hoc analyses");
  analyze->require_subcommand(1);
  pl::AnalyzeOptions an;
  std::optional<std::size_t> min_group;
  std::string an_variant;
  auto add_an = [&](const char* name, const char* desc) {
    auto* s = analyze->add_subcommand(name, desc);
    add_common(s, an_c);
    s->add_option("--variant", an_variant, "model variant to analyze (default: first config variant)");
    s->add_option("--rankings", an.rankings, "use a rankings CSV instead of scoring with the trained model");
    return s;
  };
  auto* fda = add_an("fda-priority", "rank drugs with reported indications");
  fda->add_option("--baseline-rankings", an.baseline_rankings, "rankings CSV to compare against");
  fda->add_option("--n-tests", an.n_tests, "Bonferroni test count")->check(CLI::PositiveNumber);
  auto* gc = add_an("gene-correlation", "genes whose expression tracks a drug's priority");
  gc->add_option("--drug", an.drug)->required();
  gc->add_option("--cancer", an.cancer)->required();
  gc->add_option("--rho", an.rho, "minimum |rho| (exclusive)");
  gc->add_option("--p", an.p, "maximum p (exclusive)");
  auto* expr = add_an("expressiveness", "intra/inter group similarity of representations");
  expr->add_option("--role", an.role, "cell | drug | both")->check(CLI::IsMember({"cell", "drug", "both"}));
  expr->add_option("--min-group-size", min_group);
  auto* ts = add_an("tsne", "2-D t-SNE projection");
  ts->add_option("--role", an.role, "cell | drug")->check(CLI::IsMember({"cell", "drug"}));
  ts->add_option("--repr", an.repr, "raw | embed | ae")->check(CLI::IsMember({"raw", "embed", "ae"}));
  ts->add_option("--perplexity", an.perplexity)->check(CLI::PositiveNumber);
  ts->add_option("--iters", an.iters)->check(CLI::PositiveNumber);
  ts->add_option("--min-group-size", min_group);
  auto* fi = add_an("feature-importance", "drug vs cell feature contributions");
  fi->add_option("--sample-rows", an.sample_rows, "rows used for permutation importance")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "write a planted synthetic dataset and a run config");
  std::string synth_dir;
  cdr::SyntheticConfig sc;
  synth->add_option("dir", synth_dir, "output directory")->required();
  synth->add_option("--seed", sc.seed);
  synth->add_option("--genes", sc.n_genes);
  synth->add_option("--drugs-per-group", sc.drugs_per_group);
  synth->add_option("--cells-per-cancer", sc.cdr_cells_per_cancer);
  synth->add_option("--pretrain-cells-per-cancer", sc.pretrain_cells_per_cancer);
  synth->add_option("--small-cancer-cells", sc.small_cancer_cells);
  synth->add_option("--label-noise", sc.label_noise);
  synth->add_option("--gene-signal", sc.gene_signal, "sd of per-gene cancer offsets");
  bool clean = false;
  synth->add_flag("--clean", clean, "omit the injected data defects");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    pl::Workspace ws;
    if (*ingest) {
      const auto cfg = resolve(ingest_c, ws);
      const auto s = pl::cmd_ingest(cfg, ws);
      std::cout << "ingest: " << s.n_pairs << " pairs, " << s.n_drugs << " drugs, " << s.n_cells << " cell lines, "
                << s.n_pretrain_cells << " pretraining cell lines; threshold " << s.threshold.threshold << "\n";
      for (const auto& [rule, n] : s.drops) std::cout << "  dropped " << n << " pair rows: " << rule << "\n";
      if (s.rejected_rows) std::cout << "  rejected " << s.rejected_rows << " malformed rows\n";
    } else if (*pretrain) {
      const auto cfg = resolve(pre_c, ws);
      const auto out = pl::cmd_pretrain(cfg, ws, role);
      auto say = [](const char* name, const cdr::TrainReport& r) {
        std::cout << name << ": " << r.epochs_run << " epochs, best val loss " << r.best_val_loss
                  << (r.stopped_early ? " (stopped early)" : " (max epochs)") << "\n";
      };
      if (out.drug) say("drug encoder", out.drug->report);
      if (out.cell) say("cell encoder", out.cell->report);
      if (out.autoencoder) say("autoencoder", out.autoencoder->second);
    } else if (*train_eval) {
      auto cfg = resolve(te_c, ws);
      if (!variants.empty()) {
        cfg.variants.clear();
        for (const auto& v : variants) cfg.variants.push_back(pl::parse_variant(v));
      }
      for (const auto& r : pl::cmd_train_eval(cfg, ws, te_opt)) {
        const auto m = pl::cv_means(r);
        std::cout << r.variant.name() << ": cv P_cell@1 " << m.at("P_cell@1");
        if (auto it = r.trained_on.overall.find(1); it != r.trained_on.overall.end())
          std::cout << ", test P_cancer@1 " << it->second;
        std::cout << "\n";
      }
    } else if (*analyze) {
      auto cfg = resolve(an_c, ws);
      if (!an_variant.empty()) cfg.variants = {pl::parse_variant(an_variant)};
      an.min_group_size = min_group;
      if (*fda) pl::analyze_fda(cfg, ws, an);
      else if (*gc) pl::analyze_gene_correlation(cfg, ws, an);
      else if (*expr) pl::analyze_expressiveness(cfg, ws, an);
      else if (*ts) pl::analyze_tsne(cfg, ws, an);
      else if (*fi) pl::analyze_feature_importance(cfg, ws, an);
    } else if (*synth) {
      sc.include_defects = !clean;
      const auto ds = cdr::make_synthetic(sc);
      const auto paths = cdr::write_synthetic(synth_dir, ds);
      const auto run = pl::synthetic_run_json(paths, sc.seed);
      pl::write_json(std::filesystem::path(synth_dir) / "run.json", run);
      std::cout << "wrote " << synth_dir << "/run.json\n";
    }
  } catch (const cdr::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cdr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
