#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "odpfl/gradcheck.hpp"
#include "odpfl/harness.hpp"
#include "odpfl/serialize.hpp"

using namespace odpfl;

namespace {

std::string flag_name(const std::string& key) {
  std::string flag = "--" + key;
  std::replace(flag.begin(), flag.end(), '.', '-');
  return flag;
}

// every config key mirrors a CLI flag; flags win over the config file
void attach_config_flags(CLI::App* cmd, std::vector<std::pair<std::string, std::string>>* overrides) {
  for (const auto& key : config_keys()) {
    cmd->add_option_function<std::string>(
        flag_name(key),
        [overrides, key](const std::string& value) { overrides->emplace_back(key, value); },
        "config key " + key);
  }
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config_file(config_path);
  for (const auto& [key, value] : overrides) config_set(cfg, key, value);
  return cfg;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::vector<int> parse_int_list_arg(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"on-demand personalized federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;

  auto* run = app.add_subcommand("run", "run one experiment and write a results directory");
  run->add_option("--config", config_path, "config file (key = value lines)");
  attach_config_flags(run, &overrides);

  auto* grid = app.add_subcommand("grid", "grid search scored on training-client validation accuracy");
  grid->add_option("--config", config_path, "config file with grid.<key> axes");
  attach_config_flags(grid, &overrides);

  auto* dp = app.add_subcommand("dp-sweep", "privacy-accuracy sweep over epsilon and dataset size");
  std::string eps_arg = "0.1,0.3,1.0";
  std::string sizes_arg = "100,300,1000,3000";
  double delta = 0.01;
  int repeats = 10;
  dp->add_option("--config", config_path, "config file (encoder forced into dp-certifiable mode)");
  dp->add_option("--epsilons", eps_arg, "comma list of epsilon values");
  dp->add_option("--sizes", sizes_arg, "comma list of novel subsample sizes");
  dp->add_option("--delta", delta, "privacy delta");
  dp->add_option("--repeats", repeats, "repeats per cell");
  attach_config_flags(dp, &overrides);

  auto* kl = app.add_subcommand("kl-analysis", "pool novel-client rows and rank-correlate kl vs accuracy");
  std::vector<std::string> metrics_paths;
  std::string kl_out = "kl_analysis.csv";
  kl->add_option("--metrics", metrics_paths, "metrics.csv files from runs")->required();
  kl->add_option("--out", kl_out, "output csv path");

  auto* corrupt = app.add_subcommand("corrupt-sweep", "evaluate novel clients under covariate corruption");
  std::string severities_arg = "0,0.25,0.5,1.0";
  std::string kind_arg = "rotation";
  corrupt->add_option("--config", config_path, "config file");
  corrupt->add_option("--severities", severities_arg, "comma list of severities");
  corrupt->add_option("--kind", kind_arg, "rotation or additive_noise");
  attach_config_flags(corrupt, &overrides);

  auto* embed = app.add_subcommand("export-embeddings", "train, then export per-client descriptors");
  embed->add_option("--config", config_path, "config file");
  attach_config_flags(embed, &overrides);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every differentiable op");
  int gradcheck_instances = 20;
  gradcheck->add_option("--instances", gradcheck_instances, "random instances per op");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentConfig cfg = resolve_config(config_path, overrides);
      RunResult result = run_experiment(cfg);
      std::cout << "results: " << result.dir << "\n"
                << "rounds_run: " << result.rounds_run << "\n"
                << "validation_accuracy: " << result.final_validation_accuracy << "\n"
                << "mean_novel_accuracy: " << result.mean_novel_accuracy << "\n";
      return 0;
    }
    if (grid->parsed()) {
      ExperimentConfig cfg = resolve_config(config_path, overrides);
      GridSearchResult result = hyperparameter_search(cfg);
      std::filesystem::create_directories(cfg.out_dir);
      save_grid_report_csv(result, cfg.out_dir + "/grid_report.csv");
      write_text_file(cfg.out_dir + "/best_config.txt", config_to_manifest(result.best_config));
      std::cout << "cells: " << result.cells.size() << "\n"
                << "best_cell: " << result.best_index << "\n"
                << "best_validation_accuracy: "
                << result.cells[static_cast<size_t>(result.best_index)].validation_accuracy << "\n"
                << "report: " << cfg.out_dir << "/grid_report.csv\n";
      return 0;
    }
    if (dp->parsed()) {
      ExperimentConfig cfg = resolve_config(config_path, overrides);
      cfg.unit_sphere = true;
      cfg.psi_kind = "identity_mean";
      cfg.pool_split = false;
      Federation fed = build_federation(cfg);
      auto clients = split_federation_clients(fed.train_clients, cfg.federation.train_fraction,
                                              derive_seed(cfg.seed, "train-validation"));
      TrainedMethod tm = train_method(cfg, clients);
      if (!tm.server) throw std::invalid_argument("dp-sweep needs an encoder-based method");
      Rng rng(derive_seed(cfg.seed, "dp-sweep"));
      auto rows = dp_accuracy_sweep(*tm.server, fed.novel_clients, parse_double_list(eps_arg), delta,
                                    parse_int_list_arg(sizes_arg), repeats, rng);
      std::filesystem::create_directories(cfg.out_dir);
      save_dp_sweep_csv(rows, cfg.out_dir + "/dp_sweep.csv");
      std::cout << "rows: " << rows.size() << "\nreport: " << cfg.out_dir << "/dp_sweep.csv\n";
      return 0;
    }
    if (kl->parsed()) {
      KlAnalysis analysis = kl_analysis(metrics_paths);
      save_kl_analysis_csv(analysis, kl_out);
      std::cout << "points: " << analysis.points.size() << "\n";
      if (analysis.spearman_correlation)
        std::cout << "spearman: " << *analysis.spearman_correlation << "\n";
      else
        std::cout << "spearman: skipped (fewer than 5 novel points)\n";
      std::cout << "table: " << kl_out << "\n";
      return 0;
    }
    if (corrupt->parsed()) {
      ExperimentConfig cfg = resolve_config(config_path, overrides);
      CorruptionKind kind;
      if (kind_arg == "rotation")
        kind = CorruptionKind::kRotation;
      else if (kind_arg == "additive_noise")
        kind = CorruptionKind::kAdditiveNoise;
      else
        throw std::invalid_argument("corrupt-sweep: kind must be rotation or additive_noise");
      auto rows = corrupt_sweep(cfg, parse_double_list(severities_arg), kind);
      std::filesystem::create_directories(cfg.out_dir);
      save_corrupt_sweep_csv(rows, cfg.out_dir + "/corrupt_sweep.csv");
      for (const auto& r : rows)
        std::cout << r.method << " severity " << r.severity << ": " << r.accuracy_mean << " +- "
                  << r.accuracy_sem << "\n";
      std::cout << "report: " << cfg.out_dir << "/corrupt_sweep.csv\n";
      return 0;
    }
    if (embed->parsed()) {
      ExperimentConfig cfg = resolve_config(config_path, overrides);
      Federation fed = build_federation(cfg);
      auto clients = split_federation_clients(fed.train_clients, cfg.federation.train_fraction,
                                              derive_seed(cfg.seed, "train-validation"));
      TrainedMethod tm = train_method(cfg, clients);
      if (!tm.server) throw std::invalid_argument("export-embeddings needs an encoder-based method");
      std::filesystem::create_directories(cfg.out_dir);
      export_embeddings(*tm.server, clients, cfg.out_dir + "/embeddings.csv");
      std::cout << "rows: " << clients.size() << "\nreport: " << cfg.out_dir << "/embeddings.csv\n";
      return 0;
    }
    if (gradcheck->parsed()) {
      return run_gradcheck(gradcheck_instances, std::cout) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
