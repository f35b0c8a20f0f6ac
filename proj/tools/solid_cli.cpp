// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: dataset build, staged training, evaluation, module and
// modality ablations, the lambda x T grid, and stability analysis.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "solid/experiment.hpp"

namespace {

solid::RunConfig make_config(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
  solid::RunConfig cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const auto& kv : overrides) cfg.set_kv(kv);
  return cfg;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SOLID experiment runner"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--set", overrides, "override, e.g. --set train.lr=0.01");

  auto* cmd_build = app.add_subcommand("build-data", "build a dataset from an interaction log");
  auto* cmd_synth = app.add_subcommand("gen-synthetic", "generate a planted synthetic dataset");
  auto* cmd_train = app.add_subcommand("train", "run the training pipeline");
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a finished run on the test split");
  std::string eval_run, eval_out;
  cmd_eval->add_option("--run", eval_run, "run directory")->required();
  cmd_eval->add_option("--out", eval_out, "output directory (defaults to the run directory)");
  auto* cmd_ablate = app.add_subcommand("ablate", "module or modality ablation table");
  std::string ablate_axis = "modules";
  cmd_ablate->add_option("--axis", ablate_axis, "modules|modalities");
  auto* cmd_grid = app.add_subcommand("grid", "lambda x T grid search");
  std::string grid_lambdas = "0.01,0.1,1", grid_ts = "0.001,0.01,0.1";
  cmd_grid->add_option("--lambdas", grid_lambdas, "comma-separated lambda values");
  cmd_grid->add_option("--ts", grid_ts, "comma-separated clip thresholds");
  auto* cmd_stab = app.add_subcommand("stability", "per-user variance under perturbations");
  std::vector<std::string> stab_runs;
  cmd_stab->add_option("--run", stab_runs, "run directories to compare")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    solid::RunConfig cfg = make_config(config_path, overrides);
    if (cmd_build->parsed()) {
      std::cout << solid::cmd_build_dataset(cfg) << "\n";
    } else if (cmd_synth->parsed()) {
      std::cout << solid::cmd_gen_synthetic(cfg) << "\n";
    } else if (cmd_train->parsed()) {
      const auto art = solid::cmd_train(cfg);
      std::cout << art.run_dir << "\n";
      std::cout << "test auc " << art.report.auc << " uauc " << art.report.uauc << "\n";
    } else if (cmd_eval->parsed()) {
      const auto rep =
          solid::cmd_eval(cfg, eval_run, eval_out.empty() ? eval_run : eval_out);
      std::cout << "auc " << rep.auc << " uauc " << rep.uauc << "\n";
    } else if (cmd_ablate->parsed()) {
      std::cout << solid::cmd_ablate(cfg, ablate_axis) << "\n";
    } else if (cmd_grid->parsed()) {
      std::cout << solid::cmd_grid(cfg, parse_doubles(grid_lambdas), parse_doubles(grid_ts))
                << "\n";
    } else if (cmd_stab->parsed()) {
      std::cout << solid::cmd_stability(cfg, stab_runs) << "\n";
    }
  } catch (const solid::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const solid::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const solid::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
