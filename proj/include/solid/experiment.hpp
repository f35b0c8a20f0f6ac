// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "solid/eval.hpp"
#include "solid/training.hpp"

namespace solid {

/// Flat key=value configuration with section-prefixed keys
/// ("train.lr = 0.001"). Precedence: command line > file > defaults.
/// Every key read through a typed getter is recorded, so the emitted
/// manifest lists the fully resolved configuration.
class RunConfig {
 public:
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void set_kv(const std::string& assignment);  // "key=value"

  std::string get_str(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  uint64_t get_u64(const std::string& key, uint64_t def) const;

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  /// Everything set plus every default that was consulted.
  std::map<std::string, std::string> resolved() const;
  uint64_t hash() const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::map<std::string, std::string> accessed_;
};

/// Output root: $SOLID_OUT_ROOT when set, else the configured path as-is.
std::string resolve_out_dir(const RunConfig& cfg, const std::string& key = "out.dir",
                            const std::string& def = "runs/exp");

struct TrainArtifacts {
  std::string run_dir;
  PipelineResult pipeline;
  EvalReport report;
  std::shared_ptr<SolidModel> model;
  SemanticMap map;
  std::shared_ptr<Dataset> dataset;
};

std::string cmd_gen_synthetic(RunConfig& cfg);  // returns the dataset dir
std::string cmd_build_dataset(RunConfig& cfg);
TrainArtifacts cmd_train(RunConfig& cfg);
EvalReport cmd_eval(RunConfig& cfg, const std::string& run_dir, const std::string& out_dir);
std::string cmd_ablate(RunConfig& cfg, const std::string& axis);  // returns the table path
std::string cmd_grid(RunConfig& cfg, const std::vector<double>& lambdas,
                     const std::vector<double>& ts);
std::string cmd_stability(RunConfig& cfg, const std::vector<std::string>& run_dirs);

/// Reloads a finished run (model, map, dataset) for scoring.
TrainArtifacts load_run(const std::string& run_dir);

uint64_t dataset_checksum(const std::string& dir);

}  // namespace solid
