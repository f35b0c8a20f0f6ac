// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "solid/backbone.hpp"
#include "solid/codebook.hpp"
#include "solid/data.hpp"
#include "solid/hypernet.hpp"
#include "solid/semantics.hpp"

namespace solid {

/// How the dynamic block's weights are produced in the forward pass.
enum class ForwardMode {
  Sr,                   // static weights only
  ItemDsr,              // theta_d = M_v(E_v(s_v))
  SemDsr,               // theta_d = M_c(E_c(s_c)), backbone consumes s_c
  TrunkBranch,          // theta_d = M_c(E_c(s_c)) + clip(M_v(E_v(s_v)))
  TrunkBranchCodebook,  // branch input quantized through the codebook
  ItemCodebook,         // item-only generation over quantized rows
};

enum class StageKind { Sr, Dsr, Spg, Sml, Scl };

StageKind stage_of_mode(ForwardMode m);
std::string stage_name(StageKind s);
ForwardMode mode_of_flags(bool spg, bool sml, bool scl);

struct ModelConfig {
  BackboneConfig backbone;
  GeneratorConfig gen;
  uint64_t init_seed = 1;
};

/// The primary model plus both generators and the codebook slot, all in
/// one named parameter store so staged training can warm-start.
class SolidModel {
 public:
  explicit SolidModel(const ModelConfig& cfg);

  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }

  bool codebook_ready() const { return codebook_ready_; }
  void install_codebook(const SemanticCodebook& cb);
  SemanticCodebook codebook() const;
  /// Codebook fallback when no metacode exists: n_codes distinct rows of
  /// the item generator's embedding table, chosen by seed.
  void init_codebook_from_item_rows(uint64_t seed);

  struct GroupNodes {
    std::vector<int> yhat;  // one per sample
    int bce = -1;
    int mse = -1;  // -1 when the mode has no commitment term
  };

  /// Builds one group of samples sharing (user, item_seq, sem_seq).
  /// Target-independent subgraphs are built once and shared across the
  /// group; values are identical to building each sample alone.
  GroupNodes build_group(Graph& g, Binder& b, std::span<const Sample> group, ForwardMode mode,
                         double clip_t, bool straight_through, double prob_eps = 1e-12) const;

  double predict(const Sample& s, ForwardMode mode, double clip_t) const;
  void score_group(std::span<const Sample> group, ForwardMode mode, double clip_t,
                   std::span<double> out) const;

 private:
  ModelConfig cfg_;
  ParamStore ps_;
  bool codebook_ready_ = false;
};

/// Scores samples laid out as contiguous groups of group_size.
void score_samples(const SolidModel& model, std::span<const Sample> samples, int group_size,
                   ForwardMode mode, double clip_t, std::vector<double>& out, int threads = 0);
void score_samples_serial(const SolidModel& model, std::span<const Sample> samples,
                          int group_size, ForwardMode mode, double clip_t,
                          std::vector<double>& out);

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 1024;
  int epochs = 30;
  int stage2_epochs = 0;  // 0: same as epochs
  double lambda = 0.1;
  double clip_t = 0.01;
  uint64_t seed = 7;
  int patience = 3;
  double min_rel_improve = 1e-4;
  int valid_users_cap = 0;  // 0: all validation groups
  int threads = 0;          // 0: all hardware threads
  int chunk_samples = 64;   // deterministic reduction granularity
  double prob_eps = 1e-12;
  bool straight_through = true;

  void validate() const;
};

/// Mean binary cross-entropy over probabilities clamped to [eps, 1-eps].
double ce_loss(std::span<const double> yhat, std::span<const double> y, double eps = 1e-12);

/// Stops once the relative improvement of the tracked metric stays below
/// min_rel_improve for `patience` consecutive epochs.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_rel_improve)
      : patience_(patience), min_rel_(min_rel_improve) {}
  /// Returns true when training should stop after this observation.
  bool observe(double metric);
  double best() const { return best_; }

 private:
  int patience_;
  double min_rel_;
  double best_ = -HUGE_VAL;
  int stale_ = 0;
  bool seen_ = false;
};

struct EpochLog {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double valid_auc = 0.0;
};

struct StageState {
  StageKind stage = StageKind::Sr;
  std::vector<double> epoch_losses;
  std::vector<double> valid_aucs;
  int epochs_run = 0;
  int best_epoch = -1;  // epoch whose weights the stage returned
  bool early_stopped = false;
};

/// Scratch buffers reused across batches; one per trainer.
struct BatchWorkspace {
  std::vector<GradStore> chunk_grads;
  std::vector<double> chunk_ce, chunk_mse;
};

struct BatchStats {
  double ce_sum = 0.0;
  double mse_sum = 0.0;
  int samples = 0;
};

/// Accumulates batch-mean gradients into `master` over the given groups.
/// Work is split into fixed-size chunks whose partial sums are combined in
/// chunk order, so results are bitwise identical for any thread count.
BatchStats batch_grad(const SolidModel& model, std::span<const Sample> all,
                      std::span<const int> group_ids, int group_size, ForwardMode mode,
                      const TrainConfig& tc, GradStore& master, BatchWorkspace& ws);

/// Plain reference: one pass over samples in order, no chunk structure.
BatchStats batch_grad_serial(const SolidModel& model, std::span<const Sample> all,
                             std::span<const int> group_ids, int group_size, ForwardMode mode,
                             const TrainConfig& tc, GradStore& master);

StageState train_stage(SolidModel& model, const Dataset& ds, ForwardMode mode, StageKind stage,
                       const TrainConfig& tc, std::vector<EpochLog>* log = nullptr);

StageState train_sr(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                    std::vector<EpochLog>* log = nullptr);
StageState train_dsr(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                     std::vector<EpochLog>* log = nullptr);
StageState train_semantic_to_param(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                                   std::vector<EpochLog>* log = nullptr);
StageState train_metacode(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                          std::vector<EpochLog>* log = nullptr);
StageState train_codebook(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                          std::vector<EpochLog>* log = nullptr);

struct PipelineOptions {
  bool spg = true;
  bool sml = true;
  bool scl = true;
  TrainConfig train;
};

struct PipelineResult {
  ForwardMode final_mode = ForwardMode::ItemDsr;
  StageKind final_stage = StageKind::Dsr;
  std::vector<StageState> stages;
  std::vector<EpochLog> log;
};

/// Lifts sequences through the semantic map, trains the configured stages
/// (two of them when codebook learning is on, with the codebook
/// initialized in between) and leaves the final weights in the model.
PipelineResult run_pipeline(SolidModel& model, Dataset& ds, const SemanticMap& map,
                            const PipelineOptions& opt,
                            const std::function<void(StageKind, const SolidModel&)>&
                                on_stage_end = {});

}  // namespace solid
