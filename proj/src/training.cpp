// SPDX-License-Identifier: Apache-2.0
#include "solid/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "solid/parallel.hpp"

namespace solid {

StageKind stage_of_mode(ForwardMode m) {
  switch (m) {
    case ForwardMode::Sr: return StageKind::Sr;
    case ForwardMode::ItemDsr: return StageKind::Dsr;
    case ForwardMode::SemDsr: return StageKind::Spg;
    case ForwardMode::TrunkBranch: return StageKind::Sml;
    case ForwardMode::TrunkBranchCodebook:
    case ForwardMode::ItemCodebook: return StageKind::Scl;
  }
  return StageKind::Sr;
}

std::string stage_name(StageKind s) {
  switch (s) {
    case StageKind::Sr: return "sr";
    case StageKind::Dsr: return "dsr";
    case StageKind::Spg: return "spg";
    case StageKind::Sml: return "sml";
    case StageKind::Scl: return "scl";
  }
  return "?";
}

ForwardMode mode_of_flags(bool spg, bool sml, bool scl) {
  if (sml && !spg) throw ConfigError("sml requires spg");
  if (scl && spg && !sml) throw ConfigError("scl with spg requires sml");
  if (scl) return sml ? ForwardMode::TrunkBranchCodebook : ForwardMode::ItemCodebook;
  if (sml) return ForwardMode::TrunkBranch;
  if (spg) return ForwardMode::SemDsr;
  return ForwardMode::ItemDsr;
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (clip_t < 0.0) throw ConfigError("clip threshold must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (chunk_samples < 1) throw ConfigError("chunk_samples must be >= 1");
}

double ce_loss(std::span<const double> yhat, std::span<const double> y, double eps) {
  if (yhat.size() != y.size() || yhat.empty()) throw ConfigError("ce_loss: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < yhat.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw DataError("ce_loss: label " + std::to_string(y[i]) + " not in {0,1}");
    }
    double p = yhat[i];
    p = p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
    s += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  return s / static_cast<double>(yhat.size());
}

bool EarlyStopper::observe(double metric) {
  if (!seen_) {
    seen_ = true;
    best_ = metric;
    stale_ = 0;
    return false;
  }
  const double rel = (metric - best_) / std::max(std::fabs(best_), 1e-12);
  if (rel >= min_rel_) {
    stale_ = 0;
  } else {
    ++stale_;
  }
  if (metric > best_) best_ = metric;
  return stale_ >= patience_;
}

SolidModel::SolidModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.backbone.validate();
  cfg_.gen.validate();
  if (cfg_.backbone.n_semantics < 1) {
    throw ConfigError("model needs the semantic count (n_semantics)");
  }
  Rng rng(cfg_.init_seed);
  Backbone::create_params(ps_, cfg_.backbone, rng);
  const auto dyn = cfg_.backbone.resolved_dynamic_layers();
  create_generator_params(ps_, "mv", cfg_.gen, cfg_.backbone.n_items + 1,
                          cfg_.backbone.seq_len, dyn, rng);
  create_generator_params(ps_, "mc", cfg_.gen, cfg_.backbone.n_semantics,
                          cfg_.backbone.seq_len, dyn, rng);
  ps_.add("cb.D", cfg_.backbone.n_semantics, cfg_.gen.z_dim);
}

void SolidModel::install_codebook(const SemanticCodebook& cb) {
  Mat& d = ps_.value("cb.D");
  if (!d.same_shape(cb.D)) {
    throw ConfigError("codebook shape " + shape_str(cb.D) + " does not match model slot " +
                      shape_str(d));
  }
  d = cb.D;
  codebook_ready_ = true;
}

SemanticCodebook SolidModel::codebook() const {
  SemanticCodebook cb;
  cb.D = ps_.value("cb.D");
  return cb;
}

void SolidModel::init_codebook_from_item_rows(uint64_t seed) {
  const Mat& table = ps_.value("mv.emb");
  Mat& d = ps_.value("cb.D");
  Rng rng(seed);
  std::unordered_set<int> used;
  for (int c = 0; c < d.rows; ++c) {
    int row;
    do {
      row = 1 + rng.uniform_int(table.rows - 1);  // skip the pad row
    } while (used.count(row) && static_cast<int>(used.size()) < table.rows - 1);
    used.insert(row);
    std::copy_n(table.row(row), d.cols, d.row(c));
  }
  codebook_ready_ = true;
}

SolidModel::GroupNodes SolidModel::build_group(Graph& g, Binder& b,
                                               std::span<const Sample> group, ForwardMode mode,
                                               double clip_t, bool straight_through,
                                               double prob_eps) const {
  if (group.empty()) throw ConfigError("empty sample group");
  const Sample& head = group.front();
  const BackboneConfig& bc = cfg_.backbone;
  const GeneratorConfig& gc = cfg_.gen;
  const auto dyn = bc.resolved_dynamic_layers();

  const bool needs_item_gen = mode == ForwardMode::ItemDsr || mode == ForwardMode::TrunkBranch ||
                              mode == ForwardMode::TrunkBranchCodebook ||
                              mode == ForwardMode::ItemCodebook;
  const bool needs_sem_gen = mode == ForwardMode::SemDsr || mode == ForwardMode::TrunkBranch ||
                             mode == ForwardMode::TrunkBranchCodebook;
  const bool quantized =
      mode == ForwardMode::TrunkBranchCodebook || mode == ForwardMode::ItemCodebook;
  const bool use_sem_seq = mode == ForwardMode::SemDsr;
  const bool gen_per_sample = gc.encoder == EncoderKind::TargetAttention;
  const bool backbone_feat_per_sample = bc.encoder == EncoderKind::TargetAttention;

  if (quantized && !codebook_ready_) {
    throw ConfigError("codebook learning requires an initialized codebook");
  }
  if (needs_sem_gen) {
    for (const Sample& s : group) {
      if (s.sem_seq.empty() || s.target_sem == 0) {
        throw DataError("sample lacks a lifted semantic sequence");
      }
    }
  }

  std::vector<uint8_t> keep_v(head.item_seq.size());
  for (size_t i = 0; i < head.item_seq.size(); ++i) keep_v[i] = head.item_seq[i] != 0;
  std::vector<uint8_t> keep_c(head.sem_seq.size());
  for (size_t i = 0; i < head.sem_seq.size(); ++i) keep_c[i] = head.sem_seq[i] != 0;

  const int u_e = g.select_row(b.leaf(g, "bb.user_emb"), head.user);

  // Generator-side shared pieces.
  int mv_emb_node = -1, mv_branch_rows = -1, mse_node = -1;
  std::vector<int> mc_gather(head.sem_seq.size(), -1);
  if (needs_item_gen) {
    mv_emb_node = g.gather_rows(b.leaf(g, "mv.emb"), head.item_seq);
    if (quantized) {
      std::vector<int> idx;
      nearest_codes(g.val(mv_emb_node), ps_.value("cb.D"), keep_v, idx);
      const auto q =
          build_quantized_rows(g, mv_emb_node, b.leaf(g, "cb.D"), idx, straight_through);
      mv_branch_rows = q.branch_input;
      mse_node = g.masked_mse(mv_emb_node, q.raw, keep_v);
    } else {
      mv_branch_rows = mv_emb_node;
    }
  }
  int mc_emb_node = -1;
  if (needs_sem_gen) {
    for (size_t i = 0; i < head.sem_seq.size(); ++i) {
      mc_gather[i] = head.sem_seq[i] == 0 ? -1 : head.sem_seq[i] - 1;
    }
    mc_emb_node = g.gather_rows(b.leaf(g, "mc.emb"), mc_gather);
  }

  auto item_gen_theta = [&](int target_node) {
    const int feat =
        build_encoder(g, b, "mv.enc", gc.encoder, mv_branch_rows, keep_v, target_node, gc.z_dim);
    return build_generator_output(g, b, "mv", gc, feat, dyn);
  };
  auto sem_gen_theta = [&](int target_node) {
    const int feat =
        build_encoder(g, b, "mc.enc", gc.encoder, mc_emb_node, keep_c, target_node, gc.z_dim);
    return build_generator_output(g, b, "mc", gc, feat, dyn);
  };
  auto theta_for = [&](const Sample& s) -> std::vector<int> {
    int mv_target = -1, mc_target = -1;
    if (gen_per_sample) {
      if (needs_item_gen) mv_target = g.select_row(b.leaf(g, "mv.emb"), s.target_item);
      if (needs_sem_gen) mc_target = g.select_row(b.leaf(g, "mc.emb"), s.target_sem - 1);
    }
    switch (mode) {
      case ForwardMode::Sr: return {};
      case ForwardMode::ItemDsr:
      case ForwardMode::ItemCodebook: return item_gen_theta(mv_target);
      case ForwardMode::SemDsr: return sem_gen_theta(mc_target);
      case ForwardMode::TrunkBranch:
      case ForwardMode::TrunkBranchCodebook: {
        const auto trunk = sem_gen_theta(mc_target);
        const auto branch = item_gen_theta(mv_target);
        return fuse_nodes(g, trunk, branch, clip_t);
      }
    }
    return {};
  };

  std::vector<int> shared_theta;
  if (!gen_per_sample && mode != ForwardMode::Sr) shared_theta = theta_for(head);

  int shared_feat = -1;
  std::vector<uint8_t> bb_keep;
  const int bb_emb = Backbone::build_seq_embedding(
      g, b, bc, use_sem_seq ? head.sem_seq : head.item_seq, use_sem_seq, bb_keep);
  if (!backbone_feat_per_sample) {
    shared_feat = build_encoder(g, b, "bb.enc", bc.encoder, bb_emb, bb_keep, -1, bc.embed_dim);
  }

  GroupNodes out;
  out.mse = mse_node;
  std::vector<double> labels;
  std::vector<int> prob_nodes;
  for (const Sample& s : group) {
    const int v_e = g.select_row(b.leaf(g, "bb.item_emb"), s.target_item);
    const int feat =
        backbone_feat_per_sample
            ? build_encoder(g, b, "bb.enc", bc.encoder, bb_emb, bb_keep, v_e, bc.embed_dim)
            : shared_feat;
    const std::vector<int>& theta = gen_per_sample && mode != ForwardMode::Sr
                                        ? theta_for(s)
                                        : shared_theta;
    const int yhat = Backbone::build_prediction(g, b, bc, u_e, v_e, feat, theta);
    out.yhat.push_back(yhat);
    prob_nodes.push_back(yhat);
    labels.push_back(static_cast<double>(s.label));
  }
  const int probs = prob_nodes.size() == 1 ? prob_nodes[0] : g.concat_cols(prob_nodes);
  out.bce = g.bce_mean(probs, labels, prob_eps);
  return out;
}

double SolidModel::predict(const Sample& s, ForwardMode mode, double clip_t) const {
  Graph g;
  Binder b(ps_, nullptr);
  const Sample* one = &s;
  const auto nodes = build_group(g, b, std::span<const Sample>(one, 1), mode, clip_t, true);
  return g.val(nodes.yhat[0]).a[0];
}

void SolidModel::score_group(std::span<const Sample> group, ForwardMode mode, double clip_t,
                             std::span<double> out) const {
  Graph g;
  Binder b(ps_, nullptr);
  const auto nodes = build_group(g, b, group, mode, clip_t, true);
  for (size_t i = 0; i < group.size(); ++i) out[i] = g.val(nodes.yhat[i]).a[0];
}

void score_samples_serial(const SolidModel& model, std::span<const Sample> samples,
                          int group_size, ForwardMode mode, double clip_t,
                          std::vector<double>& out) {
  if (samples.size() % group_size != 0) throw ConfigError("samples not a whole number of groups");
  out.resize(samples.size());
  const int n_groups = static_cast<int>(samples.size()) / group_size;
  for (int gi = 0; gi < n_groups; ++gi) {
    model.score_group(samples.subspan(static_cast<size_t>(gi) * group_size, group_size), mode,
                      clip_t,
                      std::span<double>(out.data() + static_cast<size_t>(gi) * group_size,
                                        group_size));
  }
}

void score_samples(const SolidModel& model, std::span<const Sample> samples, int group_size,
                   ForwardMode mode, double clip_t, std::vector<double>& out, int threads) {
  if (samples.size() % group_size != 0) throw ConfigError("samples not a whole number of groups");
  out.resize(samples.size());
  const int n_groups = static_cast<int>(samples.size()) / group_size;
  par::for_n(n_groups, par::resolve_threads(threads), [&](int64_t gi) {
    model.score_group(samples.subspan(static_cast<size_t>(gi) * group_size, group_size), mode,
                      clip_t,
                      std::span<double>(out.data() + static_cast<size_t>(gi) * group_size,
                                        group_size));
  });
}

namespace {

struct GroupLossSums {
  double ce = 0.0;
  double mse = 0.0;
};

/// Builds, backpropagates and returns the loss sums for one group.
GroupLossSums run_group(const SolidModel& model, Graph& g, Binder& b,
                        std::span<const Sample> group, ForwardMode mode, const TrainConfig& tc,
                        int batch_samples) {
  g.reset();
  b.reset();
  const auto nodes =
      model.build_group(g, b, group, mode, tc.clip_t, tc.straight_through, tc.prob_eps);
  const double gsize = static_cast<double>(group.size());
  const double inv_b = 1.0 / static_cast<double>(batch_samples);
  g.backward(nodes.bce, gsize * inv_b);
  GroupLossSums sums;
  sums.ce = g.val(nodes.bce).a[0] * gsize;
  if (nodes.mse >= 0) {
    sums.mse = g.val(nodes.mse).a[0] * gsize;
    if (tc.lambda > 0.0) g.backward(nodes.mse, tc.lambda * gsize * inv_b);
  }
  return sums;
}

}  // namespace

BatchStats batch_grad(const SolidModel& model, std::span<const Sample> all,
                      std::span<const int> group_ids, int group_size, ForwardMode mode,
                      const TrainConfig& tc, GradStore& master, BatchWorkspace& ws) {
  const int n_groups = static_cast<int>(group_ids.size());
  const int batch_samples = n_groups * group_size;
  const int chunk_groups = std::max(1, tc.chunk_samples / group_size);
  const int n_chunks = (n_groups + chunk_groups - 1) / chunk_groups;

  ws.chunk_grads.resize(n_chunks);
  ws.chunk_ce.assign(n_chunks, 0.0);
  ws.chunk_mse.assign(n_chunks, 0.0);

  std::atomic<bool> diverged{false};
  par::for_n(n_chunks, par::resolve_threads(tc.threads), [&](int64_t ci) {
    GradStore& sink = ws.chunk_grads[ci];
    sink.match(model.params());
    sink.zero();
    Graph g;
    Binder b(model.params(), &sink);
    const int g0 = static_cast<int>(ci) * chunk_groups;
    const int g1 = std::min(n_groups, g0 + chunk_groups);
    for (int gi = g0; gi < g1; ++gi) {
      const auto group =
          all.subspan(static_cast<size_t>(group_ids[gi]) * group_size, group_size);
      const auto sums = run_group(model, g, b, group, mode, tc, batch_samples);
      if (!std::isfinite(sums.ce) || !std::isfinite(sums.mse)) diverged.store(true);
      ws.chunk_ce[ci] += sums.ce;
      ws.chunk_mse[ci] += sums.mse;
    }
  });
  if (diverged.load()) throw DivergenceError("non-finite loss in batch");

  BatchStats stats;
  stats.samples = batch_samples;
  for (int ci = 0; ci < n_chunks; ++ci) {
    master.add(ws.chunk_grads[ci]);
    stats.ce_sum += ws.chunk_ce[ci];
    stats.mse_sum += ws.chunk_mse[ci];
  }
  return stats;
}

BatchStats batch_grad_serial(const SolidModel& model, std::span<const Sample> all,
                             std::span<const int> group_ids, int group_size, ForwardMode mode,
                             const TrainConfig& tc, GradStore& master) {
  const int batch_samples = static_cast<int>(group_ids.size()) * group_size;
  Graph g;
  Binder b(model.params(), &master);
  BatchStats stats;
  stats.samples = batch_samples;
  for (int gid : group_ids) {
    const auto group = all.subspan(static_cast<size_t>(gid) * group_size, group_size);
    const auto sums = run_group(model, g, b, group, mode, tc, batch_samples);
    if (!std::isfinite(sums.ce) || !std::isfinite(sums.mse)) {
      throw DivergenceError("non-finite loss in batch");
    }
    stats.ce_sum += sums.ce;
    stats.mse_sum += sums.mse;
  }
  return stats;
}

namespace {

double validation_auc(const SolidModel& model, const Dataset& ds, ForwardMode mode,
                      const TrainConfig& tc);

}  // namespace

StageState train_stage(SolidModel& model, const Dataset& ds, ForwardMode mode, StageKind stage,
                       const TrainConfig& tc, std::vector<EpochLog>* log) {
  tc.validate();
  const int group_size = ds.manifest.k_train + 1;
  const auto& train = ds.split.train;
  if (train.empty()) throw DataError("empty training set");
  if (train.size() % group_size != 0) {
    throw DataError("training samples are not whole groups of " + std::to_string(group_size));
  }
  const int n_groups = static_cast<int>(train.size()) / group_size;
  const int groups_per_batch = std::max(1, tc.batch_size / group_size);
  const int epochs = stage == StageKind::Scl && tc.stage2_epochs > 0 ? tc.stage2_epochs
                                                                     : tc.epochs;

  StageState state;
  state.stage = stage;
  Adam adam;
  GradStore master;
  master.match(model.params());
  BatchWorkspace ws;
  EarlyStopper stopper(tc.patience, tc.min_rel_improve);
  Rng shuffle_root(Rng::splitmix(tc.seed ^ (0x57a6e000ull + static_cast<uint64_t>(stage))));

  std::vector<int> order(n_groups);
  for (int i = 0; i < n_groups; ++i) order[i] = i;

  // Weights of the best-validation epoch; the stage returns these, so the
  // stop rule hands the next stage (or evaluation) the converged model.
  // The incoming weights seed the candidate set, so a warm-started stage
  // can never end worse than it began.
  std::vector<Mat> best_weights;
  double best_vauc = validation_auc(model, ds, mode, tc);
  for (int p = 0; p < model.params().count(); ++p) {
    best_weights.push_back(model.params().value(p));
  }

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng erng = shuffle_root.fork(static_cast<uint64_t>(epoch));
    erng.shuffle(order);
    double ce_sum = 0.0, mse_sum = 0.0;
    long long seen = 0;
    for (int g0 = 0; g0 < n_groups; g0 += groups_per_batch) {
      const int g1 = std::min(n_groups, g0 + groups_per_batch);
      master.zero();
      const auto stats = batch_grad(model, train, std::span<const int>(order).subspan(g0, g1 - g0),
                                    group_size, mode, tc, master, ws);
      adam.step(model.params(), master, tc.lr);
      ce_sum += stats.ce_sum;
      mse_sum += stats.mse_sum;
      seen += stats.samples;
    }
    const double epoch_loss = (ce_sum + tc.lambda * mse_sum) / static_cast<double>(seen);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("stage " + stage_name(stage) + ": non-finite epoch loss");
    }
    const double vauc = validation_auc(model, ds, mode, tc);
    state.epoch_losses.push_back(epoch_loss);
    state.valid_aucs.push_back(vauc);
    state.epochs_run = epoch + 1;
    if (log) log->push_back({stage_name(stage), epoch, epoch_loss, vauc});
    if (vauc > best_vauc) {
      best_vauc = vauc;
      state.best_epoch = epoch;
      best_weights.clear();
      for (int p = 0; p < model.params().count(); ++p) {
        best_weights.push_back(model.params().value(p));
      }
    }
    if (stopper.observe(vauc)) {
      state.early_stopped = true;
      break;
    }
  }
  if (!best_weights.empty()) {
    for (int p = 0; p < model.params().count(); ++p) {
      model.params().value(p) = best_weights[p];
    }
  }
  return state;
}

namespace {

double validation_auc(const SolidModel& model, const Dataset& ds, ForwardMode mode,
                      const TrainConfig& tc) {
  const int group_size = ds.manifest.k_test + 1;
  const auto& valid = ds.split.valid;
  if (valid.empty()) return 0.5;
  size_t n_groups = valid.size() / group_size;
  if (tc.valid_users_cap > 0) n_groups = std::min<size_t>(n_groups, tc.valid_users_cap);
  const auto subset = std::span<const Sample>(valid.data(), n_groups * group_size);
  std::vector<double> scores;
  score_samples(model, subset, group_size, mode, tc.clip_t, scores, tc.threads);
  // Pooled AUC over the capped validation groups via average ranks.
  std::vector<int> idx(scores.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  long long n_pos = 0, n_neg = 0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t t = i; t < j; ++t) {
      if (subset[idx[t]].label == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

}  // namespace

StageState train_sr(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                    std::vector<EpochLog>* log) {
  return train_stage(model, ds, ForwardMode::Sr, StageKind::Sr, tc, log);
}

StageState train_dsr(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                     std::vector<EpochLog>* log) {
  return train_stage(model, ds, ForwardMode::ItemDsr, StageKind::Dsr, tc, log);
}

StageState train_semantic_to_param(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                                   std::vector<EpochLog>* log) {
  return train_stage(model, ds, ForwardMode::SemDsr, StageKind::Spg, tc, log);
}

StageState train_metacode(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                          std::vector<EpochLog>* log) {
  return train_stage(model, ds, ForwardMode::TrunkBranch, StageKind::Sml, tc, log);
}

StageState train_codebook(SolidModel& model, const Dataset& ds, const TrainConfig& tc,
                          std::vector<EpochLog>* log) {
  if (!model.codebook_ready()) {
    throw ConfigError("train_codebook requires an initialized codebook");
  }
  return train_stage(model, ds, ForwardMode::TrunkBranchCodebook, StageKind::Scl, tc, log);
}

PipelineResult run_pipeline(SolidModel& model, Dataset& ds, const SemanticMap& map,
                            const PipelineOptions& opt,
                            const std::function<void(StageKind, const SolidModel&)>&
                                on_stage_end) {
  PipelineResult result;
  result.final_mode = mode_of_flags(opt.spg, opt.sml, opt.scl);
  result.final_stage = stage_of_mode(result.final_mode);

  lift_dataset(ds.split.train, map);
  lift_dataset(ds.split.valid, map);
  lift_dataset(ds.split.test, map);

  if (!opt.scl) {
    const StageKind stage = result.final_stage;
    result.stages.push_back(train_stage(model, ds, result.final_mode, stage, opt.train,
                                        &result.log));
    if (on_stage_end) on_stage_end(stage, model);
    return result;
  }

  // Two loops: metacode (or the item-only counterpart) first, then the
  // codebook stage warm-started from it.
  const ForwardMode stage1_mode = opt.sml ? ForwardMode::TrunkBranch : ForwardMode::ItemDsr;
  const StageKind stage1_kind = stage_of_mode(stage1_mode);
  result.stages.push_back(
      train_stage(model, ds, stage1_mode, stage1_kind, opt.train, &result.log));
  if (on_stage_end) on_stage_end(stage1_kind, model);

  if (opt.sml) {
    model.install_codebook(init_from_metacode(extract_metacode(model.params(), "mc")));
  } else {
    model.init_codebook_from_item_rows(Rng::splitmix(opt.train.seed ^ 0xc0debull));
  }

  result.stages.push_back(
      train_stage(model, ds, result.final_mode, StageKind::Scl, opt.train, &result.log));
  if (on_stage_end) on_stage_end(StageKind::Scl, model);
  return result;
}

}  // namespace solid
