// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solid/data.hpp"
#include "solid/semantics.hpp"

namespace solid {

/// Pairwise AUC: P(score_pos > score_neg) + 0.5 * P(tie), computed via
/// average ranks. Throws DataError when only one class is present.
double auc(std::span<const double> scores, std::span<const double> labels);

struct UserScores {
  std::vector<double> scores;
  std::vector<double> labels;
};

/// Unweighted mean of per-user AUC over users with both classes present;
/// single-class users are skipped (and counted in skipped_out if given).
double uauc(std::span<const UserScores> users, int* skipped_out = nullptr);

/// 1-based rank of the positive with pessimistic tie handling: the
/// positive is placed after every candidate scoring >= its score.
int positive_rank(std::span<const double> scores, int positive_index);

/// Single-positive forms: ideal DCG is 1, so NDCG@k is 1/log2(rank+1)
/// within the cutoff and 0 beyond it.
double ndcg_at_k(int rank, int k);
double recall_at_k(int rank, int k);

struct PerUserEval {
  int user = 0;
  double auc = 0.0;
  int rank = 0;
};

struct VarianceSummary {
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  int users = 0;
};

struct EvalReport {
  double auc = 0.0;   // pooled over all candidates
  double uauc = 0.0;  // mean of per-user AUC
  std::map<int, double> ndcg;
  std::map<int, double> recall;
  std::vector<PerUserEval> per_user;
  std::optional<VarianceSummary> variance;
};

/// Aggregates scores laid out as contiguous groups of group_size, one
/// positive (first entry) per group.
EvalReport evaluate_groups(std::span<const Sample> samples, std::span<const double> scores,
                           int group_size, std::span<const int> ks);

VarianceSummary summarize_variances(std::vector<double> variances);

using GroupScorer = std::function<void(std::span<const Sample>, std::span<double>)>;

struct StabilityOptions {
  int perturbations = 4;
  uint64_t seed = 1;
  int user_cap = 0;  // 0: all users
  int threads = 0;
};

struct StabilityResult {
  VarianceSummary summary;
  std::vector<double> per_user_variance;
};

/// Appends one extra behavior at a time to each test user's sequence,
/// rescoring the candidate group after every perturbation, and reports the
/// per-user variance of the resulting AUCs. Perturbation items are the
/// user's interactions outside the current window when available,
/// otherwise random items drawn from the user's dominant semantic. The
/// scorer must be safe to call concurrently.
StabilityResult stability_variance(std::span<const Sample> test_samples, int group_size,
                                   const SplitDataset& split, const SemanticMap& map,
                                   const StabilityOptions& opt, const GroupScorer& scorer);

void write_report_json(const std::string& path, const EvalReport& report);
void write_report_tsv(const std::string& path, const EvalReport& report);
void write_variance_tsv(const std::string& path, std::span<const VarianceSummary> rows,
                        std::span<const std::string> row_names);

}  // namespace solid
