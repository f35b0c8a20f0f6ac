// SPDX-License-Identifier: Apache-2.0
#include "solid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "solid/parallel.hpp"
#include "solid/rng.hpp"

namespace solid {

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw DataError("auc: size mismatch or empty input");
  }
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  long long n_pos = 0, n_neg = 0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1.0) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: needs both classes");
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double uauc(std::span<const UserScores> users, int* skipped_out) {
  double sum = 0.0;
  int valid = 0, skipped = 0;
  for (const UserScores& u : users) {
    bool has_pos = false, has_neg = false;
    for (double l : u.labels) (l == 1.0 ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) {
      ++skipped;
      continue;
    }
    sum += auc(u.scores, u.labels);
    ++valid;
  }
  if (skipped_out) *skipped_out = skipped;
  if (valid == 0) throw DataError("uauc: no user has both classes");
  return sum / valid;
}

int positive_rank(std::span<const double> scores, int positive_index) {
  const double sp = scores[positive_index];
  int rank = 1;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (static_cast<int>(i) == positive_index) continue;
    if (scores[i] >= sp) ++rank;  // positive loses ties
  }
  return rank;
}

double ndcg_at_k(int rank, int k) {
  if (rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double recall_at_k(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

EvalReport evaluate_groups(std::span<const Sample> samples, std::span<const double> scores,
                           int group_size, std::span<const int> ks) {
  if (samples.size() != scores.size()) throw DataError("evaluate: score count mismatch");
  if (group_size < 2 || samples.size() % group_size != 0) {
    throw DataError("evaluate: samples are not whole groups");
  }
  const size_t n_groups = samples.size() / group_size;

  EvalReport rep;
  std::vector<double> pooled_labels(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) pooled_labels[i] = samples[i].label;
  rep.auc = auc(scores, pooled_labels);

  std::map<int, double> ndcg_sum, recall_sum;
  for (int k : ks) {
    ndcg_sum[k] = 0.0;
    recall_sum[k] = 0.0;
  }
  double uauc_sum = 0.0;
  for (size_t gi = 0; gi < n_groups; ++gi) {
    const auto gs = scores.subspan(gi * group_size, group_size);
    const auto gsam = samples.subspan(gi * group_size, group_size);
    int pos = -1;
    std::vector<double> glabels(group_size);
    for (int i = 0; i < group_size; ++i) {
      glabels[i] = gsam[i].label;
      if (gsam[i].label == 1) pos = i;
    }
    if (pos < 0) throw DataError("evaluate: group without a positive");
    const double a = auc(gs, glabels);
    const int rank = positive_rank(gs, pos);
    uauc_sum += a;
    for (int k : ks) {
      ndcg_sum[k] += ndcg_at_k(rank, k);
      recall_sum[k] += recall_at_k(rank, k);
    }
    rep.per_user.push_back({gsam[pos].user, a, rank});
  }
  rep.uauc = uauc_sum / static_cast<double>(n_groups);
  for (int k : ks) {
    rep.ndcg[k] = ndcg_sum[k] / static_cast<double>(n_groups);
    rep.recall[k] = recall_sum[k] / static_cast<double>(n_groups);
  }
  return rep;
}

VarianceSummary summarize_variances(std::vector<double> variances) {
  VarianceSummary s;
  s.users = static_cast<int>(variances.size());
  if (variances.empty()) return s;
  std::sort(variances.begin(), variances.end());
  const size_t n = variances.size();
  s.median = n % 2 == 1 ? variances[n / 2] : 0.5 * (variances[n / 2 - 1] + variances[n / 2]);
  s.min = variances.front();
  s.max = variances.back();
  double sum = 0.0;
  for (double v : variances) sum += v;
  s.mean = sum / static_cast<double>(n);
  return s;
}

StabilityResult stability_variance(std::span<const Sample> test_samples, int group_size,
                                   const SplitDataset& split, const SemanticMap& map,
                                   const StabilityOptions& opt, const GroupScorer& scorer) {
  if (test_samples.size() % group_size != 0) {
    throw DataError("stability: samples are not whole groups");
  }
  size_t n_groups = test_samples.size() / group_size;
  if (opt.user_cap > 0) n_groups = std::min<size_t>(n_groups, opt.user_cap);

  // Items grouped by semantic for the fallback perturbation source.
  std::vector<std::vector<int>> by_semantic(map.k + 1);
  for (size_t v = 0; v < map.assignment.size(); ++v) {
    by_semantic[map.assignment[v]].push_back(static_cast<int>(v));
  }

  std::vector<double> variances(n_groups, -1.0);
  par::for_n(static_cast<int64_t>(n_groups), par::resolve_threads(opt.threads), [&](int64_t gi) {
    const auto group = test_samples.subspan(static_cast<size_t>(gi) * group_size, group_size);
    const Sample& head = group.front();
    const auto& hist = split.histories[head.user];

    std::unordered_set<int> window;
    for (int id : head.item_seq) {
      if (id > 0) window.insert(id - 1);
    }
    std::vector<int> candidates;
    for (auto it = hist.rbegin(); it != hist.rend(); ++it) {
      if (!window.count(*it)) candidates.push_back(*it);
      if (static_cast<int>(candidates.size()) >= opt.perturbations) break;
    }
    if (static_cast<int>(candidates.size()) < opt.perturbations) {
      // Dominant semantic of the user's history; ties to the lowest id.
      std::vector<int> freq(map.k + 1, 0);
      for (int item : hist) ++freq[map.assignment[item]];
      int dom = 1;
      for (int c = 1; c <= map.k; ++c) {
        if (freq[c] > freq[dom]) dom = c;
      }
      Rng rng(Rng::splitmix(opt.seed ^ (0x5ab111ull + static_cast<uint64_t>(gi))));
      const auto& pool = by_semantic[dom];
      int guard = 0;
      while (static_cast<int>(candidates.size()) < opt.perturbations && !pool.empty() &&
             guard++ < 1000) {
        const int cand = pool[rng.uniform_int(static_cast<int>(pool.size()))];
        if (std::find(candidates.begin(), candidates.end(), cand) == candidates.end()) {
          candidates.push_back(cand);
        }
      }
    }
    if (candidates.empty()) return;  // skipped, logged by the caller via users count

    std::vector<double> aucs;
    std::vector<Sample> perturbed(group.begin(), group.end());
    std::vector<double> scores(group_size), labels(group_size);
    for (int i = 0; i < group_size; ++i) labels[i] = group[i].label;
    for (int cand : candidates) {
      for (int i = 0; i < group_size; ++i) {
        Sample& s = perturbed[i];
        s.item_seq.assign(group[i].item_seq.begin() + 1, group[i].item_seq.end());
        s.item_seq.push_back(cand + 1);
        s.sem_seq = lift_sequence(s.item_seq, map);
      }
      scorer(perturbed, scores);
      aucs.push_back(auc(scores, labels));
    }
    double mean = 0.0;
    for (double a : aucs) mean += a;
    mean /= static_cast<double>(aucs.size());
    double var = 0.0;
    for (double a : aucs) var += (a - mean) * (a - mean);
    variances[gi] = var / static_cast<double>(aucs.size());
  });

  StabilityResult out;
  for (double v : variances) {
    if (v >= 0.0) out.per_user_variance.push_back(v);
  }
  out.summary = summarize_variances(out.per_user_variance);
  return out;
}

void write_report_json(const std::string& path, const EvalReport& report) {
  nlohmann::json j;
  j["auc"] = report.auc;
  j["uauc"] = report.uauc;
  for (const auto& [k, v] : report.ndcg) j["ndcg"][std::to_string(k)] = v;
  for (const auto& [k, v] : report.recall) j["recall"][std::to_string(k)] = v;
  if (report.variance) {
    j["variance"] = {{"median", report.variance->median},
                     {"mean", report.variance->mean},
                     {"min", report.variance->min},
                     {"max", report.variance->max},
                     {"users", report.variance->users}};
  }
  nlohmann::json per_user = nlohmann::json::array();
  for (const auto& u : report.per_user) {
    per_user.push_back({{"user", u.user}, {"auc", u.auc}, {"rank", u.rank}});
  }
  j["per_user"] = per_user;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + path);
}

void write_report_tsv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  out.precision(10);
  out << "metric\tk\tvalue\n";
  out << "auc\t-\t" << report.auc << "\n";
  out << "uauc\t-\t" << report.uauc << "\n";
  for (const auto& [k, v] : report.ndcg) out << "ndcg\t" << k << "\t" << v << "\n";
  for (const auto& [k, v] : report.recall) out << "recall\t" << k << "\t" << v << "\n";
  if (!out) throw DataError("cannot write " + path);
}

void write_variance_tsv(const std::string& path, std::span<const VarianceSummary> rows,
                        std::span<const std::string> row_names) {
  std::ofstream out(path);
  out.precision(10);
  out << "model\tmedian\tmean\tmin\tmax\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    out << (i < row_names.size() ? row_names[i] : std::to_string(i)) << "\t" << rows[i].median
        << "\t" << rows[i].mean << "\t" << rows[i].min << "\t" << rows[i].max << "\n";
  }
  if (!out) throw DataError("cannot write " + path);
}

}  // namespace solid
