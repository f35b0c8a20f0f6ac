// SPDX-License-Identifier: Apache-2.0
#include "solid/synth.hpp"

#include <cmath>
#include <unordered_set>

#include "solid/rng.hpp"

namespace solid {

SynthOutput gen_synthetic(const SynthConfig& cfg) {
  if (cfg.users < 1 || cfg.items < 1) throw ConfigError("synthetic: users/items must be >= 1");
  if (cfg.semantics < 1 || cfg.semantics > cfg.items) {
    throw ConfigError("synthetic: semantics must be in [1, items]");
  }
  if (cfg.min_interactions < 1 || cfg.max_interactions < cfg.min_interactions) {
    throw ConfigError("synthetic: bad interaction range");
  }
  if (cfg.styles_per_semantic < 1) throw ConfigError("synthetic: styles must be >= 1");
  Rng root(cfg.seed);
  Rng proto_rng = root.fork(1);
  Rng item_rng = root.fork(2);
  Rng user_rng = root.fork(3);

  const int S = cfg.semantics;
  const int d = cfg.modal_dim;
  const int n_styles = cfg.styles_per_semantic;

  Mat protos(S, d);
  for (int s = 0; s < S; ++s) {
    double* r = protos.row(s);
    for (int j = 0; j < d; ++j) r[j] = proto_rng.normal();
    const double nrm = l2_norm(r, d);
    for (int j = 0; j < d; ++j) r[j] /= nrm;
  }

  SynthOutput out;
  out.true_semantic.resize(cfg.items);
  out.true_style.resize(cfg.items);
  out.image.assign(cfg.items, d);
  out.text.assign(cfg.items, d);
  // noise is the expected norm of the perturbation around the unit
  // prototype, so its meaning does not drift with the embedding width
  const double sigma = cfg.noise / std::sqrt(static_cast<double>(d));
  // pools[s][y] holds the items of semantic s with style y
  std::vector<std::vector<std::vector<int>>> pools(
      S, std::vector<std::vector<int>>(n_styles));
  for (int v = 0; v < cfg.items; ++v) {
    const int s = v % S;
    const int style = (v / S) % n_styles;
    out.true_semantic[v] = s + 1;
    out.true_style[v] = style;
    pools[s][style].push_back(v);
    // styles leave no trace in the modalities; only the semantic does
    for (int j = 0; j < d; ++j) {
      out.image(v, j) = protos(s, j) + sigma * item_rng.normal();
      out.text(v, j) = protos(s, j) + sigma * item_rng.normal();
    }
  }

  out.log.user_ids.reserve(cfg.users);
  out.log.item_ids.reserve(cfg.items);
  for (int u = 0; u < cfg.users; ++u) out.log.user_ids.push_back("u" + std::to_string(u));
  for (int v = 0; v < cfg.items; ++v) out.log.item_ids.push_back("i" + std::to_string(v));

  for (int u = 0; u < cfg.users; ++u) {
    Rng rng = user_rng.fork(static_cast<uint64_t>(u));
    std::vector<int> prefs;
    while (static_cast<int>(prefs.size()) < std::min(cfg.prefs_per_user, S)) {
      const int s = rng.uniform_int(S);
      if (std::find(prefs.begin(), prefs.end(), s) == prefs.end()) prefs.push_back(s);
    }
    int phase_sem = prefs[rng.uniform_int(static_cast<int>(prefs.size()))];
    int phase_style = rng.uniform_int(n_styles);

    const int n = cfg.min_interactions +
                  rng.uniform_int(cfg.max_interactions - cfg.min_interactions + 1);
    std::unordered_set<int> used;
    for (int t = 0; t < n; ++t) {
      if (t > 0 && rng.uniform() < cfg.phase_switch) {
        phase_sem = prefs[rng.uniform_int(static_cast<int>(prefs.size()))];
        phase_style = rng.uniform_int(n_styles);
      }
      int item = -1;
      for (int tries = 0; tries < 60; ++tries) {
        int cand;
        if (rng.uniform() < cfg.behavior_noise) {
          cand = rng.uniform_int(cfg.items);
        } else {
          const auto& pool = pools[phase_sem][phase_style];
          if (pool.empty()) break;
          cand = pool[rng.uniform_int(static_cast<int>(pool.size()))];
        }
        if (!used.count(cand)) {
          item = cand;
          break;
        }
      }
      if (item < 0) {
        for (int cand = 0; cand < cfg.items; ++cand) {
          if (!used.count(cand)) {
            item = cand;
            break;
          }
        }
      }
      if (item < 0) break;  // user exhausted the vocabulary
      used.insert(item);
      out.log.interactions.push_back({u, item, static_cast<long long>(t + 1)});
    }
  }
  return out;
}

}  // namespace solid
