// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "solid/data.hpp"
#include "solid/mat.hpp"

namespace solid {

/// Planted-structure generator. Users click mostly inside a small set of
/// preferred semantics and drift through phases; within a phase the clicks
/// concentrate on one style, a sub-pool of the phase's semantic. Items
/// carry semantic-prototype embeddings, so the semantic level is
/// recoverable from modalities while styles are only visible in the
/// interaction data itself.
struct SynthConfig {
  int users = 2000;
  int items = 300;
  int semantics = 12;
  double noise = 0.3;           // modality noise around the prototypes
  double behavior_noise = 0.2;  // chance of clicking outside the phase
  int prefs_per_user = 2;
  int styles_per_semantic = 2;
  double phase_switch = 0.25;  // chance of drifting to a new phase per click
  int min_interactions = 4;
  int max_interactions = 9;
  int modal_dim = 32;
  uint64_t seed = 13;
};

struct SynthOutput {
  RawLog log;
  Mat image;                       // items x modal_dim
  Mat text;                        // items x modal_dim
  std::vector<int> true_semantic;  // planted group per item, 1..semantics
  std::vector<int> true_style;     // planted style within the group, 0-based
};

SynthOutput gen_synthetic(const SynthConfig& cfg);

}  // namespace solid
