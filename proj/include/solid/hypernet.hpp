// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "solid/backbone.hpp"
#include "solid/graph.hpp"
#include "solid/params.hpp"

namespace solid {

enum class GenStyle { FullMatrix, LowRank };

GenStyle gen_style_from_string(const std::string& s);
std::string gen_style_name(GenStyle s);

/// Parameter generator: a sequence encoder feeding a two-layer MLP whose
/// flat output is reshaped into the dynamic-layer matrices (full_matrix)
/// or into per-layer low-rank factors U (n_in x rank) and V (rank x n_out)
/// with K = U*V.
struct GeneratorConfig {
  GenStyle style = GenStyle::FullMatrix;
  int rank = 4;
  EncoderKind encoder = EncoderKind::Recurrent;
  int z_dim = 32;
  int hidden_dim = 64;

  void validate() const;
};

/// Flat MLP output length for the given layer specs.
int generator_flat_len(const GeneratorConfig& cfg, std::span<const DynamicLayerSpec> specs);

/// Creates "<prefix>.emb" (the generator-side embedding table),
/// "<prefix>.enc.*" and the generator MLP. For the semantic generator the
/// table has exactly n_rows rows (semantic id c sits at row c-1, padding is
/// handled by masking); for the item generator pass n_items + 1 so row 0
/// backs the padding sentinel.
void create_generator_params(ParamStore& ps, const std::string& prefix,
                             const GeneratorConfig& cfg, int emb_rows, int seq_len,
                             std::span<const DynamicLayerSpec> specs, Rng& rng);

/// Feature (1 x z_dim) -> one node per dynamic layer, shaped n_in x n_out.
std::vector<int> build_generator_output(Graph& g, Binder& b, const std::string& prefix,
                                        const GeneratorConfig& cfg, int feat_node,
                                        std::span<const DynamicLayerSpec> specs);

std::vector<int> clip_nodes(Graph& g, std::span<const int> theta, double clip_t);
std::vector<int> fuse_nodes(Graph& g, std::span<const int> trunk, std::span<const int> branch,
                            double clip_t);

/// Value-level counterparts used by tests and by checkpoint-driven tools.
ThetaD generate_from_sequence(const Mat& seq_feature, const ParamStore& ps,
                              const std::string& prefix, const GeneratorConfig& cfg,
                              std::span<const DynamicLayerSpec> specs);
ThetaD clip_params(const ThetaD& theta, double clip_t);
ThetaD fuse_params(const ThetaD& trunk, const ThetaD& branch, double clip_t);

/// The trained semantic encoder's embedding table, copied. This is the
/// only semantic-side tensor shaped n_codes x z_dim.
Mat extract_metacode(const ParamStore& ps, const std::string& prefix = "mc");

}  // namespace solid
