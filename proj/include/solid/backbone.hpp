// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solid/data.hpp"
#include "solid/graph.hpp"
#include "solid/params.hpp"

namespace solid {

enum class EncoderKind { TargetAttention, Recurrent, SelfAttention };

EncoderKind encoder_from_string(const std::string& s);
std::string encoder_name(EncoderKind k);

struct DynamicLayerSpec {
  int n_in = 0;
  int n_out = 0;
};

std::vector<DynamicLayerSpec> dynamic_layers_from_string(const std::string& s);

/// Primary model layout: embeddings, one sequence encoder, a static MLP
/// over concat(user, target, sequence feature), the dynamic block, and a
/// static sigmoid head. Dynamic layers are bias-free; biases live in the
/// static layers.
struct BackboneConfig {
  EncoderKind encoder = EncoderKind::Recurrent;
  int embed_dim = 32;
  int mlp_layers = 2;
  std::vector<DynamicLayerSpec> dynamic_layers;  // empty -> {embed_dim, embed_dim/2}
  int n_users = 0;
  int n_items = 0;
  int n_semantics = 0;
  int seq_len = 10;

  std::vector<DynamicLayerSpec> resolved_dynamic_layers() const;
  std::vector<int> static_mlp_sizes() const;  // includes input and output widths
  void validate() const;
};

/// Per-sample generated weights, one matrix per dynamic layer.
struct ThetaD {
  std::vector<Mat> layers;
};

/// Row lookup with padding: id 0 selects table row 0; the returned mask is
/// 1 for non-pad positions.
Mat embed_sequence(std::span<const int> seq, const Mat& table, std::vector<uint8_t>* mask_out);

/// Creates the parameters one encoder instance needs, prefixed with
/// "<prefix>.".
void create_encoder_params(ParamStore& ps, const std::string& prefix, EncoderKind kind, int dim,
                           int seq_len, Rng& rng);

/// Builds the sequence feature (1 x dim) from embedded positions. All-pad
/// sequences yield an exact zero vector. target_node is required for the
/// target-attention encoder and ignored otherwise.
int build_encoder(Graph& g, Binder& b, const std::string& prefix, EncoderKind kind, int emb_node,
                  const std::vector<uint8_t>& keep, int target_node, int dim);

class Backbone {
 public:
  /// Creates backbone parameters under "bb.". The static fallback weights
  /// for the dynamic slots (used when no generator supplies theta_d) are
  /// created as "bb.statdyn.<i>.w".
  static void create_params(ParamStore& ps, const BackboneConfig& cfg, Rng& rng);

  /// Gathers sequence embeddings from the backbone's item (or semantic)
  /// table and reports the pad mask.
  static int build_seq_embedding(Graph& g, Binder& b, const BackboneConfig& cfg,
                                 const std::vector<int>& seq, bool use_sem_seq,
                                 std::vector<uint8_t>& keep_out);

  /// concat(user, target, feature) -> static MLP -> dynamic block -> head.
  /// theta_d_nodes empty selects the static fallback weights.
  static int build_prediction(Graph& g, Binder& b, const BackboneConfig& cfg, int user_node,
                              int target_node, int feat_node,
                              std::span<const int> theta_d_nodes);

  /// Builds yhat (1x1 in (0,1)) for one sample end to end.
  static int build_forward(Graph& g, Binder& b, const BackboneConfig& cfg, const Sample& s,
                           bool use_sem_seq, std::span<const int> theta_d_nodes);

  /// Inference-only forward with explicit generated weights.
  static double forward(const ParamStore& ps, const BackboneConfig& cfg, const Sample& s,
                        const ThetaD* theta_d, bool use_sem_seq = false);
};

}  // namespace solid
