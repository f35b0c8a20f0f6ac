// SPDX-License-Identifier: Apache-2.0
#include "solid/hypernet.hpp"

#include <cmath>

namespace solid {

GenStyle gen_style_from_string(const std::string& s) {
  if (s == "full_matrix") return GenStyle::FullMatrix;
  if (s == "low_rank") return GenStyle::LowRank;
  throw ConfigError("unknown generator style: " + s);
}

std::string gen_style_name(GenStyle s) {
  return s == GenStyle::FullMatrix ? "full_matrix" : "low_rank";
}

void GeneratorConfig::validate() const {
  if (z_dim <= 0 || hidden_dim <= 0) throw ConfigError("generator dims must be positive");
  if (style == GenStyle::LowRank && rank < 1) throw ConfigError("low_rank needs rank >= 1");
}

int generator_flat_len(const GeneratorConfig& cfg, std::span<const DynamicLayerSpec> specs) {
  int len = 0;
  for (const auto& s : specs) {
    if (cfg.style == GenStyle::FullMatrix) {
      len += s.n_in * s.n_out;
    } else {
      len += cfg.rank * (s.n_in + s.n_out);
    }
  }
  return len;
}

void create_generator_params(ParamStore& ps, const std::string& prefix,
                             const GeneratorConfig& cfg, int emb_rows, int seq_len,
                             std::span<const DynamicLayerSpec> specs, Rng& rng) {
  cfg.validate();
  ps.add_normal(prefix + ".emb", emb_rows, cfg.z_dim, 0.1, rng);
  create_encoder_params(ps, prefix + ".enc", cfg.encoder, cfg.z_dim, seq_len, rng);
  const int flat = generator_flat_len(cfg, specs);
  const double w1s = 1.0 / std::sqrt(static_cast<double>(cfg.z_dim));
  const double w2s = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  ps.add_normal(prefix + ".mlp.w1", cfg.z_dim, cfg.hidden_dim, w1s, rng);
  ps.add(prefix + ".mlp.b1", 1, cfg.hidden_dim);
  ps.add_normal(prefix + ".mlp.w2", cfg.hidden_dim, flat, w2s, rng);
  ps.add(prefix + ".mlp.b2", 1, flat);
}

std::vector<int> build_generator_output(Graph& g, Binder& b, const std::string& prefix,
                                        const GeneratorConfig& cfg, int feat_node,
                                        std::span<const DynamicLayerSpec> specs) {
  const int h = g.relu(g.add_bias(g.matmul(feat_node, b.leaf(g, prefix + ".mlp.w1")),
                                  b.leaf(g, prefix + ".mlp.b1")));
  const int flat = g.add_bias(g.matmul(h, b.leaf(g, prefix + ".mlp.w2")),
                              b.leaf(g, prefix + ".mlp.b2"));
  const int flat_len = g.val(flat).cols;
  const int expect = generator_flat_len(cfg, specs);
  if (flat_len != expect) {
    throw ConfigError("generator flat output " + std::to_string(flat_len) + " vs spec total " +
                      std::to_string(expect));
  }
  std::vector<int> out;
  int off = 0;
  for (const auto& s : specs) {
    if (cfg.style == GenStyle::FullMatrix) {
      const int n = s.n_in * s.n_out;
      out.push_back(g.reshape(g.slice_cols(flat, off, off + n), s.n_in, s.n_out));
      off += n;
    } else {
      const int nu = s.n_in * cfg.rank;
      const int nv = cfg.rank * s.n_out;
      const int u = g.reshape(g.slice_cols(flat, off, off + nu), s.n_in, cfg.rank);
      const int v = g.reshape(g.slice_cols(flat, off + nu, off + nu + nv), cfg.rank, s.n_out);
      out.push_back(g.matmul(u, v));
      off += nu + nv;
    }
  }
  return out;
}

std::vector<int> clip_nodes(Graph& g, std::span<const int> theta, double clip_t) {
  if (clip_t < 0.0) throw ConfigError("clip threshold must be >= 0");
  std::vector<int> out;
  out.reserve(theta.size());
  for (int t : theta) out.push_back(g.clamp_box(t, -clip_t, clip_t));
  return out;
}

std::vector<int> fuse_nodes(Graph& g, std::span<const int> trunk, std::span<const int> branch,
                            double clip_t) {
  if (trunk.size() != branch.size()) throw ConfigError("fuse: bundle layer counts differ");
  std::vector<int> out;
  out.reserve(trunk.size());
  for (size_t i = 0; i < trunk.size(); ++i) {
    out.push_back(g.add(trunk[i], g.clamp_box(branch[i], -clip_t, clip_t)));
  }
  return out;
}

ThetaD generate_from_sequence(const Mat& seq_feature, const ParamStore& ps,
                              const std::string& prefix, const GeneratorConfig& cfg,
                              std::span<const DynamicLayerSpec> specs) {
  if (!all_finite(seq_feature)) throw DataError("sequence feature has non-finite entries");
  Graph g;
  Binder b(ps, nullptr);
  const int feat = g.input(seq_feature);
  const auto nodes = build_generator_output(g, b, prefix, cfg, feat, specs);
  ThetaD out;
  for (int n : nodes) out.layers.push_back(g.val(n));
  return out;
}

ThetaD clip_params(const ThetaD& theta, double clip_t) {
  if (clip_t < 0.0) throw ConfigError("clip threshold must be >= 0");
  ThetaD out = theta;
  for (Mat& m : out.layers) {
    for (double& v : m.a) v = v < -clip_t ? -clip_t : (v > clip_t ? clip_t : v);
  }
  return out;
}

ThetaD fuse_params(const ThetaD& trunk, const ThetaD& branch, double clip_t) {
  if (trunk.layers.size() != branch.layers.size()) {
    throw ConfigError("fuse: bundle layer counts differ");
  }
  ThetaD clipped = clip_params(branch, clip_t);
  ThetaD out = trunk;
  for (size_t i = 0; i < out.layers.size(); ++i) {
    if (!out.layers[i].same_shape(clipped.layers[i])) {
      throw ConfigError("fuse: layer " + std::to_string(i) + " shapes differ");
    }
    for (size_t k = 0; k < out.layers[i].a.size(); ++k) {
      out.layers[i].a[k] += clipped.layers[i].a[k];
    }
  }
  return out;
}

Mat extract_metacode(const ParamStore& ps, const std::string& prefix) {
  if (!ps.has(prefix + ".emb")) {
    throw ConfigError("no trained semantic encoder under prefix " + prefix);
  }
  return ps.value(prefix + ".emb");  // copy
}

}  // namespace solid
