// SPDX-License-Identifier: Apache-2.0
#include "solid/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace solid {

EncoderKind encoder_from_string(const std::string& s) {
  if (s == "target_attention") return EncoderKind::TargetAttention;
  if (s == "recurrent") return EncoderKind::Recurrent;
  if (s == "self_attention") return EncoderKind::SelfAttention;
  throw ConfigError("unknown encoder kind: " + s);
}

std::string encoder_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::TargetAttention: return "target_attention";
    case EncoderKind::Recurrent: return "recurrent";
    case EncoderKind::SelfAttention: return "self_attention";
  }
  return "?";
}

std::vector<DynamicLayerSpec> dynamic_layers_from_string(const std::string& s) {
  std::vector<DynamicLayerSpec> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const size_t x = tok.find('x');
    if (x == std::string::npos) throw ConfigError("dynamic layer spec must look like 32x16");
    DynamicLayerSpec spec;
    spec.n_in = std::stoi(tok.substr(0, x));
    spec.n_out = std::stoi(tok.substr(x + 1));
    out.push_back(spec);
  }
  if (out.empty()) throw ConfigError("empty dynamic layer spec");
  return out;
}

std::vector<DynamicLayerSpec> BackboneConfig::resolved_dynamic_layers() const {
  if (!dynamic_layers.empty()) return dynamic_layers;
  return {{embed_dim, std::max(1, embed_dim / 2)}};
}

std::vector<int> BackboneConfig::static_mlp_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(3 * embed_dim);
  for (int i = 1; i < mlp_layers; ++i) sizes.push_back(2 * embed_dim);
  sizes.push_back(resolved_dynamic_layers().front().n_in);
  return sizes;
}

void BackboneConfig::validate() const {
  if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  if (mlp_layers < 1) throw ConfigError("mlp_layers must be >= 1");
  if (n_users <= 0 || n_items <= 0) throw ConfigError("vocab sizes must be positive");
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  for (const auto& d : resolved_dynamic_layers()) {
    if (d.n_in <= 0 || d.n_out <= 0) throw ConfigError("dynamic layer dims must be positive");
  }
}

Mat embed_sequence(std::span<const int> seq, const Mat& table, std::vector<uint8_t>* mask_out) {
  Mat out(static_cast<int>(seq.size()), table.cols);
  if (mask_out) mask_out->assign(seq.size(), 0);
  for (size_t i = 0; i < seq.size(); ++i) {
    const int id = seq[i];
    if (id < 0 || id >= table.rows) {
      throw DataError("sequence id " + std::to_string(id) + " outside table with " +
                      std::to_string(table.rows) + " rows");
    }
    std::copy_n(table.row(id), table.cols, out.row(static_cast<int>(i)));
    if (mask_out && id != 0) (*mask_out)[i] = 1;
  }
  return out;
}

void create_encoder_params(ParamStore& ps, const std::string& prefix, EncoderKind kind, int dim,
                           int seq_len, Rng& rng) {
  const double ws = 1.0 / std::sqrt(static_cast<double>(dim));
  switch (kind) {
    case EncoderKind::Recurrent: {
      for (const char* gate : {"z", "r", "h"}) {
        ps.add_normal(prefix + ".w" + gate, dim, dim, ws, rng);
        ps.add_normal(prefix + ".u" + gate, dim, dim, ws, rng);
        ps.add(prefix + ".b" + gate, 1, dim);
      }
      break;
    }
    case EncoderKind::TargetAttention: {
      const double w3 = 1.0 / std::sqrt(static_cast<double>(3 * dim));
      ps.add_normal(prefix + ".a1.w", 3 * dim, dim, w3, rng);
      ps.add(prefix + ".a1.b", 1, dim);
      ps.add_normal(prefix + ".a2.w", dim, 1, ws, rng);
      ps.add(prefix + ".a2.b", 1, 1);
      break;
    }
    case EncoderKind::SelfAttention: {
      ps.add_normal(prefix + ".pos", seq_len, dim, 0.1, rng);
      ps.add_normal(prefix + ".wq", dim, dim, ws, rng);
      ps.add_normal(prefix + ".wk", dim, dim, ws, rng);
      ps.add_normal(prefix + ".wv", dim, dim, ws, rng);
      break;
    }
  }
}

namespace {

int build_gru(Graph& g, Binder& b, const std::string& prefix, int emb_node,
              const std::vector<uint8_t>& keep, int dim) {
  const int wz = b.leaf(g, prefix + ".wz"), uz = b.leaf(g, prefix + ".uz"),
            bz = b.leaf(g, prefix + ".bz");
  const int wr = b.leaf(g, prefix + ".wr"), ur = b.leaf(g, prefix + ".ur"),
            br = b.leaf(g, prefix + ".br");
  const int wh = b.leaf(g, prefix + ".wh"), uh = b.leaf(g, prefix + ".uh"),
            bh = b.leaf(g, prefix + ".bh");
  int h = g.input_zeros(1, dim);
  for (size_t j = 0; j < keep.size(); ++j) {
    if (!keep[j]) continue;  // recurrence skips padding
    const int x = g.select_row(emb_node, static_cast<int>(j));
    const int z = g.sigmoid(g.add(g.add_bias(g.matmul(x, wz), bz), g.matmul(h, uz)));
    const int r = g.sigmoid(g.add(g.add_bias(g.matmul(x, wr), br), g.matmul(h, ur)));
    const int hh = g.tanh_(g.add(g.add_bias(g.matmul(x, wh), bh), g.matmul(g.mul(r, h), uh)));
    h = g.add(g.mul(g.affine(z, -1.0, 1.0), h), g.mul(z, hh));
  }
  return h;
}

int build_target_attention(Graph& g, Binder& b, const std::string& prefix, int emb_node,
                           const std::vector<uint8_t>& keep, int target_node) {
  const int rows = g.val(emb_node).rows;
  const int t_rows = g.broadcast_row(target_node, rows);
  const int parts[3] = {emb_node, t_rows, g.mul(emb_node, t_rows)};
  const int x3 = g.concat_cols(parts);
  const int s1 = g.relu(g.add_bias(g.matmul(x3, b.leaf(g, prefix + ".a1.w")),
                                   b.leaf(g, prefix + ".a1.b")));
  const int sc = g.add_bias(g.matmul(s1, b.leaf(g, prefix + ".a2.w")),
                            b.leaf(g, prefix + ".a2.b"));  // rows x 1
  const int w = g.masked_softmax(sc, keep);
  return g.matmul(w, emb_node, /*ta=*/true, /*tb=*/false);  // 1 x dim
}

int build_self_attention(Graph& g, Binder& b, const std::string& prefix, int emb_node,
                         const std::vector<uint8_t>& keep, int dim) {
  int last = -1;
  for (size_t j = 0; j < keep.size(); ++j) {
    if (keep[j]) last = static_cast<int>(j);
  }
  const int h = g.add(emb_node, b.leaf(g, prefix + ".pos"));
  const int q = g.matmul(g.select_row(h, last), b.leaf(g, prefix + ".wq"));
  const int k = g.matmul(h, b.leaf(g, prefix + ".wk"));
  const int v = g.matmul(h, b.leaf(g, prefix + ".wv"));
  const int scores = g.scale(g.matmul(q, k, false, true), 1.0 / std::sqrt(double(dim)));
  const int w = g.masked_softmax(scores, keep);
  return g.matmul(w, v);
}

}  // namespace

int build_encoder(Graph& g, Binder& b, const std::string& prefix, EncoderKind kind, int emb_node,
                  const std::vector<uint8_t>& keep, int target_node, int dim) {
  const bool any = std::any_of(keep.begin(), keep.end(), [](uint8_t m) { return m != 0; });
  if (!any) return g.input_zeros(1, dim);
  switch (kind) {
    case EncoderKind::Recurrent:
      return build_gru(g, b, prefix, emb_node, keep, dim);
    case EncoderKind::TargetAttention:
      if (target_node < 0) throw ConfigError("target_attention encoder requires a target");
      return build_target_attention(g, b, prefix, emb_node, keep, target_node);
    case EncoderKind::SelfAttention:
      return build_self_attention(g, b, prefix, emb_node, keep, dim);
  }
  throw ConfigError("bad encoder kind");
}

void Backbone::create_params(ParamStore& ps, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.embed_dim;
  ps.add_normal("bb.user_emb", cfg.n_users, d, 0.1, rng);
  ps.add_normal("bb.item_emb", cfg.n_items + 1, d, 0.1, rng);
  if (cfg.n_semantics > 0) ps.add_normal("bb.sem_emb", cfg.n_semantics + 1, d, 0.1, rng);
  create_encoder_params(ps, "bb.enc", cfg.encoder, d, cfg.seq_len, rng);

  const auto sizes = cfg.static_mlp_sizes();
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    const double ws = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
    ps.add_normal("bb.mlp." + std::to_string(i) + ".w", sizes[i], sizes[i + 1], ws, rng);
    ps.add("bb.mlp." + std::to_string(i) + ".b", 1, sizes[i + 1]);
  }
  const auto dyn = cfg.resolved_dynamic_layers();
  for (size_t i = 0; i < dyn.size(); ++i) {
    const double ws = 1.0 / std::sqrt(static_cast<double>(dyn[i].n_in));
    ps.add_normal("bb.statdyn." + std::to_string(i) + ".w", dyn[i].n_in, dyn[i].n_out, ws, rng);
  }
  const double hs = 1.0 / std::sqrt(static_cast<double>(dyn.back().n_out));
  ps.add_normal("bb.head.w", dyn.back().n_out, 1, hs, rng);
  ps.add("bb.head.b", 1, 1);
}

int Backbone::build_seq_embedding(Graph& g, Binder& b, const BackboneConfig& cfg,
                                  const std::vector<int>& seq, bool use_sem_seq,
                                  std::vector<uint8_t>& keep_out) {
  if (static_cast<int>(seq.size()) != cfg.seq_len) {
    throw DataError("sequence length " + std::to_string(seq.size()) + " does not match config " +
                    std::to_string(cfg.seq_len));
  }
  const int table = use_sem_seq ? b.leaf(g, "bb.sem_emb") : b.leaf(g, "bb.item_emb");
  keep_out.assign(seq.size(), 0);
  for (size_t i = 0; i < seq.size(); ++i) keep_out[i] = seq[i] != 0;
  for (int id : seq) {
    if (id < 0 || id >= g.val(table).rows) {
      throw DataError("sequence id " + std::to_string(id) + " out of embedding range");
    }
  }
  return g.gather_rows(table, seq);
}

int Backbone::build_prediction(Graph& g, Binder& b, const BackboneConfig& cfg, int user_node,
                               int target_node, int feat_node,
                               std::span<const int> theta_d_nodes) {
  const int parts[3] = {user_node, target_node, feat_node};
  int x = g.concat_cols(parts);
  const auto sizes = cfg.static_mlp_sizes();
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::string idx = std::to_string(i);
    x = g.relu(g.add_bias(g.matmul(x, b.leaf(g, "bb.mlp." + idx + ".w")),
                          b.leaf(g, "bb.mlp." + idx + ".b")));
  }

  const auto dyn = cfg.resolved_dynamic_layers();
  if (!theta_d_nodes.empty() && theta_d_nodes.size() != dyn.size()) {
    throw ConfigError("theta_d node count does not match dynamic layer count");
  }
  for (size_t i = 0; i < dyn.size(); ++i) {
    const int k = theta_d_nodes.empty()
                      ? b.leaf(g, "bb.statdyn." + std::to_string(i) + ".w")
                      : theta_d_nodes[i];
    const Mat& kv = g.val(k);
    if (g.val(x).cols != kv.rows || kv.cols != dyn[i].n_out) {
      throw ConfigError("dynamic layer " + std::to_string(i) + ": feature width " +
                        std::to_string(g.val(x).cols) + " vs K " + shape_str(kv));
    }
    x = g.matmul(x, k);
    if (i + 1 < dyn.size()) x = g.relu(x);  // rectifier between dynamic layers only
  }
  const int logit = g.add_bias(g.matmul(x, b.leaf(g, "bb.head.w")), b.leaf(g, "bb.head.b"));
  return g.sigmoid(logit);
}

int Backbone::build_forward(Graph& g, Binder& b, const BackboneConfig& cfg, const Sample& s,
                            bool use_sem_seq, std::span<const int> theta_d_nodes) {
  if (s.user < 0 || s.user >= cfg.n_users) throw DataError("user id out of range");
  const int u_e = g.select_row(b.leaf(g, "bb.user_emb"), s.user);
  const int v_e = g.select_row(b.leaf(g, "bb.item_emb"), s.target_item);
  std::vector<uint8_t> keep;
  const int emb =
      build_seq_embedding(g, b, cfg, use_sem_seq ? s.sem_seq : s.item_seq, use_sem_seq, keep);
  const int feat = build_encoder(g, b, "bb.enc", cfg.encoder, emb, keep, v_e, cfg.embed_dim);
  return build_prediction(g, b, cfg, u_e, v_e, feat, theta_d_nodes);
}

double Backbone::forward(const ParamStore& ps, const BackboneConfig& cfg, const Sample& s,
                         const ThetaD* theta_d, bool use_sem_seq) {
  Graph g;
  Binder b(ps, nullptr);
  std::vector<int> nodes;
  if (theta_d) {
    const auto dyn = cfg.resolved_dynamic_layers();
    if (theta_d->layers.size() != dyn.size()) {
      throw ConfigError("theta_d has " + std::to_string(theta_d->layers.size()) +
                        " layers, config expects " + std::to_string(dyn.size()));
    }
    for (const Mat& k : theta_d->layers) nodes.push_back(g.input(k));
  }
  const int yhat = build_forward(g, b, cfg, s, use_sem_seq, nodes);
  return g.val(yhat).a[0];
}

}  // namespace solid
