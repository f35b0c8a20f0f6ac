// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "solid/graph.hpp"
#include "solid/mat.hpp"
#include "solid/rng.hpp"

namespace solid {

/// Named collection of trainable tensors. Insertion order is stable and is
/// the canonical iteration order for optimizer steps, gradient reduction
/// and checkpoint manifests, which keeps everything deterministic.
class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols);
  int add_normal(const std::string& name, int rows, int cols, double stddev, Rng& rng);

  int id(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Mat& value(int id) { return values_[id]; }
  const Mat& value(int id) const { return values_[id]; }
  Mat& value(const std::string& name) { return values_[id(name)]; }
  const Mat& value(const std::string& name) const { return values_[id(name)]; }

  const std::string& name(int id) const { return names_[id]; }
  int count() const { return static_cast<int>(values_.size()); }

  uint64_t checksum_all() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, int> index_;
};

/// Per-chunk (or master) gradient accumulator aligned with a ParamStore.
struct GradStore {
  std::vector<Mat> g;

  void match(const ParamStore& ps);
  void zero();
  void add(const GradStore& other);
  Mat& of(int id) { return g[id]; }
};

/// Adam with bias-corrected moments. lr = 0 leaves parameters bitwise
/// untouched.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& ps, const GradStore& grads, double lr);
  void reset() { m_.clear(); v_.clear(); t_ = 0; }
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::vector<Mat> m_, v_;
  long long t_ = 0;
};

/// Binds parameters into a graph: one leaf node per parameter per graph,
/// cached so repeated uses share the node. A null sink builds an
/// inference-only graph (no gradients anywhere).
class Binder {
 public:
  Binder(const ParamStore& ps, GradStore* sink) : ps_(&ps), sink_(sink) {}

  int leaf(Graph& g, int param_id);
  int leaf(Graph& g, const std::string& name) { return leaf(g, ps_->id(name)); }
  void reset() { cache_.clear(); }

  const ParamStore& params() const { return *ps_; }

 private:
  const ParamStore* ps_;
  GradStore* sink_;
  std::unordered_map<int, int> cache_;
};

/// Checkpoint layout: a directory holding one .ten file per tensor plus
/// manifest.json (names, shapes, seed, config hash). Tensor files are raw
/// little-endian doubles behind a small header, so round-trips are bitwise.
void save_checkpoint(const std::string& dir, const ParamStore& ps, uint64_t seed,
                     uint64_t config_hash);
void load_checkpoint(const std::string& dir, ParamStore& ps, uint64_t* seed = nullptr,
                     uint64_t* config_hash = nullptr);

void save_mat(const std::string& path, const Mat& m);
Mat load_mat(const std::string& path);

}  // namespace solid
