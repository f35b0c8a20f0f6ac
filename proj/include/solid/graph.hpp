// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "solid/mat.hpp"

namespace solid {

/// Reverse-mode autodiff over a per-sample tape.
///
/// Values are computed eagerly as nodes are built; backward() replays the
/// tape in reverse. Leaf nodes reference parameter storage owned elsewhere
/// and accumulate their gradients into an external sink, so several graphs
/// can run concurrently against the same parameters as long as each has its
/// own sink. reset() keeps node capacity, making rebuild cheap.
///
/// Subgradient conventions:
///  - relu: derivative 0 at the kink.
///  - clamp_box: pass-through on the closed interval [lo, hi], zero outside.
///  - bce_mean: zero gradient where the probability was clamped.
class Graph {
 public:
  enum class Op : uint8_t {
    Leaf,
    Input,
    MatMul,
    Add,
    Sub,
    Mul,
    AddBias,
    Affine,
    Relu,
    Sigmoid,
    Tanh,
    ConcatCols,
    SliceCols,
    Reshape,
    GatherRows,
    BroadcastRow,
    MaskedSoftmax,
    ClampBox,
    StopGrad,
    StraightThrough,
    SumAll,
    MeanAll,
    BceMean,
    MaskedMse,
  };

  /// Trainable leaf. `value` must outlive the graph; `grad_sink`, when
  /// non-null, receives accumulated gradients and must match value's shape.
  int leaf(const Mat* value, Mat* grad_sink);

  /// Constant input (copied); never receives gradients.
  int input(Mat v);
  int input_zeros(int rows, int cols);

  int matmul(int a, int b, bool ta = false, bool tb = false);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int add_bias(int a, int bias);
  int scale(int a, double s);
  /// Elementwise s0 * x + s1.
  int affine(int a, double s0, double s1);
  int relu(int a);
  int sigmoid(int a);
  int tanh_(int a);
  int concat_cols(std::span<const int> parts);
  int slice_cols(int a, int c0, int c1);
  int reshape(int a, int rows, int cols);
  /// Row i of the result is row idx[i] of `table`; idx[i] == -1 gives a
  /// zero row that never propagates gradient.
  int gather_rows(int table, std::span<const int> idx);
  int select_row(int table, int r);
  int broadcast_row(int a, int n_rows);
  /// Softmax over entries with keep != 0, treating the tensor as flat;
  /// masked entries become exactly 0. All-masked input yields all zeros.
  int masked_softmax(int a, std::span<const uint8_t> keep);
  int clamp_box(int a, double lo, double hi);
  int stop_grad(int a);
  /// Value is a bitwise copy of value_src; the backward pass routes the
  /// gradient to grad_dst and value_src receives none (the straight-through
  /// estimator).
  int straight_through(int value_src, int grad_dst);
  int sum_all(int a);
  int mean_all(int a);
  /// Mean binary cross-entropy of probabilities against 0/1 labels, with
  /// probabilities clamped to [eps, 1-eps].
  int bce_mean(int probs, std::span<const double> labels, double eps);
  /// Mean squared difference over rows with keep != 0, normalized by
  /// (#kept rows * cols). Zero kept rows yields 0.
  int masked_mse(int a, int b, std::span<const uint8_t> keep);

  const Mat& val(int id) const;
  const Mat& grad(int id) const;

  /// Runs reverse-mode accumulation from `root` (must be 1x1), seeding its
  /// gradient with `seed`. Leaf sinks are += accumulated, so a caller can
  /// run several backwards into the same sinks.
  void backward(int root, double seed = 1.0);

  void reset() { used_ = 0; }
  int size() const { return used_; }

 private:
  struct Node {
    Op op = Op::Input;
    int a = -1, b = -1;
    bool f0 = false, f1 = false;
    double p0 = 0.0, p1 = 0.0;
    std::vector<int> args;
    std::vector<int> iaux;
    std::vector<uint8_t> baux;
    std::vector<double> daux;
    const Mat* ext_val = nullptr;
    Mat* ext_grad = nullptr;
    Mat val;
    Mat grad;
    bool needs_grad = false;
  };

  int alloc();
  Node& n(int id) { return nodes_[id]; }
  const Node& n(int id) const { return nodes_[id]; }
  const Mat& v(int id) const {
    const Node& nd = nodes_[id];
    return nd.op == Op::Leaf ? *nd.ext_val : nd.val;
  }
  void add_to_grad(int id, const Mat& g);
  Mat* grad_target(int id);
  void check(bool cond, const char* what) const;

  std::vector<Node> nodes_;
  int used_ = 0;
  Mat scratch_;
};

}  // namespace solid
