// SPDX-License-Identifier: Apache-2.0
#include "solid/graph.hpp"

#include <cmath>
#include <cstring>

namespace solid {

void Graph::check(bool cond, const char* what) const {
  if (!cond) throw std::runtime_error(std::string("graph: ") + what);
}

int Graph::alloc() {
  if (used_ == static_cast<int>(nodes_.size())) nodes_.emplace_back();
  Node& nd = nodes_[used_];
  nd.op = Op::Input;
  nd.a = nd.b = -1;
  nd.f0 = nd.f1 = false;
  nd.p0 = nd.p1 = 0.0;
  nd.args.clear();
  nd.iaux.clear();
  nd.baux.clear();
  nd.daux.clear();
  nd.ext_val = nullptr;
  nd.ext_grad = nullptr;
  nd.needs_grad = false;
  return used_++;
}

int Graph::leaf(const Mat* value, Mat* grad_sink) {
  check(value != nullptr, "leaf value is null");
  if (grad_sink) check(grad_sink->same_shape(*value), "leaf grad sink shape mismatch");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Leaf;
  nd.ext_val = value;
  nd.ext_grad = grad_sink;
  nd.needs_grad = grad_sink != nullptr;
  return id;
}

int Graph::input(Mat vin) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Input;
  nd.val = std::move(vin);
  return id;
}

int Graph::input_zeros(int rows, int cols) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Input;
  nd.val.assign(rows, cols, 0.0);
  return id;
}

int Graph::matmul(int a, int b, bool ta, bool tb) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::MatMul;
  nd.a = a;
  nd.b = b;
  nd.f0 = ta;
  nd.f1 = tb;
  nd.needs_grad = n(a).needs_grad || n(b).needs_grad;
  gemm(v(a), ta, v(b), tb, nd.val, false);
  return id;
}

int Graph::add(int a, int b) {
  check(v(a).same_shape(v(b)), "add shape mismatch");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Add;
  nd.a = a;
  nd.b = b;
  nd.needs_grad = n(a).needs_grad || n(b).needs_grad;
  const Mat& x = v(a);
  const Mat& y = v(b);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = x.a[i] + y.a[i];
  return id;
}

int Graph::sub(int a, int b) {
  check(v(a).same_shape(v(b)), "sub shape mismatch");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Sub;
  nd.a = a;
  nd.b = b;
  nd.needs_grad = n(a).needs_grad || n(b).needs_grad;
  const Mat& x = v(a);
  const Mat& y = v(b);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = x.a[i] - y.a[i];
  return id;
}

int Graph::mul(int a, int b) {
  check(v(a).same_shape(v(b)), "mul shape mismatch");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Mul;
  nd.a = a;
  nd.b = b;
  nd.needs_grad = n(a).needs_grad || n(b).needs_grad;
  const Mat& x = v(a);
  const Mat& y = v(b);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = x.a[i] * y.a[i];
  return id;
}

int Graph::add_bias(int a, int bias) {
  check(v(bias).rows == 1 && v(bias).cols == v(a).cols, "add_bias: bias must be 1 x cols(a)");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::AddBias;
  nd.a = a;
  nd.b = bias;
  nd.needs_grad = n(a).needs_grad || n(bias).needs_grad;
  const Mat& x = v(a);
  const Mat& bm = v(bias);
  nd.val.assign(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double* or_ = nd.val.row(i);
    for (int j = 0; j < x.cols; ++j) or_[j] = xr[j] + bm.a[j];
  }
  return id;
}

int Graph::scale(int a, double s) { return affine(a, s, 0.0); }

int Graph::affine(int a, double s0, double s1) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Affine;
  nd.a = a;
  nd.p0 = s0;
  nd.p1 = s1;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = s0 * x.a[i] + s1;
  return id;
}

int Graph::relu(int a) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Relu;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = x.a[i] > 0.0 ? x.a[i] : 0.0;
  return id;
}

int Graph::sigmoid(int a) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Sigmoid;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = 1.0 / (1.0 + std::exp(-x.a[i]));
  return id;
}

int Graph::tanh_(int a) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::Tanh;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) nd.val.a[i] = std::tanh(x.a[i]);
  return id;
}

int Graph::concat_cols(std::span<const int> parts) {
  check(!parts.empty(), "concat_cols: empty");
  const int rows = v(parts[0]).rows;
  int cols = 0;
  bool needs = false;
  for (int p : parts) {
    check(v(p).rows == rows, "concat_cols: row mismatch");
    cols += v(p).cols;
    needs = needs || n(p).needs_grad;
  }
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::ConcatCols;
  nd.args.assign(parts.begin(), parts.end());
  nd.needs_grad = needs;
  nd.val.assign(rows, cols);
  int off = 0;
  for (int p : parts) {
    const Mat& x = v(p);
    for (int i = 0; i < rows; ++i) {
      std::memcpy(nd.val.row(i) + off, x.row(i), static_cast<size_t>(x.cols) * sizeof(double));
    }
    off += x.cols;
  }
  return id;
}

int Graph::slice_cols(int a, int c0, int c1) {
  check(0 <= c0 && c0 < c1 && c1 <= v(a).cols, "slice_cols: bad range");
  const int id = alloc();
  const Mat& x = v(a);
  Node& nd = n(id);
  nd.op = Op::SliceCols;
  nd.a = a;
  nd.p0 = c0;
  nd.p1 = c1;
  nd.needs_grad = n(a).needs_grad;
  nd.val.assign(x.rows, c1 - c0);
  for (int i = 0; i < x.rows; ++i) {
    std::memcpy(nd.val.row(i), x.row(i) + c0, static_cast<size_t>(c1 - c0) * sizeof(double));
  }
  return id;
}

int Graph::reshape(int a, int rows, int cols) {
  check(static_cast<size_t>(rows) * cols == v(a).size(), "reshape: element count mismatch");
  const int id = alloc();
  const Mat& x = v(a);
  Node& nd = n(id);
  nd.op = Op::Reshape;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  nd.val.assign(rows, cols);
  std::memcpy(nd.val.a.data(), x.a.data(), x.size() * sizeof(double));
  return id;
}

int Graph::gather_rows(int table, std::span<const int> idx) {
  const int id = alloc();
  const Mat& t = v(table);
  Node& nd = n(id);
  nd.op = Op::GatherRows;
  nd.a = table;
  nd.iaux.assign(idx.begin(), idx.end());
  nd.needs_grad = n(table).needs_grad;
  nd.val.assign(static_cast<int>(idx.size()), t.cols, 0.0);
  for (size_t i = 0; i < idx.size(); ++i) {
    const int r = idx[i];
    if (r < 0) continue;
    check(r < t.rows, "gather_rows: index out of range");
    std::memcpy(nd.val.row(static_cast<int>(i)), t.row(r),
                static_cast<size_t>(t.cols) * sizeof(double));
  }
  return id;
}

int Graph::select_row(int table, int r) {
  const int idx[1] = {r};
  return gather_rows(table, idx);
}

int Graph::broadcast_row(int a, int n_rows) {
  check(v(a).rows == 1, "broadcast_row: input must be a row");
  const int id = alloc();
  const Mat& x = v(a);
  Node& nd = n(id);
  nd.op = Op::BroadcastRow;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  nd.val.assign(n_rows, x.cols);
  for (int i = 0; i < n_rows; ++i) {
    std::memcpy(nd.val.row(i), x.a.data(), static_cast<size_t>(x.cols) * sizeof(double));
  }
  return id;
}

int Graph::masked_softmax(int a, std::span<const uint8_t> keep) {
  check(keep.size() == v(a).size(), "masked_softmax: mask size mismatch");
  const int id = alloc();
  const Mat& x = v(a);
  Node& nd = n(id);
  nd.op = Op::MaskedSoftmax;
  nd.a = a;
  nd.baux.assign(keep.begin(), keep.end());
  nd.needs_grad = n(a).needs_grad;
  nd.val.assign(x.rows, x.cols, 0.0);
  double mx = -HUGE_VAL;
  for (size_t i = 0; i < x.size(); ++i) {
    if (keep[i]) mx = std::max(mx, x.a[i]);
  }
  if (mx == -HUGE_VAL) return id;  // everything masked
  double z = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (keep[i]) {
      nd.val.a[i] = std::exp(x.a[i] - mx);
      z += nd.val.a[i];
    }
  }
  for (size_t i = 0; i < x.size(); ++i) {
    if (keep[i]) nd.val.a[i] /= z;
  }
  return id;
}

int Graph::clamp_box(int a, double lo, double hi) {
  check(lo <= hi, "clamp_box: lo > hi");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::ClampBox;
  nd.a = a;
  nd.p0 = lo;
  nd.p1 = hi;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  nd.val.assign(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) {
    nd.val.a[i] = x.a[i] < lo ? lo : (x.a[i] > hi ? hi : x.a[i]);
  }
  return id;
}

int Graph::stop_grad(int a) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::StopGrad;
  nd.a = a;
  nd.needs_grad = false;
  nd.val = v(a);
  return id;
}

int Graph::straight_through(int value_src, int grad_dst) {
  check(v(value_src).same_shape(v(grad_dst)), "straight_through: shape mismatch");
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::StraightThrough;
  nd.a = value_src;
  nd.b = grad_dst;
  nd.needs_grad = n(grad_dst).needs_grad;
  nd.val = v(value_src);
  return id;
}

int Graph::sum_all(int a) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::SumAll;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  double s = 0.0;
  for (double xv : x.a) s += xv;
  nd.val.assign(1, 1, s);
  return id;
}

int Graph::mean_all(int a) {
  const int id = alloc();
  Node& nd = n(id);
  nd.op = Op::MeanAll;
  nd.a = a;
  nd.needs_grad = n(a).needs_grad;
  const Mat& x = v(a);
  check(!x.empty(), "mean_all: empty input");
  double s = 0.0;
  for (double xv : x.a) s += xv;
  nd.val.assign(1, 1, s / static_cast<double>(x.size()));
  return id;
}

int Graph::bce_mean(int probs, std::span<const double> labels, double eps) {
  check(labels.size() == v(probs).size(), "bce_mean: label count mismatch");
  check(eps > 0.0 && eps < 0.5, "bce_mean: eps out of range");
  const int id = alloc();
  const Mat& p = v(probs);
  Node& nd = n(id);
  nd.op = Op::BceMean;
  nd.a = probs;
  nd.p0 = eps;
  nd.daux.assign(labels.begin(), labels.end());
  nd.needs_grad = n(probs).needs_grad;
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double y = labels[i];
    check(y == 0.0 || y == 1.0, "bce_mean: label not in {0,1}");
    double ph = p.a[i];
    ph = ph < eps ? eps : (ph > 1.0 - eps ? 1.0 - eps : ph);
    s += -(y * std::log(ph) + (1.0 - y) * std::log(1.0 - ph));
  }
  nd.val.assign(1, 1, s / static_cast<double>(p.size()));
  return id;
}

int Graph::masked_mse(int a, int b, std::span<const uint8_t> keep) {
  check(v(a).same_shape(v(b)), "masked_mse: shape mismatch");
  check(static_cast<int>(keep.size()) == v(a).rows, "masked_mse: mask rows mismatch");
  const int id = alloc();
  const Mat& x = v(a);
  const Mat& y = v(b);
  Node& nd = n(id);
  nd.op = Op::MaskedMse;
  nd.a = a;
  nd.b = b;
  nd.baux.assign(keep.begin(), keep.end());
  nd.needs_grad = n(a).needs_grad || n(b).needs_grad;
  int m = 0;
  double s = 0.0;
  for (int i = 0; i < x.rows; ++i) {
    if (!keep[i]) continue;
    ++m;
    s += sq_dist(x.row(i), y.row(i), x.cols);
  }
  nd.val.assign(1, 1, m == 0 ? 0.0 : s / (static_cast<double>(m) * x.cols));
  nd.p0 = m;
  return id;
}

const Mat& Graph::val(int id) const { return v(id); }

const Mat& Graph::grad(int id) const {
  const Node& nd = n(id);
  return nd.op == Op::Leaf ? *nd.ext_grad : nd.grad;
}

Mat* Graph::grad_target(int id) {
  Node& nd = n(id);
  if (!nd.needs_grad) return nullptr;
  return nd.op == Op::Leaf ? nd.ext_grad : &nd.grad;
}

void Graph::add_to_grad(int id, const Mat& g) {
  Mat* t = grad_target(id);
  if (!t) return;
  for (size_t i = 0; i < g.size(); ++i) t->a[i] += g.a[i];
}

void Graph::backward(int root, double seed) {
  check(root >= 0 && root < used_, "backward: bad root");
  check(v(root).rows == 1 && v(root).cols == 1, "backward: root must be scalar");

  for (int i = 0; i <= root; ++i) {
    Node& nd = nodes_[i];
    if (!nd.needs_grad || nd.op == Op::Leaf) continue;
    nd.grad.assign(nd.val.rows, nd.val.cols, 0.0);
  }
  {
    Mat* t = grad_target(root);
    if (!t) return;  // nothing upstream is trainable
    t->a[0] += seed;
  }

  for (int i = root; i >= 0; --i) {
    Node& nd = nodes_[i];
    if (!nd.needs_grad || nd.op == Op::Leaf || nd.op == Op::Input) continue;
    const Mat& g = nd.grad;

    switch (nd.op) {
      case Op::MatMul: {
        // C = op(A) op(B);  dA += adjoint via transposed products.
        const Mat& A = v(nd.a);
        const Mat& B = v(nd.b);
        if (Mat* ga = grad_target(nd.a)) {
          if (!nd.f0) {
            gemm(g, false, B, !nd.f1, scratch_, false);  // dC * op(B)^T
          } else {
            gemm(B, nd.f1, g, true, scratch_, false);  // (op(B) dC^T)
          }
          for (size_t k = 0; k < scratch_.size(); ++k) ga->a[k] += scratch_.a[k];
        }
        if (Mat* gb = grad_target(nd.b)) {
          if (!nd.f1) {
            gemm(A, !nd.f0, g, false, scratch_, false);
          } else {
            gemm(g, true, A, nd.f0, scratch_, false);
          }
          for (size_t k = 0; k < scratch_.size(); ++k) gb->a[k] += scratch_.a[k];
        }
        break;
      }
      case Op::Add: {
        add_to_grad(nd.a, g);
        add_to_grad(nd.b, g);
        break;
      }
      case Op::Sub: {
        add_to_grad(nd.a, g);
        if (Mat* gb = grad_target(nd.b)) {
          for (size_t k = 0; k < g.size(); ++k) gb->a[k] -= g.a[k];
        }
        break;
      }
      case Op::Mul: {
        if (Mat* ga = grad_target(nd.a)) {
          const Mat& y = v(nd.b);
          for (size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k] * y.a[k];
        }
        if (Mat* gb = grad_target(nd.b)) {
          const Mat& x = v(nd.a);
          for (size_t k = 0; k < g.size(); ++k) gb->a[k] += g.a[k] * x.a[k];
        }
        break;
      }
      case Op::AddBias: {
        add_to_grad(nd.a, g);
        if (Mat* gb = grad_target(nd.b)) {
          for (int r = 0; r < g.rows; ++r) {
            const double* gr = g.row(r);
            for (int c = 0; c < g.cols; ++c) gb->a[c] += gr[c];
          }
        }
        break;
      }
      case Op::Affine: {
        if (Mat* ga = grad_target(nd.a)) {
          for (size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k] * nd.p0;
        }
        break;
      }
      case Op::Relu: {
        if (Mat* ga = grad_target(nd.a)) {
          const Mat& x = v(nd.a);
          for (size_t k = 0; k < g.size(); ++k) {
            if (x.a[k] > 0.0) ga->a[k] += g.a[k];
          }
        }
        break;
      }
      case Op::Sigmoid: {
        if (Mat* ga = grad_target(nd.a)) {
          for (size_t k = 0; k < g.size(); ++k) {
            const double s = nd.val.a[k];
            ga->a[k] += g.a[k] * s * (1.0 - s);
          }
        }
        break;
      }
      case Op::Tanh: {
        if (Mat* ga = grad_target(nd.a)) {
          for (size_t k = 0; k < g.size(); ++k) {
            const double t = nd.val.a[k];
            ga->a[k] += g.a[k] * (1.0 - t * t);
          }
        }
        break;
      }
      case Op::ConcatCols: {
        int off = 0;
        for (int p : nd.args) {
          const int pc = v(p).cols;
          if (Mat* gp = grad_target(p)) {
            for (int r = 0; r < g.rows; ++r) {
              const double* gr = g.row(r) + off;
              double* tr = gp->row(r);
              for (int c = 0; c < pc; ++c) tr[c] += gr[c];
            }
          }
          off += pc;
        }
        break;
      }
      case Op::SliceCols: {
        if (Mat* ga = grad_target(nd.a)) {
          const int c0 = static_cast<int>(nd.p0);
          for (int r = 0; r < g.rows; ++r) {
            const double* gr = g.row(r);
            double* tr = ga->row(r) + c0;
            for (int c = 0; c < g.cols; ++c) tr[c] += gr[c];
          }
        }
        break;
      }
      case Op::Reshape: {
        if (Mat* ga = grad_target(nd.a)) {
          for (size_t k = 0; k < g.size(); ++k) ga->a[k] += g.a[k];
        }
        break;
      }
      case Op::GatherRows: {
        if (Mat* gt = grad_target(nd.a)) {
          for (size_t i = 0; i < nd.iaux.size(); ++i) {
            const int r = nd.iaux[i];
            if (r < 0) continue;
            const double* gr = g.row(static_cast<int>(i));
            double* tr = gt->row(r);
            for (int c = 0; c < g.cols; ++c) tr[c] += gr[c];
          }
        }
        break;
      }
      case Op::BroadcastRow: {
        if (Mat* ga = grad_target(nd.a)) {
          for (int r = 0; r < g.rows; ++r) {
            const double* gr = g.row(r);
            for (int c = 0; c < g.cols; ++c) ga->a[c] += gr[c];
          }
        }
        break;
      }
      case Op::MaskedSoftmax: {
        if (Mat* ga = grad_target(nd.a)) {
          const Mat& w = nd.val;
          double acc = 0.0;
          for (size_t k = 0; k < g.size(); ++k) {
            if (nd.baux[k]) acc += g.a[k] * w.a[k];
          }
          for (size_t k = 0; k < g.size(); ++k) {
            if (nd.baux[k]) ga->a[k] += w.a[k] * (g.a[k] - acc);
          }
        }
        break;
      }
      case Op::StraightThrough: {
        add_to_grad(nd.b, g);
        break;
      }
      case Op::ClampBox: {
        if (Mat* ga = grad_target(nd.a)) {
          const Mat& x = v(nd.a);
          for (size_t k = 0; k < g.size(); ++k) {
            if (x.a[k] >= nd.p0 && x.a[k] <= nd.p1) ga->a[k] += g.a[k];
          }
        }
        break;
      }
      case Op::SumAll: {
        if (Mat* ga = grad_target(nd.a)) {
          const double gv = g.a[0];
          for (size_t k = 0; k < ga->size(); ++k) ga->a[k] += gv;
        }
        break;
      }
      case Op::MeanAll: {
        if (Mat* ga = grad_target(nd.a)) {
          const double gv = g.a[0] / static_cast<double>(ga->size());
          for (size_t k = 0; k < ga->size(); ++k) ga->a[k] += gv;
        }
        break;
      }
      case Op::BceMean: {
        if (Mat* ga = grad_target(nd.a)) {
          const Mat& p = v(nd.a);
          const double inv_n = 1.0 / static_cast<double>(p.size());
          const double eps = nd.p0;
          for (size_t k = 0; k < p.size(); ++k) {
            const double pv = p.a[k];
            if (pv < eps || pv > 1.0 - eps) continue;  // clamped: flat
            const double y = nd.daux[k];
            ga->a[k] += g.a[0] * inv_n * (pv - y) / (pv * (1.0 - pv));
          }
        }
        break;
      }
      case Op::MaskedMse: {
        const int m = static_cast<int>(nd.p0);
        if (m == 0) break;
        const Mat& x = v(nd.a);
        const Mat& y = v(nd.b);
        const double c = 2.0 * g.a[0] / (static_cast<double>(m) * x.cols);
        Mat* ga = grad_target(nd.a);
        Mat* gb = grad_target(nd.b);
        for (int r = 0; r < x.rows; ++r) {
          if (!nd.baux[r]) continue;
          const double* xr = x.row(r);
          const double* yr = y.row(r);
          for (int j = 0; j < x.cols; ++j) {
            const double d = c * (xr[j] - yr[j]);
            if (ga) ga->row(r)[j] += d;
            if (gb) gb->row(r)[j] -= d;
          }
        }
        break;
      }
      case Op::Leaf:
      case Op::Input:
      case Op::StopGrad:
        break;
    }
  }
}

}  // namespace solid
