// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace solid {

/// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 matrices;
/// scalars are 1x1. Reassigning through assign() reuses capacity, which
/// keeps per-sample graph rebuilds allocation-free after warmup.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  size_t size() const { return static_cast<size_t>(rows) * cols; }
  bool empty() const { return rows == 0 || cols == 0; }

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

  void assign(int r, int c, double fill = 0.0) {
    rows = r;
    cols = c;
    a.assign(static_cast<size_t>(r) * c, fill);
  }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

/// out = op(A) * op(B), where op transposes when the flag is set.
/// With acc=true the product is added to out (out must be pre-shaped).
void gemm(const Mat& A, bool ta, const Mat& B, bool tb, Mat& out, bool acc);

double dot(const double* x, const double* y, int n);
double sq_dist(const double* x, const double* y, int n);
double l2_norm(const double* x, int n);

bool all_finite(const Mat& m);
double max_abs(const Mat& m);
double max_abs_diff(const Mat& a, const Mat& b);
bool bitwise_equal(const Mat& a, const Mat& b);

/// FNV-1a over the raw bytes; used for checksum-style determinism checks.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t checksum(const Mat& m);

std::string shape_str(const Mat& m);

}  // namespace solid
