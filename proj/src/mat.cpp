// SPDX-License-Identifier: Apache-2.0
#include "solid/mat.hpp"

#include <cmath>
#include <cstring>

namespace solid {

void gemm(const Mat& A, bool ta, const Mat& B, bool tb, Mat& out, bool acc) {
  const int m = ta ? A.cols : A.rows;
  const int k = ta ? A.rows : A.cols;
  const int kb = tb ? B.cols : B.rows;
  const int n = tb ? B.rows : B.cols;
  if (k != kb) {
    throw std::runtime_error("gemm: inner dimensions " + std::to_string(k) + " vs " +
                             std::to_string(kb));
  }
  if (!acc) {
    out.assign(m, n, 0.0);
  } else if (out.rows != m || out.cols != n) {
    throw std::runtime_error("gemm: accumulate target has wrong shape");
  }

  // Loop orders chosen so the innermost loop always streams contiguously.
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = A.row(i);
      double* orow = out.row(i);
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = B.row(p);
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const double* arow = A.row(p);
      const double* brow = B.row(p);
      for (int i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* orow = out.row(i);
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = A.row(i);
      double* orow = out.row(i);
      for (int j = 0; j < n; ++j) orow[j] += dot(arow, B.row(j), k);
    }
  } else {  // ta && tb
    for (int i = 0; i < m; ++i) {
      double* orow = out.row(i);
      for (int p = 0; p < k; ++p) {
        const double av = A(p, i);
        if (av == 0.0) continue;
        for (int j = 0; j < n; ++j) orow[j] += av * B(j, p);
      }
    }
  }
}

double dot(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sq_dist(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

double l2_norm(const double* x, int n) { return std::sqrt(dot(x, x, n)); }

bool all_finite(const Mat& m) {
  for (double v : m.a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs(const Mat& m) {
  double r = 0.0;
  for (double v : m.a) r = std::max(r, std::fabs(v));
  return r;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw std::runtime_error("max_abs_diff: shape mismatch");
  double r = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i) r = std::max(r, std::fabs(a.a[i] - b.a[i]));
  return r;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) return false;
  return a.a.empty() || std::memcmp(a.a.data(), b.a.data(), a.a.size() * sizeof(double)) == 0;
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t checksum(const Mat& m) {
  uint64_t h = fnv1a(&m.rows, sizeof(m.rows));
  h = fnv1a(&m.cols, sizeof(m.cols), h);
  if (!m.a.empty()) h = fnv1a(m.a.data(), m.a.size() * sizeof(double), h);
  return h;
}

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace solid
