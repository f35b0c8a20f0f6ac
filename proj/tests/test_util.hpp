// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "solid/params.hpp"
#include "solid/rng.hpp"

namespace solid::testutil {

inline Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.a) v = scale * rng.normal();
  return m;
}

inline void fill_random(ParamStore& ps, Rng& rng, double scale = 0.3) {
  for (int i = 0; i < ps.count(); ++i) {
    for (double& v : ps.value(i).a) v = scale * rng.normal();
  }
}

struct FdReport {
  double worst_rel = 0.0;
  std::string worst_tensor;
};

/// Central finite differences against one backward pass. The builder must
/// construct a scalar root from the current parameter values. Relative
/// error is per-tensor: ||fd - analytic|| / max(||fd||, ||analytic||, tiny).
inline FdReport fd_check(ParamStore& ps, const std::function<int(Graph&, Binder&)>& build,
                         double h = 1e-5) {
  GradStore grads;
  grads.match(ps);
  grads.zero();
  {
    Graph g;
    Binder b(ps, &grads);
    const int root = build(g, b);
    g.backward(root, 1.0);
  }
  auto eval = [&]() {
    Graph g;
    Binder b(ps, nullptr);
    const int root = build(g, b);
    return g.val(root).a[0];
  };

  FdReport rep;
  for (int p = 0; p < ps.count(); ++p) {
    Mat& m = ps.value(p);
    double num = 0.0, den_fd = 0.0, den_an = 0.0;
    for (size_t i = 0; i < m.a.size(); ++i) {
      const double orig = m.a[i];
      m.a[i] = orig + h;
      const double fp = eval();
      m.a[i] = orig - h;
      const double fm = eval();
      m.a[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = grads.g[p].a[i];
      num += (fd - an) * (fd - an);
      den_fd += fd * fd;
      den_an += an * an;
    }
    const double denom = std::max({std::sqrt(den_fd), std::sqrt(den_an), 1e-8});
    const double rel = std::sqrt(num) / denom;
    if (rel > rep.worst_rel) {
      rep.worst_rel = rel;
      rep.worst_tensor = ps.name(p);
    }
  }
  return rep;
}

/// Singular values via one-sided Jacobi; good enough for small matrices.
inline std::vector<double> singular_values(Mat a) {
  const int m = a.rows, n = a.cols;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0, aqq = 0, apq = 0;
        for (int i = 0; i < m; ++i) {
          app += a(i, p) * a(i, p);
          aqq += a(i, q) * a(i, q);
          apq += a(i, p) * a(i, q);
        }
        off += apq * apq;
        if (std::fabs(apq) < 1e-15) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (int i = 0; i < m; ++i) {
          const double vp = a(i, p), vq = a(i, q);
          a(i, p) = c * vp - s * vq;
          a(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off < 1e-24) break;
  }
  std::vector<double> sv(n, 0.0);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

}  // namespace solid::testutil
