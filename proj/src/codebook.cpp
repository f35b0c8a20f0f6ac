// SPDX-License-Identifier: Apache-2.0
#include "solid/codebook.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "solid/errors.hpp"
#include "solid/parallel.hpp"
#include "solid/params.hpp"

namespace solid {

SemanticCodebook init_from_metacode(const Mat& metacode) {
  if (metacode.rows < 1 || metacode.cols < 1) throw ConfigError("metacode is empty");
  if (!all_finite(metacode)) throw ConfigError("metacode has non-finite entries");
  SemanticCodebook cb;
  cb.D = metacode;  // deep copy by value semantics
  return cb;
}

namespace {

inline int nearest_row(const double* e, const Mat& D) {
  int best = 0;
  double best_d = sq_dist(e, D.row(0), D.cols);
  for (int c = 1; c < D.rows; ++c) {
    const double d = sq_dist(e, D.row(c), D.cols);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

void quantize_serial(const Mat& E, const Mat& D, std::span<const uint8_t> keep, Mat& out,
                     std::vector<int>& indices) {
  if (E.cols != D.cols) throw ConfigError("quantize: width mismatch");
  if (static_cast<int>(keep.size()) != E.rows) throw ConfigError("quantize: mask size mismatch");
  out = E;
  indices.assign(E.rows, -1);
  for (int j = 0; j < E.rows; ++j) {
    if (!keep[j]) continue;
    const int c = nearest_row(E.row(j), D);
    indices[j] = c;
    std::copy_n(D.row(c), D.cols, out.row(j));
  }
}

void quantize(const Mat& E, const Mat& D, std::span<const uint8_t> keep, Mat& out,
              std::vector<int>& indices, int threads) {
  if (E.cols != D.cols) throw ConfigError("quantize: width mismatch");
  if (static_cast<int>(keep.size()) != E.rows) throw ConfigError("quantize: mask size mismatch");
  out = E;
  indices.assign(E.rows, -1);
  par::for_n(E.rows, par::resolve_threads(threads), [&](int64_t j) {
    if (!keep[j]) return;
    const int c = nearest_row(E.row(static_cast<int>(j)), D);
    indices[j] = c;
    std::copy_n(D.row(c), D.cols, out.row(static_cast<int>(j)));
  });
}

void nearest_codes(const Mat& E, const Mat& D, std::span<const uint8_t> keep,
                   std::vector<int>& indices) {
  indices.assign(E.rows, -1);
  for (int j = 0; j < E.rows; ++j) {
    if (keep[j]) indices[j] = nearest_row(E.row(j), D);
  }
}

double commitment_loss(const Mat& E, const Mat& Eq, std::span<const uint8_t> keep,
                       bool* all_pad) {
  if (!E.same_shape(Eq)) throw ConfigError("commitment_loss: shape mismatch");
  if (static_cast<int>(keep.size()) != E.rows) {
    throw ConfigError("commitment_loss: mask size mismatch");
  }
  int m = 0;
  double s = 0.0;
  for (int j = 0; j < E.rows; ++j) {
    if (!keep[j]) continue;
    ++m;
    s += sq_dist(E.row(j), Eq.row(j), E.cols);
  }
  if (all_pad) *all_pad = m == 0;
  return m == 0 ? 0.0 : s / (static_cast<double>(m) * E.cols);
}

CodebookUsage codebook_usage(std::span<const int> indices, int n_codes) {
  CodebookUsage u;
  u.counts.assign(n_codes, 0);
  for (int i : indices) {
    if (i >= 0 && i < n_codes) ++u.counts[i];
  }
  for (int c = 0; c < n_codes; ++c) {
    if (u.counts[c] == 0) u.dead.push_back(c);
  }
  return u;
}

QuantizedNodes build_quantized_rows(Graph& g, int e_node, int d_leaf,
                                    std::span<const int> indices, bool straight_through) {
  QuantizedNodes out;
  out.raw = g.gather_rows(d_leaf, indices);
  out.branch_input = straight_through ? g.straight_through(out.raw, e_node) : out.raw;
  return out;
}

void save_codebook(const std::string& dir, const SemanticCodebook& cb, uint64_t source_checksum) {
  std::filesystem::create_directories(dir);
  save_mat(dir + "/codebook.ten", cb.D);
  nlohmann::json j;
  j["n_codes"] = cb.n_codes();
  j["dim"] = cb.dim();
  j["source_encoder_checksum"] = source_checksum;
  std::ofstream out(dir + "/codebook.json");
  out << j.dump(2) << "\n";
  if (!out) throw ConfigError("cannot write codebook manifest in " + dir);
}

SemanticCodebook load_codebook(const std::string& dir, uint64_t* source_checksum) {
  SemanticCodebook cb;
  cb.D = load_mat(dir + "/codebook.ten");
  std::ifstream in(dir + "/codebook.json");
  if (in) {
    nlohmann::json j = nlohmann::json::parse(in);
    if (source_checksum) *source_checksum = j.value("source_encoder_checksum", 0ull);
  } else if (source_checksum) {
    *source_checksum = 0;
  }
  return cb;
}

}  // namespace solid
