// SPDX-License-Identifier: Apache-2.0
#include "solid/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "solid/data.hpp"
#include "solid/parallel.hpp"
#include "solid/params.hpp"
#include "solid/rng.hpp"

namespace solid {

namespace fs = std::filesystem;

std::vector<Modality> modalities_from_string(const std::string& csv) {
  std::vector<Modality> out;
  std::string tok;
  std::stringstream ss(csv);
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove(tok.begin(), tok.end(), ' '), tok.end());
    if (tok.empty()) continue;
    if (tok == "id") {
      out.push_back(Modality::Id);
    } else if (tok == "image") {
      out.push_back(Modality::Image);
    } else if (tok == "text") {
      out.push_back(Modality::Text);
    } else {
      throw ConfigError("unknown modality: " + tok);
    }
  }
  if (out.empty()) throw ConfigError("modality selection is empty");
  return out;
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Id: return "id";
    case Modality::Image: return "image";
    case Modality::Text: return "text";
  }
  return "?";
}

Mat fuse_modalities(const ModalityEmbeddings& emb, const std::vector<Modality>& selection) {
  if (selection.empty()) throw ConfigError("modality selection is empty");
  std::vector<const Mat*> mats;
  for (Modality m : selection) {
    switch (m) {
      case Modality::Id: mats.push_back(&emb.id); break;
      case Modality::Image:
        if (!emb.has_image) throw DataError("image modality requested but not available");
        mats.push_back(&emb.image);
        break;
      case Modality::Text:
        if (!emb.has_text) throw DataError("text modality requested but not available");
        mats.push_back(&emb.text);
        break;
    }
  }
  const int n = mats[0]->rows;
  const int d = mats[0]->cols;
  for (const Mat* m : mats) {
    if (m->rows != n || m->cols != d) throw DataError("modality matrices are not row-aligned");
    if (!all_finite(*m)) throw DataError("modality matrix has non-finite entries");
  }
  Mat out(n, d, 0.0);
  const double inv_m = 1.0 / static_cast<double>(mats.size());
  for (int i = 0; i < n; ++i) {
    double* orow = out.row(i);
    for (const Mat* m : mats) {
      const double* r = m->row(i);
      const double nrm = l2_norm(r, d);
      if (nrm < 1e-12) continue;
      for (int j = 0; j < d; ++j) orow[j] += r[j] / nrm;
    }
    for (int j = 0; j < d; ++j) orow[j] *= inv_m;
  }
  return out;
}

void kmeans_assign_serial(const Mat& points, const Mat& centroids, std::vector<int>& out) {
  out.resize(points.rows);
  for (int i = 0; i < points.rows; ++i) {
    const double* p = points.row(i);
    int best = 0;
    double best_d = sq_dist(p, centroids.row(0), points.cols);
    for (int c = 1; c < centroids.rows; ++c) {
      const double d = sq_dist(p, centroids.row(c), points.cols);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[i] = best;
  }
}

void kmeans_assign(const Mat& points, const Mat& centroids, std::vector<int>& out, int threads) {
  out.resize(points.rows);
  par::for_n(points.rows, par::resolve_threads(threads), [&](int64_t i) {
    const double* p = points.row(static_cast<int>(i));
    int best = 0;
    double best_d = sq_dist(p, centroids.row(0), points.cols);
    for (int c = 1; c < centroids.rows; ++c) {
      const double d = sq_dist(p, centroids.row(c), points.cols);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[i] = best;
  });
}

namespace {

double wcss(const Mat& points, const Mat& centroids, const std::vector<int>& assign) {
  double s = 0.0;
  for (int i = 0; i < points.rows; ++i) {
    s += sq_dist(points.row(i), centroids.row(assign[i]), points.cols);
  }
  return s;
}

Mat kmeanspp_seed(const Mat& points, int k, Rng& rng) {
  const int n = points.rows;
  const int d = points.cols;
  Mat centroids(k, d);
  std::vector<double> dist2(n, HUGE_VAL);
  int first = rng.uniform_int(n);
  std::copy_n(points.row(first), d, centroids.row(0));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], sq_dist(points.row(i), centroids.row(c - 1), d));
      total += dist2[i];
    }
    int pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);
    }
    std::copy_n(points.row(pick), d, centroids.row(c));
  }
  return centroids;
}

}  // namespace

namespace {

SemanticMap cluster_once(const Mat& fused, int k, uint64_t seed, int max_iter, int threads);

}  // namespace

SemanticMap cluster_semantics(const Mat& fused, int k, uint64_t seed, int max_iter, int threads) {
  // A few seeded restarts; the lowest final objective wins. Ties keep the
  // earliest restart so the result stays deterministic.
  constexpr int kRestarts = 4;
  Rng root(seed);
  SemanticMap best;
  for (int r = 0; r < kRestarts; ++r) {
    SemanticMap cand = cluster_once(fused, k, root.fork(static_cast<uint64_t>(r)).next_u64(),
                                    max_iter, threads);
    if (r == 0 || cand.wcss_history.back() < best.wcss_history.back()) {
      best = std::move(cand);
    }
  }
  return best;
}

namespace {

SemanticMap cluster_once(const Mat& fused, int k, uint64_t seed, int max_iter, int threads) {
  const int n = fused.rows;
  const int d = fused.cols;
  if (k < 1) throw ConfigError("semantic count must be >= 1");
  if (k > n) throw ConfigError("semantic count " + std::to_string(k) + " exceeds item count " +
                               std::to_string(n));
  Rng rng(seed);
  Mat centroids = kmeanspp_seed(fused, k, rng);

  SemanticMap map;
  map.k = k;
  std::vector<int> assign(n, 0);
  std::vector<int> counts(k, 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    kmeans_assign(fused, centroids, assign, threads);
    map.wcss_history.push_back(wcss(fused, centroids, assign));

    std::fill(counts.begin(), counts.end(), 0);
    Mat sums(k, d, 0.0);
    for (int i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const double* p = fused.row(i);
      double* s = sums.row(assign[i]);
      for (int j = 0; j < d; ++j) s[j] += p[j];
    }
    Mat next(k, d);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        const double inv = 1.0 / counts[c];
        for (int j = 0; j < d; ++j) next(c, j) = sums(c, j) * inv;
      } else {
        std::copy_n(centroids.row(c), d, next.row(c));
      }
    }
    // Empty clusters grab the point currently farthest from its centroid.
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int far = 0;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        const double dd = sq_dist(fused.row(i), next.row(assign[i]), d);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      std::copy_n(fused.row(far), d, next.row(c));
      assign[far] = c;
    }
    const bool converged = bitwise_equal(next, centroids) && iter > 0;
    centroids = std::move(next);
    if (converged) break;
  }
  kmeans_assign(fused, centroids, assign, threads);
  map.wcss_history.push_back(wcss(fused, centroids, assign));

  std::fill(counts.begin(), counts.end(), 0);
  for (int a : assign) ++counts[a];
  map.centroids = std::move(centroids);
  map.counts = std::move(counts);
  map.assignment.resize(n);
  for (int i = 0; i < n; ++i) map.assignment[i] = assign[i] + 1;
  return map;
}

}  // namespace

CategoryCentroids category_centroids(const Mat& fused,
                                     const std::vector<std::vector<int>>& item_categories) {
  if (static_cast<int>(item_categories.size()) != fused.rows) {
    throw DataError("category map does not cover all items");
  }
  int max_label = -1;
  for (size_t v = 0; v < item_categories.size(); ++v) {
    if (item_categories[v].empty()) {
      throw DataError("item " + std::to_string(v) + " has no category label");
    }
    for (int c : item_categories[v]) max_label = std::max(max_label, c);
  }
  const int d = fused.cols;
  Mat sums(max_label + 1, d, 0.0);
  std::vector<int> counts(max_label + 1, 0);
  for (size_t v = 0; v < item_categories.size(); ++v) {
    for (int c : item_categories[v]) {
      ++counts[c];
      const double* p = fused.row(static_cast<int>(v));
      double* s = sums.row(c);
      for (int j = 0; j < d; ++j) s[j] += p[j];
    }
  }
  CategoryCentroids out;
  for (int c = 0; c <= max_label; ++c) {
    if (counts[c] == 0) {
      out.skipped.push_back(c);
      continue;
    }
    const int row = out.centroids.rows;
    Mat grown(row + 1, d);
    if (row > 0) std::copy(out.centroids.a.begin(), out.centroids.a.end(), grown.a.begin());
    const double inv = 1.0 / counts[c];
    for (int j = 0; j < d; ++j) grown(row, j) = sums(c, j) * inv;
    out.centroids = std::move(grown);
    out.counts.push_back(counts[c]);
    out.labels.push_back(c);
  }
  for (int c : out.skipped) {
    std::cerr << "warning: category " << c << " has no members; excluded\n";
  }
  return out;
}

std::vector<int> assign_primary_category(const Mat& fused, const Mat& centroids, int threads) {
  if (centroids.rows == 0) throw DataError("no centroids to assign against");
  std::vector<int> zero_based;
  kmeans_assign(fused, centroids, zero_based, threads);
  std::vector<int> out(zero_based.size());
  for (size_t i = 0; i < zero_based.size(); ++i) out[i] = zero_based[i] + 1;
  return out;
}

SemanticMap semantic_map_from_categories(const Mat& fused,
                                         const std::vector<std::vector<int>>& item_categories) {
  CategoryCentroids cc = category_centroids(fused, item_categories);
  SemanticMap map;
  map.k = cc.centroids.rows;
  map.centroids = cc.centroids;
  map.counts = cc.counts;
  map.assignment = assign_primary_category(fused, cc.centroids);
  return map;
}

std::vector<int> lift_sequence(const std::vector<int>& item_seq, const SemanticMap& map) {
  std::vector<int> out(item_seq.size(), 0);
  for (size_t i = 0; i < item_seq.size(); ++i) {
    const int v = item_seq[i];
    if (v == 0) continue;
    const int dense = v - 1;
    if (dense < 0 || dense >= static_cast<int>(map.assignment.size())) {
      throw DataError("item id " + std::to_string(v) + " has no semantic assignment");
    }
    out[i] = map.assignment[dense];
  }
  return out;
}

void lift_dataset(std::vector<Sample>& samples, const SemanticMap& map) {
  for (Sample& s : samples) {
    s.sem_seq = lift_sequence(s.item_seq, map);
    const int dense = s.target_item - 1;
    if (dense < 0 || dense >= static_cast<int>(map.assignment.size())) {
      throw DataError("target item " + std::to_string(s.target_item) +
                      " has no semantic assignment");
    }
    s.target_sem = map.assignment[dense];
  }
}

int default_semantic_count(int item_vocab) {
  return std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(item_vocab)))));
}

void save_semantic_map(const std::string& dir, const SemanticMap& map) {
  fs::create_directories(dir);
  std::ofstream out(dir + "/semantic_map.tsv");
  for (size_t v = 0; v < map.assignment.size(); ++v) out << v << '\t' << map.assignment[v] << '\n';
  if (!out) throw DataError("cannot write semantic map in " + dir);
  save_mat(dir + "/semantic_centroids.ten", map.centroids);
}

SemanticMap load_semantic_map(const std::string& dir) {
  SemanticMap map;
  std::ifstream in(dir + "/semantic_map.tsv");
  if (!in) throw DataError("missing semantic map in " + dir);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    map.assignment.push_back(std::stoi(line.substr(tab + 1)));
  }
  map.centroids = load_mat(dir + "/semantic_centroids.ten");
  map.k = map.centroids.rows;
  map.counts.assign(map.k, 0);
  for (int a : map.assignment) {
    if (a >= 1 && a <= map.k) ++map.counts[a - 1];
  }
  return map;
}

void save_modality_matrix(const std::string& path, const Mat& m, const std::string& tag) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << m.rows << ' ' << m.cols << ' ' << tag << '\n';
  out.precision(17);
  for (int i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    for (int j = 0; j < m.cols; ++j) {
      if (j) out << ' ';
      out << r[j];
    }
    out << '\n';
  }
  if (!out) throw DataError("short write to " + path);
}

Mat load_modality_matrix(const std::string& path, std::string* tag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  int rows = 0, cols = 0;
  std::string t;
  in >> rows >> cols >> t;
  if (!in || rows <= 0 || cols <= 0) throw DataError("bad modality header in " + path);
  if (tag) *tag = t;
  Mat m(rows, cols);
  for (size_t i = 0; i < m.a.size(); ++i) in >> m.a[i];
  if (!in) throw DataError("truncated modality matrix in " + path);
  return m;
}

Mat id_modality_matrix(int item_vocab, int dim, uint64_t id_seed) {
  Mat m(item_vocab, dim);
  for (int v = 0; v < item_vocab; ++v) {
    Rng row(Rng::splitmix(id_seed ^ (0x1d000000ull + static_cast<uint64_t>(v))));
    double* r = m.row(v);
    for (int j = 0; j < dim; ++j) r[j] = row.normal();
  }
  return m;
}

ModalityEmbeddings load_modalities(const std::string& dir, int item_vocab, int dim,
                                   uint64_t id_seed) {
  ModalityEmbeddings emb;
  const std::string img = dir + "/modality_image.txt";
  const std::string txt = dir + "/modality_text.txt";
  const std::string idp = dir + "/modality_id.txt";
  if (fs::exists(idp)) {
    emb.id = load_modality_matrix(idp);
  } else {
    emb.id = id_modality_matrix(item_vocab, dim, id_seed);
  }
  if (fs::exists(img)) {
    emb.image = load_modality_matrix(img);
    emb.has_image = true;
  }
  if (fs::exists(txt)) {
    emb.text = load_modality_matrix(txt);
    emb.has_text = true;
  }
  if (emb.id.rows != item_vocab) throw DataError("id modality rows do not match item vocab");
  if (emb.has_image && emb.image.rows != item_vocab) {
    throw DataError("image modality rows do not match item vocab");
  }
  if (emb.has_text && emb.text.rows != item_vocab) {
    throw DataError("text modality rows do not match item vocab");
  }
  return emb;
}

}  // namespace solid
