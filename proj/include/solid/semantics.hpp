// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "solid/errors.hpp"
#include "solid/mat.hpp"

namespace solid {

enum class Modality { Id, Image, Text };

std::vector<Modality> modalities_from_string(const std::string& csv);
std::string modality_name(Modality m);

/// Per-item vectors for each available modality, row-aligned to dense item
/// ids. The id modality is always present; image/text are optional.
struct ModalityEmbeddings {
  Mat id;
  Mat image;
  Mat text;
  bool has_image = false;
  bool has_text = false;

  int item_count() const { return id.rows; }
  int dim() const { return id.cols; }
};

/// Item -> semantic assignment (ids 1..k) plus the centroids that induced
/// it. wcss_history records the clustering objective per iteration when the
/// map came from cluster_semantics.
struct SemanticMap {
  std::vector<int> assignment;  // dense item id -> semantic in 1..k
  Mat centroids;                // k x dim
  std::vector<int> counts;
  int k = 0;
  std::vector<double> wcss_history;
};

/// Mean of the L2-normalized rows of the selected modalities. Zero rows
/// stay zero.
Mat fuse_modalities(const ModalityEmbeddings& emb, const std::vector<Modality>& selection);

/// Nearest-centroid assignment over rows of `points`; returns 0-based
/// centroid indices, ties to the lowest index.
void kmeans_assign(const Mat& points, const Mat& centroids, std::vector<int>& out, int threads);
void kmeans_assign_serial(const Mat& points, const Mat& centroids, std::vector<int>& out);

/// k-means with k-means++ seeding; empty clusters are reseeded from the
/// point farthest from its assigned centroid. Deterministic under seed.
SemanticMap cluster_semantics(const Mat& fused, int k, uint64_t seed, int max_iter,
                              int threads = 0);

struct CategoryCentroids {
  Mat centroids;             // one row per non-empty category
  std::vector<int> counts;   // members per kept category
  std::vector<int> labels;   // original category label per row
  std::vector<int> skipped;  // labels of empty categories
};

/// Per-category mean of member embeddings; items in several categories
/// contribute to each.
CategoryCentroids category_centroids(const Mat& fused,
                                     const std::vector<std::vector<int>>& item_categories);

/// argmin over Euclidean distance to the centroids; returns semantic ids
/// 1..k, ties to the lowest index.
std::vector<int> assign_primary_category(const Mat& fused, const Mat& centroids, int threads = 0);

SemanticMap semantic_map_from_categories(const Mat& fused,
                                         const std::vector<std::vector<int>>& item_categories);

/// Positionwise substitution of shifted item ids with semantic ids;
/// padding 0 maps to 0.
std::vector<int> lift_sequence(const std::vector<int>& item_seq, const SemanticMap& map);

/// Fills sem_seq (and checks coverage) for every sample in place.
void lift_dataset(std::vector<struct Sample>& samples, const SemanticMap& map);

int default_semantic_count(int item_vocab);

void save_semantic_map(const std::string& dir, const SemanticMap& map);
SemanticMap load_semantic_map(const std::string& dir);

/// Matrix file with a text header "rows cols tag" followed by one row per
/// line of space-separated values.
void save_modality_matrix(const std::string& path, const Mat& m, const std::string& tag);
Mat load_modality_matrix(const std::string& path, std::string* tag = nullptr);

ModalityEmbeddings load_modalities(const std::string& dir, int item_vocab, int dim,
                                   uint64_t id_seed);

/// Deterministic id-derived vectors: row v is seeded by (id_seed, v).
Mat id_modality_matrix(int item_vocab, int dim, uint64_t id_seed);

}  // namespace solid
