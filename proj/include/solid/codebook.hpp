// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "solid/graph.hpp"
#include "solid/mat.hpp"

namespace solid {

/// The semantic codebook: n_codes code vectors of the generator feature
/// width.
struct SemanticCodebook {
  Mat D;
  int n_codes() const { return D.rows; }
  int dim() const { return D.cols; }
};

/// Independent copy of the metacode; later codebook updates never touch
/// the encoder it came from.
SemanticCodebook init_from_metacode(const Mat& metacode);

/// Nearest-neighbor replacement. For every row j with keep[j] != 0,
/// indices[j] = argmin_c ||E_j - D_c|| (ties to the lowest index) and the
/// output row is a copy of that code. Padding rows pass through unchanged
/// with index -1.
void quantize(const Mat& E, const Mat& D, std::span<const uint8_t> keep, Mat& out,
              std::vector<int>& indices, int threads = 0);
void quantize_serial(const Mat& E, const Mat& D, std::span<const uint8_t> keep, Mat& out,
                     std::vector<int>& indices);

/// Row-wise argmin only (no replacement matrix); used inside graph builds.
void nearest_codes(const Mat& E, const Mat& D, std::span<const uint8_t> keep,
                   std::vector<int>& indices);

/// Mean squared elementwise difference over non-pad rows. All-pad input
/// returns 0 and sets the flag when given.
double commitment_loss(const Mat& E, const Mat& Eq, std::span<const uint8_t> keep,
                       bool* all_pad = nullptr);

struct CodebookUsage {
  std::vector<long long> counts;
  std::vector<int> dead;
};

CodebookUsage codebook_usage(std::span<const int> indices, int n_codes);

/// Graph nodes for the quantized branch. `raw` is the plain gather from
/// the codebook (the commitment target, differentiable into D).
/// `branch_input` forward-equals raw; with straight_through its CE-path
/// gradient is copied to E and the codebook sees no CE gradient, without
/// it branch_input is raw itself and the gradient flows into D as the
/// expression reads.
struct QuantizedNodes {
  int raw = -1;
  int branch_input = -1;
};

QuantizedNodes build_quantized_rows(Graph& g, int e_node, int d_leaf,
                                    std::span<const int> indices, bool straight_through);

void save_codebook(const std::string& dir, const SemanticCodebook& cb, uint64_t source_checksum);
SemanticCodebook load_codebook(const std::string& dir, uint64_t* source_checksum = nullptr);

}  // namespace solid
