// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "solid/codebook.hpp"
#include "solid/params.hpp"
#include "test_util.hpp"

using namespace solid;
using testutil::random_mat;

TEST_CASE("init_from_metacode makes an equal but independent copy") {
  Rng rng(1);
  Mat meta = random_mat(4, 3, rng);
  SemanticCodebook cb = init_from_metacode(meta);
  CHECK(bitwise_equal(cb.D, meta));
  cb.D(2, 1) += 5.0;
  CHECK(meta(2, 1) != cb.D(2, 1));  // the source is untouched

  Mat ident(3, 3, 0.0);
  for (int i = 0; i < 3; ++i) ident(i, i) = 1.0;
  CHECK(bitwise_equal(init_from_metacode(ident).D, ident));
}

TEST_CASE("quantize replaces rows with their nearest codes") {
  Mat codes(5, 2);
  for (int c = 0; c < 5; ++c) {
    codes(c, 0) = c;
    codes(c, 1) = 0;
  }
  Mat e(3, 2);
  e.a = {4.0, 0.0,   // exactly code 4
         2.0, 0.0,   // exactly code 2
         1.5, 0.0};  // tie between 1 and 2 -> lowest index
  std::vector<uint8_t> keep = {1, 1, 1};
  Mat out;
  std::vector<int> idx;
  quantize(e, codes, keep, out, idx);
  CHECK(idx == std::vector<int>{4, 2, 1});
  CHECK(out(0, 0) == 4.0);
  CHECK(out(2, 0) == 1.0);
}

TEST_CASE("padding rows pass through with index -1") {
  Rng rng(2);
  const Mat codes = random_mat(4, 3, rng);
  const Mat e = random_mat(3, 3, rng);
  std::vector<uint8_t> keep = {0, 1, 0};
  Mat out;
  std::vector<int> idx;
  quantize(e, codes, keep, out, idx);
  CHECK(idx[0] == -1);
  CHECK(idx[2] == -1);
  for (int j = 0; j < 3; ++j) {
    CHECK(out(0, j) == e(0, j));
    CHECK(out(2, j) == e(2, j));
  }
}

TEST_CASE("quantize matches an exhaustive scan on random instances") {
  Rng rng(3);
  const Mat codes = random_mat(16, 5, rng);
  const Mat e = random_mat(64, 5, rng);
  std::vector<uint8_t> keep(64, 1);
  Mat out;
  std::vector<int> idx;
  quantize(e, codes, keep, out, idx, 2);
  for (int j = 0; j < 64; ++j) {
    int best = 0;
    double bd = HUGE_VAL;
    for (int c = 0; c < 16; ++c) {
      const double d = sq_dist(e.row(j), codes.row(c), 5);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    CHECK(idx[j] == best);
    for (int col = 0; col < 5; ++col) CHECK(out(j, col) == codes(best, col));
  }
}

TEST_CASE("quantize parallel equals serial bitwise") {
  Rng rng(4);
  const Mat codes = random_mat(12, 6, rng);
  const Mat e = random_mat(200, 6, rng);
  std::vector<uint8_t> keep(200, 1);
  for (int i = 0; i < 200; i += 7) keep[i] = 0;
  Mat out_p, out_s;
  std::vector<int> idx_p, idx_s;
  quantize(e, codes, keep, out_p, idx_p, 2);
  quantize_serial(e, codes, keep, out_s, idx_s);
  CHECK(idx_p == idx_s);
  CHECK(bitwise_equal(out_p, out_s));
}

TEST_CASE("quantize is idempotent and lands on codebook rows") {
  Rng rng(5);
  const Mat codes = random_mat(8, 4, rng);
  const Mat e = random_mat(20, 4, rng);
  std::vector<uint8_t> keep(20, 1);
  Mat out, out2;
  std::vector<int> idx, idx2;
  quantize(e, codes, keep, out, idx);
  quantize(out, codes, keep, out2, idx2);
  CHECK(idx == idx2);
  CHECK(bitwise_equal(out, out2));
  for (int j = 0; j < 20; ++j) {
    bool is_code_row = false;
    for (int c = 0; c < 8; ++c) {
      if (std::memcmp(out.row(j), codes.row(c), 4 * sizeof(double)) == 0) is_code_row = true;
    }
    CHECK(is_code_row);
  }
}

TEST_CASE("nearest-neighbor assignment minimizes the commitment loss") {
  Rng rng(6);
  const Mat codes = random_mat(4, 3, rng);
  const Mat e = random_mat(5, 3, rng);
  std::vector<uint8_t> keep(5, 1);
  Mat out;
  std::vector<int> idx;
  quantize(e, codes, keep, out, idx);
  const double best = commitment_loss(e, out, keep);
  // enumerate every alternative per-position assignment (4^5 of them)
  for (int mask = 0; mask < 4 * 4 * 4 * 4 * 4; ++mask) {
    int m = mask;
    Mat alt(5, 3);
    for (int j = 0; j < 5; ++j) {
      const int c = m % 4;
      m /= 4;
      std::copy_n(codes.row(c), 3, alt.row(j));
    }
    CHECK(commitment_loss(e, alt, keep) >= best - 1e-12);
  }
}

TEST_CASE("commitment_loss closed forms") {
  Mat a(1, 2), b(1, 2);
  a.a = {3.0, 4.0};
  b.a = {0.0, 0.0};
  std::vector<uint8_t> keep = {1};
  CHECK(commitment_loss(a, b, keep) == doctest::Approx(12.5));
  CHECK(commitment_loss(a, a, keep) == 0.0);

  bool all_pad = false;
  std::vector<uint8_t> none = {0};
  CHECK(commitment_loss(a, b, none, &all_pad) == 0.0);
  CHECK(all_pad);
}

TEST_CASE("commitment_loss matches a scalar double loop") {
  Rng rng(7);
  const Mat a = random_mat(9, 4, rng);
  const Mat b = random_mat(9, 4, rng);
  std::vector<uint8_t> keep(9);
  for (auto& k : keep) k = rng.uniform() < 0.6;
  keep[0] = 1;  // at least one kept row
  double sum = 0.0;
  int m = 0;
  for (int i = 0; i < 9; ++i) {
    if (!keep[i]) continue;
    ++m;
    for (int j = 0; j < 4; ++j) {
      const double d = a(i, j) - b(i, j);
      sum += d * d;
    }
  }
  CHECK(commitment_loss(a, b, keep) == doctest::Approx(sum / (m * 4)).epsilon(1e-14));
}

TEST_CASE("moving a code toward the mean of its queries lowers the distance") {
  Rng rng(8);
  const Mat codes = random_mat(3, 2, rng);
  const Mat e = random_mat(12, 2, rng);
  std::vector<uint8_t> keep(12, 1);
  Mat out;
  std::vector<int> idx;
  quantize(e, codes, keep, out, idx);
  const double before = commitment_loss(e, out, keep);

  // one k-means-style step on code 0's members, assignment held fixed
  Mat moved = codes;
  int n0 = 0;
  std::vector<double> mean(2, 0.0);
  for (int j = 0; j < 12; ++j) {
    if (idx[j] == 0) {
      ++n0;
      for (int c = 0; c < 2; ++c) mean[c] += e(j, c);
    }
  }
  if (n0 > 0) {
    for (int c = 0; c < 2; ++c) moved(0, c) = mean[c] / n0;
    Mat out2(12, 2);
    for (int j = 0; j < 12; ++j) std::copy_n(moved.row(idx[j]), 2, out2.row(j));
    CHECK(commitment_loss(e, out2, keep) <= before + 1e-12);
  }
}

TEST_CASE("codebook usage histogram and dead codes") {
  const std::vector<int> all_zero = {0, 0, 0, -1, 0};
  const CodebookUsage u = codebook_usage(all_zero, 3);
  CHECK(u.counts[0] == 4);
  CHECK(u.counts[1] == 0);
  CHECK(u.dead == std::vector<int>{1, 2});

  const CodebookUsage empty = codebook_usage(std::vector<int>{}, 3);
  CHECK(empty.dead.size() == 3);

  // near-uniform planted queries touch every code
  Rng rng(9);
  const Mat codes = random_mat(6, 3, rng, 5.0);
  Mat queries(60, 3);
  for (int i = 0; i < 60; ++i) {
    const int c = i % 6;
    for (int j = 0; j < 3; ++j) queries(i, j) = codes(c, j) + 0.01 * rng.normal();
  }
  std::vector<uint8_t> keep(60, 1);
  Mat out;
  std::vector<int> idx;
  quantize(queries, codes, keep, out, idx);
  const CodebookUsage planted = codebook_usage(idx, 6);
  CHECK(planted.dead.empty());
  for (long long c : planted.counts) CHECK(c == 10);
}

TEST_CASE("straight-through routes CE gradients to E, plain gather to D") {
  Rng rng(10);
  ParamStore ps;
  ps.add("e", 3, 2);
  ps.add("d", 4, 2);
  testutil::fill_random(ps, rng, 0.8);
  const std::vector<int> idx = {2, -1, 0};

  auto grads_for = [&](bool st) {
    GradStore grads;
    grads.match(ps);
    grads.zero();
    Graph g;
    Binder b(ps, &grads);
    const auto q = build_quantized_rows(g, b.leaf(g, "e"), b.leaf(g, "d"), idx, st);
    g.backward(g.sum_all(q.branch_input));
    return grads;
  };

  const GradStore st = grads_for(true);
  // every gradient lands on E (ones), none on D
  for (int j = 0; j < 2; ++j) {
    CHECK(st.g[0](0, j) == 1.0);
    CHECK(st.g[0](1, j) == 1.0);
    CHECK(st.g[0](2, j) == 1.0);
  }
  for (double v : st.g[1].a) CHECK(v == 0.0);

  const GradStore plain = grads_for(false);
  for (double v : plain.g[0].a) CHECK(v == 0.0);
  CHECK(plain.g[1](2, 0) == 1.0);  // gathered rows receive the gradient
  CHECK(plain.g[1](0, 0) == 1.0);
  CHECK(plain.g[1](1, 0) == 0.0);

  // forward values agree bitwise between the two modes
  Graph g;
  Binder b(ps, nullptr);
  const auto q1 = build_quantized_rows(g, b.leaf(g, "e"), b.leaf(g, "d"), idx, true);
  const auto q2 = build_quantized_rows(g, b.leaf(g, "e"), b.leaf(g, "d"), idx, false);
  CHECK(bitwise_equal(g.val(q1.branch_input), g.val(q2.branch_input)));
  CHECK(bitwise_equal(g.val(q1.branch_input), g.val(q1.raw)));
}

TEST_CASE("codebook round-trips through disk with its source checksum") {
  Rng rng(11);
  SemanticCodebook cb;
  cb.D = random_mat(5, 3, rng);
  const std::string dir = (std::filesystem::temp_directory_path() / "solid_cb").string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  save_codebook(dir, cb, 0xabcdef);
  uint64_t src = 0;
  const SemanticCodebook back = load_codebook(dir, &src);
  CHECK(bitwise_equal(back.D, cb.D));
  CHECK(src == 0xabcdef);
}
