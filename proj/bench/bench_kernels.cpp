// SPDX-License-Identifier: Apache-2.0
//
// Times the OpenMP kernels against their serial reference implementations:
// codebook quantization, k-means assignment, batch gradient accumulation
// and group scoring. Sizes are chosen so each timing runs in seconds.

#include <chrono>
#include <cstdio>
#include <memory>
#include <vector>

#include "solid/codebook.hpp"
#include "solid/parallel.hpp"
#include "solid/semantics.hpp"
#include "solid/synth.hpp"
#include "solid/training.hpp"

using namespace solid;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.a) v = scale * rng.normal();
  return m;
}

void report(const char* name, double serial_s, double parallel_s, bool identical) {
  std::printf("%-24s serial %8.3fs   openmp %8.3fs   speedup %5.2fx   identical %s\n", name,
              serial_s, parallel_s, serial_s / parallel_s, identical ? "yes" : "NO");
}

void bench_quantize() {
  Rng rng(1);
  const Mat queries = random_mat(200000, 32, rng);
  const Mat codes = random_mat(256, 32, rng);
  std::vector<uint8_t> keep(queries.rows, 1);
  Mat out_s, out_p;
  std::vector<int> idx_s, idx_p;

  auto t0 = Clock::now();
  quantize_serial(queries, codes, keep, out_s, idx_s);
  const double ts = seconds_since(t0);
  t0 = Clock::now();
  quantize(queries, codes, keep, out_p, idx_p, 0);
  const double tp = seconds_since(t0);
  report("quantize", ts, tp, idx_s == idx_p && bitwise_equal(out_s, out_p));
}

void bench_kmeans_assign() {
  Rng rng(2);
  const Mat points = random_mat(150000, 32, rng);
  const Mat centroids = random_mat(64, 32, rng);
  std::vector<int> a_s, a_p;

  auto t0 = Clock::now();
  kmeans_assign_serial(points, centroids, a_s);
  const double ts = seconds_since(t0);
  t0 = Clock::now();
  kmeans_assign(points, centroids, a_p, 0);
  const double tp = seconds_since(t0);
  report("kmeans_assign", ts, tp, a_s == a_p);
}

struct TrainSetup {
  Dataset ds;
  SemanticMap map;
  std::shared_ptr<SolidModel> model;
};

TrainSetup make_setup() {
  SynthConfig sc;
  sc.users = 400;
  sc.items = 120;
  sc.semantics = 8;
  sc.modal_dim = 16;
  sc.seed = 3;
  const SynthOutput synth = gen_synthetic(sc);
  TrainSetup s;
  s.ds = build_dataset(synth.log, 8, 4, 49, 4);
  ModalityEmbeddings emb;
  emb.id = id_modality_matrix(sc.items, 16, 5);
  emb.image = synth.image;
  emb.has_image = true;
  emb.text = synth.text;
  emb.has_text = true;
  s.map = cluster_semantics(fuse_modalities(emb, {Modality::Image, Modality::Text}), 8, 6, 40);
  lift_dataset(s.ds.split.train, s.map);
  lift_dataset(s.ds.split.valid, s.map);
  lift_dataset(s.ds.split.test, s.map);

  ModelConfig mc;
  mc.backbone.embed_dim = 16;
  mc.backbone.dynamic_layers = {{16, 8}};
  mc.backbone.n_users = s.ds.manifest.user_vocab;
  mc.backbone.n_items = s.ds.manifest.item_vocab;
  mc.backbone.n_semantics = s.map.k;
  mc.backbone.seq_len = 8;
  mc.gen.z_dim = 16;
  mc.gen.hidden_dim = 32;
  s.model = std::make_shared<SolidModel>(mc);
  s.model->install_codebook(init_from_metacode(extract_metacode(s.model->params(), "mc")));
  return s;
}

void bench_batch_grad(const TrainSetup& s) {
  TrainConfig tc;
  tc.chunk_samples = 64;
  const int gs = s.ds.manifest.k_train + 1;
  const int n_groups = static_cast<int>(s.ds.split.train.size()) / gs;
  std::vector<int> ids(n_groups);
  for (int i = 0; i < n_groups; ++i) ids[i] = i;

  GradStore serial, parallel;
  serial.match(s.model->params());
  parallel.match(s.model->params());
  BatchWorkspace ws;

  tc.threads = 1;
  serial.zero();
  auto t0 = Clock::now();
  batch_grad(*s.model, s.ds.split.train, ids, gs, ForwardMode::TrunkBranchCodebook, tc, serial,
             ws);
  const double ts = seconds_since(t0);

  tc.threads = 0;
  parallel.zero();
  BatchWorkspace ws2;
  t0 = Clock::now();
  batch_grad(*s.model, s.ds.split.train, ids, gs, ForwardMode::TrunkBranchCodebook, tc, parallel,
             ws2);
  const double tp = seconds_since(t0);

  bool same = true;
  for (size_t p = 0; p < serial.g.size(); ++p) {
    same = same && bitwise_equal(serial.g[p], parallel.g[p]);
  }
  report("batch_grad", ts, tp, same);
}

void bench_score(const TrainSetup& s) {
  const int gs = s.ds.manifest.k_test + 1;
  std::vector<double> out_s, out_p;
  auto t0 = Clock::now();
  score_samples_serial(*s.model, s.ds.split.test, gs, ForwardMode::TrunkBranchCodebook, 0.01,
                       out_s);
  const double ts = seconds_since(t0);
  t0 = Clock::now();
  score_samples(*s.model, s.ds.split.test, gs, ForwardMode::TrunkBranchCodebook, 0.01, out_p, 0);
  const double tp = seconds_since(t0);
  report("score_samples", ts, tp, out_s == out_p);
}

}  // namespace

int main() {
  std::printf("hardware threads: %d\n", par::hardware_threads());
  bench_quantize();
  bench_kmeans_assign();
  const TrainSetup setup = make_setup();
  bench_batch_grad(setup);
  bench_score(setup);
  return 0;
}
