// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "solid/synth.hpp"
#include "solid/training.hpp"
#include "test_util.hpp"

using namespace solid;

namespace {

struct Fixture {
  Dataset ds;
  SemanticMap map;
  ModelConfig mc;
};

Fixture make_fixture(uint64_t seed = 5, int users = 30, int items = 12) {
  SynthConfig sc;
  sc.users = users;
  sc.items = items;
  sc.semantics = 3;
  sc.min_interactions = 4;
  sc.max_interactions = 7;
  sc.modal_dim = 6;
  sc.seed = seed;
  const SynthOutput synth = gen_synthetic(sc);

  Fixture f;
  f.ds = build_dataset(synth.log, 4, 2, 5, seed + 1);

  ModalityEmbeddings emb;
  emb.id = id_modality_matrix(items, 6, 77);
  emb.image = synth.image;
  emb.has_image = true;
  emb.text = synth.text;
  emb.has_text = true;
  const Mat fused = fuse_modalities(emb, {Modality::Image, Modality::Text});
  f.map = cluster_semantics(fused, 3, seed + 2, 30);

  lift_dataset(f.ds.split.train, f.map);
  lift_dataset(f.ds.split.valid, f.map);
  lift_dataset(f.ds.split.test, f.map);

  f.mc.backbone.encoder = EncoderKind::Recurrent;
  f.mc.backbone.embed_dim = 6;
  f.mc.backbone.mlp_layers = 2;
  f.mc.backbone.dynamic_layers = {{8, 4}};
  f.mc.backbone.n_users = f.ds.manifest.user_vocab;
  f.mc.backbone.n_items = f.ds.manifest.item_vocab;
  f.mc.backbone.n_semantics = f.map.k;
  f.mc.backbone.seq_len = 4;
  f.mc.gen.z_dim = 6;
  f.mc.gen.hidden_dim = 8;
  f.mc.init_seed = seed + 3;
  return f;
}

TrainConfig quick_train(uint64_t seed = 9) {
  TrainConfig tc;
  tc.lr = 0.01;
  tc.batch_size = 60;
  tc.epochs = 2;
  tc.seed = seed;
  tc.threads = 2;
  tc.chunk_samples = 18;
  tc.patience = 10;
  return tc;
}

}  // namespace

TEST_CASE("ce_loss closed forms and loop oracle") {
  CHECK(ce_loss(std::vector<double>{0.5}, std::vector<double>{1.0}) ==
        doctest::Approx(std::log(2.0)));

  // exact prediction clamps to [eps, 1-eps]
  const double eps = 1e-9;
  const double at_one = ce_loss(std::vector<double>{1.0}, std::vector<double>{1.0}, eps);
  CHECK(at_one == doctest::Approx(-std::log(1.0 - eps)));

  Rng rng(1);
  std::vector<double> yhat(32), y(32);
  for (int i = 0; i < 32; ++i) {
    yhat[i] = rng.uniform();
    y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  double manual = 0.0;
  for (int i = 0; i < 32; ++i) {
    const double p = std::min(1.0 - 1e-12, std::max(1e-12, yhat[i]));
    manual += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  manual /= 32.0;
  CHECK(std::fabs(ce_loss(yhat, y) - manual) < 1e-10);

  CHECK_THROWS_AS(ce_loss(std::vector<double>{0.5}, std::vector<double>{0.3}), DataError);
}

TEST_CASE("early stopper follows the patience rule") {
  EarlyStopper st(3, 1e-4);
  CHECK_FALSE(st.observe(0.50));
  CHECK_FALSE(st.observe(0.60));     // big improvement
  CHECK_FALSE(st.observe(0.60001));  // stale 1
  CHECK_FALSE(st.observe(0.60002));  // stale 2
  CHECK(st.observe(0.60003));        // stale 3 -> stop
  CHECK(st.best() == doctest::Approx(0.60003));

  EarlyStopper resets(2, 1e-4);
  CHECK_FALSE(resets.observe(0.5));
  CHECK_FALSE(resets.observe(0.5));   // stale 1
  CHECK_FALSE(resets.observe(0.51));  // improvement resets
  CHECK_FALSE(resets.observe(0.51));
  CHECK(resets.observe(0.51));
}

TEST_CASE("mode/flag mapping follows the ablation grid") {
  CHECK(mode_of_flags(false, false, false) == ForwardMode::ItemDsr);
  CHECK(mode_of_flags(true, false, false) == ForwardMode::SemDsr);
  CHECK(mode_of_flags(true, true, false) == ForwardMode::TrunkBranch);
  CHECK(mode_of_flags(false, false, true) == ForwardMode::ItemCodebook);
  CHECK(mode_of_flags(true, true, true) == ForwardMode::TrunkBranchCodebook);
  CHECK_THROWS_AS(mode_of_flags(false, true, false), ConfigError);  // sml needs spg
  CHECK_THROWS_AS(mode_of_flags(true, false, true), ConfigError);
}

TEST_CASE("group scoring equals one-sample-at-a-time scoring bitwise") {
  const Fixture f = make_fixture();
  for (ForwardMode mode : {ForwardMode::Sr, ForwardMode::ItemDsr, ForwardMode::SemDsr,
                           ForwardMode::TrunkBranch}) {
    SolidModel model(f.mc);
    const int gs = f.ds.manifest.k_test + 1;
    const auto group = std::span<const Sample>(f.ds.split.test).subspan(0, gs);
    std::vector<double> grouped(gs);
    model.score_group(group, mode, 0.01, grouped);
    for (int i = 0; i < gs; ++i) {
      CHECK(grouped[i] == model.predict(group[i], mode, 0.01));
    }
  }
}

TEST_CASE("quantized modes require an installed codebook") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  CHECK_THROWS_AS(model.predict(f.ds.split.test[0], ForwardMode::TrunkBranchCodebook, 0.01),
                  ConfigError);
  CHECK_THROWS_AS(train_codebook(model, f.ds, quick_train()), ConfigError);
}

TEST_CASE("codebook-mode group scoring equals per-sample scoring bitwise") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  model.install_codebook(init_from_metacode(extract_metacode(model.params(), "mc")));
  const int gs = f.ds.manifest.k_test + 1;
  const auto group = std::span<const Sample>(f.ds.split.test).subspan(0, gs);
  for (ForwardMode mode : {ForwardMode::TrunkBranchCodebook, ForwardMode::ItemCodebook}) {
    std::vector<double> grouped(gs);
    model.score_group(group, mode, 0.01, grouped);
    for (int i = 0; i < gs; ++i) CHECK(grouped[i] == model.predict(group[i], mode, 0.01));
  }
}

TEST_CASE("score_samples parallel equals serial bitwise") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  const int gs = f.ds.manifest.k_test + 1;
  std::vector<double> par_scores, ser_scores;
  score_samples(model, f.ds.split.test, gs, ForwardMode::TrunkBranch, 0.01, par_scores, 2);
  score_samples_serial(model, f.ds.split.test, gs, ForwardMode::TrunkBranch, 0.01, ser_scores);
  REQUIRE(par_scores.size() == ser_scores.size());
  for (size_t i = 0; i < par_scores.size(); ++i) CHECK(par_scores[i] == ser_scores[i]);
}

TEST_CASE("batch gradients: chunked reduction properties") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  TrainConfig tc = quick_train();
  const int gs = f.ds.manifest.k_train + 1;
  const int n_groups = static_cast<int>(f.ds.split.train.size()) / gs;
  std::vector<int> ids;
  for (int i = 0; i < std::min(12, n_groups); ++i) ids.push_back(i);

  GradStore chunked, serial;
  chunked.match(model.params());
  serial.match(model.params());
  BatchWorkspace ws;

  SUBCASE("single chunk is bitwise equal to the plain loop") {
    tc.chunk_samples = 1 << 20;
    tc.threads = 2;
    chunked.zero();
    serial.zero();
    batch_grad(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranch, tc, chunked, ws);
    batch_grad_serial(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranch, tc, serial);
    for (size_t p = 0; p < chunked.g.size(); ++p) {
      CHECK(bitwise_equal(chunked.g[p], serial.g[p]));
    }
  }

  SUBCASE("multi-chunk matches the plain loop to 1e-12") {
    tc.chunk_samples = 10;
    chunked.zero();
    serial.zero();
    batch_grad(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranch, tc, chunked, ws);
    batch_grad_serial(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranch, tc, serial);
    for (size_t p = 0; p < chunked.g.size(); ++p) {
      CHECK(max_abs_diff(chunked.g[p], serial.g[p]) < 1e-12);
    }
  }

  SUBCASE("results are independent of the thread count") {
    tc.chunk_samples = 10;
    tc.threads = 1;
    chunked.zero();
    batch_grad(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranch, tc, chunked, ws);
    GradStore two;
    two.match(model.params());
    two.zero();
    tc.threads = 2;
    BatchWorkspace ws2;
    batch_grad(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranch, tc, two, ws2);
    for (size_t p = 0; p < chunked.g.size(); ++p) {
      CHECK(bitwise_equal(chunked.g[p], two.g[p]));
    }
  }
}

TEST_CASE("the batch loss is ce plus lambda times commitment by construction") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  model.install_codebook(init_from_metacode(extract_metacode(model.params(), "mc")));
  TrainConfig tc = quick_train();
  tc.lambda = 0.37;
  const int gs = f.ds.manifest.k_train + 1;
  std::vector<int> ids = {0, 1, 2, 3, 4, 5};
  GradStore master;
  master.match(model.params());
  master.zero();
  BatchWorkspace ws;
  const auto stats = batch_grad(model, f.ds.split.train, ids, gs,
                                ForwardMode::TrunkBranchCodebook, tc, master, ws);

  // recompute both terms independently at the value level
  std::vector<double> scores, labels;
  double mse_sum = 0.0;
  for (int gi : ids) {
    const auto group =
        std::span<const Sample>(f.ds.split.train).subspan(static_cast<size_t>(gi) * gs, gs);
    for (const Sample& s : group) {
      scores.push_back(model.predict(s, ForwardMode::TrunkBranchCodebook, tc.clip_t));
      labels.push_back(s.label);
    }
    // commitment of the shared sequence, once per sample
    const Mat& table = model.params().value("mv.emb");
    const Mat e = embed_sequence(group[0].item_seq, table, nullptr);
    std::vector<uint8_t> keep(group[0].item_seq.size());
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = group[0].item_seq[i] != 0;
    Mat eq;
    std::vector<int> idx;
    quantize(e, model.codebook().D, keep, eq, idx);
    mse_sum += commitment_loss(e, eq, keep) * gs;
  }
  const double n = static_cast<double>(stats.samples);
  const double total_from_stats = stats.ce_sum / n + tc.lambda * stats.mse_sum / n;
  const double total_recomputed = ce_loss(scores, labels) + tc.lambda * mse_sum / n;
  CHECK(std::fabs(total_from_stats - total_recomputed) < 1e-12);
}

TEST_CASE("an optimizer step with lr = 0 changes nothing bitwise") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  TrainConfig tc = quick_train();
  const uint64_t before = model.params().checksum_all();
  GradStore master;
  master.match(model.params());
  master.zero();
  BatchWorkspace ws;
  std::vector<int> ids = {0, 1, 2};
  batch_grad(model, f.ds.split.train, ids, f.ds.manifest.k_train + 1, ForwardMode::ItemDsr, tc,
             master, ws);
  Adam adam;
  adam.step(model.params(), master, 0.0);
  CHECK(model.params().checksum_all() == before);
}

TEST_CASE("lambda = 0 sends no gradient to the codebook") {
  const Fixture f = make_fixture();
  SolidModel model(f.mc);
  model.install_codebook(init_from_metacode(extract_metacode(model.params(), "mc")));
  TrainConfig tc = quick_train();
  GradStore master;
  master.match(model.params());
  BatchWorkspace ws;
  std::vector<int> ids = {0, 1, 2, 3};
  const int gs = f.ds.manifest.k_train + 1;
  const int d_id = model.params().id("cb.D");

  tc.lambda = 0.0;
  master.zero();
  batch_grad(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranchCodebook, tc, master, ws);
  for (double v : master.g[d_id].a) CHECK(v == 0.0);
  const Mat d_before = model.params().value("cb.D");
  Adam adam;
  adam.step(model.params(), master, 0.01);
  CHECK(bitwise_equal(model.params().value("cb.D"), d_before));

  tc.lambda = 0.1;
  master.zero();
  batch_grad(model, f.ds.split.train, ids, gs, ForwardMode::TrunkBranchCodebook, tc, master, ws);
  CHECK(max_abs(master.g[d_id]) > 0.0);
}

TEST_CASE("with T = 0 the branch has no effect on predictions") {
  const Fixture f = make_fixture();
  SolidModel base(f.mc);
  SolidModel zeroed(f.mc);
  // silence the branch generator entirely in the copy
  for (const char* n : {"mv.mlp.w1", "mv.mlp.b1", "mv.mlp.w2", "mv.mlp.b2"}) {
    for (double& v : zeroed.params().value(n).a) v = 0.0;
  }
  for (const Sample& s : std::span<const Sample>(f.ds.split.test).subspan(0, 24)) {
    const double with_branch = base.predict(s, ForwardMode::TrunkBranch, 0.0);
    const double without = zeroed.predict(s, ForwardMode::TrunkBranch, 0.0);
    CHECK(with_branch == without);
  }
}

TEST_CASE("full stage-2 objective passes finite differences (plain quantization)") {
  Fixture f = make_fixture(21, 12, 8);
  f.mc.backbone.dynamic_layers = {{8, 4}};
  SolidModel model(f.mc);
  model.install_codebook(init_from_metacode(extract_metacode(model.params(), "mc")));
  // a group with a non-trivial sequence
  const int gs = f.ds.manifest.k_train + 1;
  std::span<const Sample> group;
  for (size_t g0 = 0; g0 < f.ds.split.train.size(); g0 += gs) {
    const Sample& head = f.ds.split.train[g0];
    int nonpad = 0;
    for (int id : head.item_seq) nonpad += id != 0;
    if (nonpad >= 2) {
      group = std::span<const Sample>(f.ds.split.train).subspan(g0, gs);
      break;
    }
  }
  REQUIRE(!group.empty());
  const double lambda = 0.3;
  auto build = [&](Graph& g, Binder& b) {
    const auto nodes = model.build_group(g, b, group, ForwardMode::TrunkBranchCodebook, 0.05,
                                         /*straight_through=*/false);
    return g.add(nodes.bce, g.scale(nodes.mse, lambda));
  };
  const auto rep = testutil::fd_check(model.params(), build);
  CAPTURE(rep.worst_tensor);
  CHECK(rep.worst_rel < 1e-4);
}

TEST_CASE("train_sr runs and its loss does not increase over a short run") {
  const Fixture f = make_fixture(8, 40, 14);
  SolidModel model(f.mc);
  TrainConfig tc = quick_train();
  tc.epochs = 3;
  const StageState st = train_sr(model, f.ds, tc);
  CHECK(st.stage == StageKind::Sr);
  REQUIRE(st.epoch_losses.size() == 3);
  CHECK(st.epoch_losses.back() <= st.epoch_losses.front() + 1e-6);
}

TEST_CASE("stage wrappers tag their stages") {
  const Fixture f = make_fixture();
  TrainConfig tc = quick_train();
  tc.epochs = 1;
  {
    SolidModel m(f.mc);
    CHECK(train_dsr(m, f.ds, tc).stage == StageKind::Dsr);
  }
  {
    SolidModel m(f.mc);
    CHECK(train_semantic_to_param(m, f.ds, tc).stage == StageKind::Spg);
  }
  {
    SolidModel m(f.mc);
    CHECK(train_metacode(m, f.ds, tc).stage == StageKind::Sml);
  }
}

TEST_CASE("the pipeline runs both loops and installs the codebook") {
  Fixture f = make_fixture();
  SolidModel model(f.mc);
  PipelineOptions opt;
  opt.train = quick_train();
  opt.train.epochs = 1;
  std::vector<StageKind> seen;
  const PipelineResult res = run_pipeline(model, f.ds, f.map, opt,
                                          [&](StageKind s, const SolidModel&) {
                                            seen.push_back(s);
                                          });
  CHECK(res.final_mode == ForwardMode::TrunkBranchCodebook);
  CHECK(res.final_stage == StageKind::Scl);
  REQUIRE(res.stages.size() == 2);
  CHECK(res.stages[0].stage == StageKind::Sml);
  CHECK(res.stages[1].stage == StageKind::Scl);
  CHECK(seen == std::vector<StageKind>{StageKind::Sml, StageKind::Scl});
  CHECK(model.codebook_ready());
  REQUIRE(!res.log.empty());
  CHECK(res.log.front().stage == "sml");
  CHECK(res.log.back().stage == "scl");
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run_once = [&]() {
    Fixture f = make_fixture();
    SolidModel model(f.mc);
    PipelineOptions opt;
    opt.train = quick_train();
    opt.train.epochs = 1;
    run_pipeline(model, f.ds, f.map, opt);
    return model.params().checksum_all();
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("item-only codebook pipeline initializes from item rows") {
  Fixture f = make_fixture();
  SolidModel model(f.mc);
  PipelineOptions opt;
  opt.spg = false;
  opt.sml = false;
  opt.scl = true;
  opt.train = quick_train();
  opt.train.epochs = 1;
  const PipelineResult res = run_pipeline(model, f.ds, f.map, opt);
  CHECK(res.final_mode == ForwardMode::ItemCodebook);
  CHECK(model.codebook_ready());
  REQUIRE(res.stages.size() == 2);
  CHECK(res.stages[0].stage == StageKind::Dsr);
}
