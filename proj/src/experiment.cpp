// SPDX-License-Identifier: Apache-2.0
#include "solid/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "solid/synth.hpp"

namespace solid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void RunConfig::set_kv(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::get_str(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  const std::string v = it == kv_.end() ? def : it->second;
  accessed_[key] = v;
  return v;
}

int RunConfig::get_int(const std::string& key, int def) const {
  const std::string v = get_str(key, std::to_string(def));
  try {
    return std::stoi(v);
  } catch (...) {
    throw ConfigError("config key " + key + " is not an integer: " + v);
  }
}

double RunConfig::get_double(const std::string& key, double def) const {
  std::ostringstream os;
  os << def;
  const std::string v = get_str(key, os.str());
  try {
    return std::stod(v);
  } catch (...) {
    throw ConfigError("config key " + key + " is not a number: " + v);
  }
}

bool RunConfig::get_bool(const std::string& key, bool def) const {
  const std::string v = get_str(key, def ? "1" : "0");
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + v);
}

uint64_t RunConfig::get_u64(const std::string& key, uint64_t def) const {
  const std::string v = get_str(key, std::to_string(def));
  try {
    return std::stoull(v);
  } catch (...) {
    throw ConfigError("config key " + key + " is not an integer: " + v);
  }
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out = accessed_;
  for (const auto& [k, v] : kv_) out[k] = v;
  return out;
}

uint64_t RunConfig::hash() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [k, v] : resolved()) {
    h = fnv1a(k.data(), k.size(), h);
    h = fnv1a("=", 1, h);
    h = fnv1a(v.data(), v.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

std::string resolve_out_dir(const RunConfig& cfg, const std::string& key,
                            const std::string& def) {
  const std::string dir = cfg.get_str(key, def);
  const char* root = std::getenv("SOLID_OUT_ROOT");
  if (root && *root && !fs::path(dir).is_absolute()) {
    return std::string(root) + "/" + dir;
  }
  return dir;
}

uint64_t dataset_checksum(const std::string& dir) {
  uint64_t h = 1469598103934665603ull;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    h = fnv1a(name.data(), name.size(), h);
    std::ifstream in(dir + "/" + name, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h = fnv1a(content.data(), content.size(), h);
  }
  return h;
}

namespace {

void write_run_manifest(const std::string& dir, const RunConfig& cfg,
                        const std::map<std::string, uint64_t>& input_checksums,
                        const std::string& filename = "manifest.json") {
  json j;
  j["config"] = cfg.resolved();
  j["config_hash"] = cfg.hash();
  json inputs = json::object();
  for (const auto& [k, v] : input_checksums) inputs[k] = v;
  j["input_checksums"] = inputs;
  std::ofstream out(dir + "/" + filename);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("cannot write run manifest in " + dir);
}

SemanticMap build_semantics(RunConfig& cfg, const Dataset& ds, const std::string& data_dir) {
  const int id_dim = cfg.get_int("semantics.id_dim", 32);
  const uint64_t id_seed = cfg.get_u64("semantics.id_seed", 101);
  ModalityEmbeddings emb = load_modalities(data_dir, ds.manifest.item_vocab, id_dim, id_seed);
  const auto selection = modalities_from_string(cfg.get_str("semantics.modalities", "id,image,text"));
  const Mat fused = fuse_modalities(emb, selection);
  int k = cfg.get_int("semantics.k", 0);
  if (k <= 0) k = default_semantic_count(ds.manifest.item_vocab);
  const int iters = cfg.get_int("semantics.kmeans_iters", 50);
  const uint64_t seed = cfg.get_u64("semantics.seed", 1009);
  const int threads = cfg.get_int("train.threads", 0);
  return cluster_semantics(fused, k, seed, iters, threads);
}

ModelConfig model_config_from(RunConfig& cfg, const Dataset& ds, int n_semantics) {
  ModelConfig mc;
  mc.backbone.encoder = encoder_from_string(cfg.get_str("model.encoder", "recurrent"));
  mc.backbone.embed_dim = cfg.get_int("model.embed_dim", 32);
  mc.backbone.mlp_layers = cfg.get_int("model.mlp_layers", 2);
  const std::string dyn = cfg.get_str("model.dynamic_layers", "");
  if (!dyn.empty()) mc.backbone.dynamic_layers = dynamic_layers_from_string(dyn);
  mc.backbone.n_users = ds.manifest.user_vocab;
  mc.backbone.n_items = ds.manifest.item_vocab;
  mc.backbone.n_semantics = n_semantics;
  mc.backbone.seq_len = ds.manifest.seq_len;
  mc.gen.style = gen_style_from_string(cfg.get_str("model.gen_style", "full_matrix"));
  mc.gen.rank = cfg.get_int("model.gen_rank", 4);
  mc.gen.encoder = encoder_from_string(cfg.get_str("model.gen_encoder", "recurrent"));
  mc.gen.z_dim = cfg.get_int("model.z_dim", 32);
  mc.gen.hidden_dim = cfg.get_int("model.hidden_dim", 64);
  mc.init_seed = cfg.get_u64("model.init_seed", 1);
  return mc;
}

TrainConfig train_config_from(RunConfig& cfg) {
  TrainConfig tc;
  tc.lr = cfg.get_double("train.lr", 0.001);
  tc.batch_size = cfg.get_int("train.batch", 1024);
  tc.epochs = cfg.get_int("train.epochs", 30);
  tc.stage2_epochs = cfg.get_int("train.stage2_epochs", 0);
  tc.lambda = cfg.get_double("train.lambda", 0.1);
  tc.clip_t = cfg.get_double("train.clip_t", 0.01);
  tc.seed = cfg.get_u64("train.seed", 7);
  tc.patience = cfg.get_int("train.patience", 3);
  tc.min_rel_improve = cfg.get_double("train.min_rel_improve", 1e-4);
  tc.valid_users_cap = cfg.get_int("train.valid_users_cap", 0);
  tc.threads = cfg.get_int("train.threads", 0);
  tc.chunk_samples = cfg.get_int("train.chunk", 64);
  tc.straight_through = cfg.get_bool("train.straight_through", true);
  return tc;
}

std::vector<int> eval_ks_from(RunConfig& cfg) {
  std::vector<int> ks;
  std::stringstream ss(cfg.get_str("eval.ks", "10,20"));
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!trim(tok).empty()) ks.push_back(std::stoi(trim(tok)));
  }
  if (ks.empty()) ks = {10, 20};
  return ks;
}

}  // namespace

std::string cmd_gen_synthetic(RunConfig& cfg) {
  SynthConfig sc;
  sc.users = cfg.get_int("synth.users", 2000);
  sc.items = cfg.get_int("synth.items", 300);
  sc.semantics = cfg.get_int("synth.semantics", 12);
  sc.noise = cfg.get_double("synth.noise", 0.3);
  sc.behavior_noise = cfg.get_double("synth.behavior_noise", 0.2);
  sc.prefs_per_user = cfg.get_int("synth.prefs_per_user", 2);
  sc.min_interactions = cfg.get_int("synth.min_interactions", 4);
  sc.max_interactions = cfg.get_int("synth.max_interactions", 9);
  sc.modal_dim = cfg.get_int("synth.modal_dim", 32);
  sc.seed = cfg.get_u64("data.seed", 42);

  const SynthOutput synth = gen_synthetic(sc);
  const int seq_len = cfg.get_int("data.seq_len", 10);
  const int k_train = cfg.get_int("data.k_train", 4);
  const int k_test = cfg.get_int("data.k_test", 99);
  Dataset ds = build_dataset(synth.log, seq_len, k_train, k_test, sc.seed);

  const std::string dir = resolve_out_dir(cfg, "data.dir", "runs/dataset");
  save_dataset(dir, ds);
  save_modality_matrix(dir + "/modality_image.txt", synth.image, "image");
  save_modality_matrix(dir + "/modality_text.txt", synth.text, "text");
  {
    std::ofstream truth(dir + "/planted_semantics.tsv");
    for (size_t v = 0; v < synth.true_semantic.size(); ++v) {
      truth << v << '\t' << synth.true_semantic[v] << '\n';
    }
  }
  write_run_manifest(dir, cfg, {{"dataset", dataset_checksum(dir)}}, "run_manifest.json");
  return dir;
}

std::string cmd_build_dataset(RunConfig& cfg) {
  const std::string path = cfg.get_str("data.path", "");
  if (path.empty()) throw ConfigError("data.path is required for build-data");
  const LogFormat fmt = log_format_from_string(cfg.get_str("data.format", "csv"));
  const RawLog log = load_interactions(path, fmt);
  Dataset ds = build_dataset(log, cfg.get_int("data.seq_len", 10), cfg.get_int("data.k_train", 4),
                             cfg.get_int("data.k_test", 99), cfg.get_u64("data.seed", 42));
  const std::string dir = resolve_out_dir(cfg, "data.dir", "runs/dataset");
  save_dataset(dir, ds);
  write_run_manifest(dir, cfg, {{"dataset", dataset_checksum(dir)}}, "run_manifest.json");
  return dir;
}

TrainArtifacts cmd_train(RunConfig& cfg) {
  const std::string data_dir = resolve_out_dir(cfg, "data.dir", "runs/dataset");
  TrainArtifacts art;
  art.dataset = std::make_shared<Dataset>(load_dataset(data_dir));
  Dataset& ds = *art.dataset;

  art.map = build_semantics(cfg, ds, data_dir);
  const ModelConfig mc = model_config_from(cfg, ds, art.map.k);
  art.model = std::make_shared<SolidModel>(mc);
  // The semantic encoder starts from the cluster centroids when the widths
  // line up; they are the natural prototypes for the semantic ids.
  if (cfg.get_bool("model.init_mc_from_centroids", true) &&
      art.map.centroids.cols == mc.gen.z_dim) {
    art.model->params().value("mc.emb") = art.map.centroids;
  }

  PipelineOptions opt;
  opt.spg = cfg.get_bool("run.spg", true);
  opt.sml = cfg.get_bool("run.sml", true);
  opt.scl = cfg.get_bool("run.scl", true);
  opt.train = train_config_from(cfg);

  const std::string run_dir = resolve_out_dir(cfg, "out.dir", "runs/exp");
  fs::create_directories(run_dir);
  art.run_dir = run_dir;
  save_semantic_map(run_dir, art.map);

  auto on_stage = [&](StageKind stage, const SolidModel& m) {
    save_checkpoint(run_dir + "/checkpoint_" + stage_name(stage), m.params(), opt.train.seed,
                    cfg.hash());
  };
  art.pipeline = run_pipeline(*art.model, ds, art.map, opt, on_stage);
  save_checkpoint(run_dir + "/checkpoint_final", art.model->params(), opt.train.seed, cfg.hash());
  if (art.model->codebook_ready()) {
    save_codebook(run_dir, art.model->codebook(),
                  checksum(art.model->params().value("mc.emb")));
  }

  {
    std::ofstream log(run_dir + "/run_log.tsv");
    log.precision(10);
    for (const auto& e : art.pipeline.log) {
      log << e.stage << '\t' << e.epoch << '\t' << e.train_loss << '\t' << e.valid_auc << '\n';
    }
  }

  const auto ks = eval_ks_from(cfg);
  const int group_size = ds.manifest.k_test + 1;
  std::vector<double> scores;
  score_samples(*art.model, ds.split.test, group_size, art.pipeline.final_mode, opt.train.clip_t,
                scores, opt.train.threads);
  art.report = evaluate_groups(ds.split.test, scores, group_size, ks);
  write_report_json(run_dir + "/report.json", art.report);
  write_report_tsv(run_dir + "/report.tsv", art.report);
  write_run_manifest(run_dir, cfg, {{"dataset", dataset_checksum(data_dir)}});
  return art;
}

TrainArtifacts load_run(const std::string& run_dir) {
  std::ifstream min(run_dir + "/manifest.json");
  if (!min) throw DataError("missing run manifest in " + run_dir);
  json manifest = json::parse(min);
  RunConfig cfg;
  for (const auto& [k, v] : manifest["config"].items()) {
    cfg.set(k, v.get<std::string>());
  }
  TrainArtifacts art;
  art.run_dir = run_dir;
  const std::string data_dir = resolve_out_dir(cfg, "data.dir", "runs/dataset");
  art.dataset = std::make_shared<Dataset>(load_dataset(data_dir));
  art.map = load_semantic_map(run_dir);
  const ModelConfig mc = model_config_from(cfg, *art.dataset, art.map.k);
  art.model = std::make_shared<SolidModel>(mc);
  load_checkpoint(run_dir + "/checkpoint_final", art.model->params());
  if (fs::exists(run_dir + "/codebook.ten")) {
    art.model->install_codebook(load_codebook(run_dir));
  }
  art.pipeline.final_mode = mode_of_flags(cfg.get_bool("run.spg", true),
                                          cfg.get_bool("run.sml", true),
                                          cfg.get_bool("run.scl", true));
  art.pipeline.final_stage = stage_of_mode(art.pipeline.final_mode);
  lift_dataset(art.dataset->split.train, art.map);
  lift_dataset(art.dataset->split.valid, art.map);
  lift_dataset(art.dataset->split.test, art.map);
  return art;
}

EvalReport cmd_eval(RunConfig& cfg, const std::string& run_dir, const std::string& out_dir) {
  TrainArtifacts art = load_run(run_dir);
  const auto ks = eval_ks_from(cfg);
  const int threads = cfg.get_int("train.threads", 0);
  const double clip_t = cfg.get_double("train.clip_t", 0.01);
  const Dataset& ds = *art.dataset;
  const int group_size = ds.manifest.k_test + 1;
  std::vector<double> scores;
  score_samples(*art.model, ds.split.test, group_size, art.pipeline.final_mode, clip_t, scores,
                threads);
  EvalReport rep = evaluate_groups(ds.split.test, scores, group_size, ks);
  fs::create_directories(out_dir);
  write_report_json(out_dir + "/report.json", rep);
  write_report_tsv(out_dir + "/report.tsv", rep);
  return rep;
}

namespace {

struct AblateRow {
  std::string name;
  std::map<std::string, std::string> overrides;
};

std::string metrics_line(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << r.auc << '\t' << r.uauc;
  for (const auto& [k, v] : r.ndcg) {
    os << '\t' << v << '\t' << r.recall.at(k);
  }
  return os.str();
}

}  // namespace

std::string cmd_ablate(RunConfig& cfg, const std::string& axis) {
  const std::string base_out = resolve_out_dir(cfg, "out.dir", "runs/ablate");
  fs::create_directories(base_out);
  std::vector<AblateRow> rows;
  if (axis == "modules") {
    auto flag_row = [](const std::string& name, bool spg, bool sml, bool scl) {
      AblateRow r;
      r.name = name;
      r.overrides["run.spg"] = spg ? "1" : "0";
      r.overrides["run.sml"] = sml ? "1" : "0";
      r.overrides["run.scl"] = scl ? "1" : "0";
      return r;
    };
    rows.push_back(flag_row("none", false, false, false));
    rows.push_back(flag_row("spg", true, false, false));
    rows.push_back(flag_row("spg+sml", true, true, false));
    rows.push_back(flag_row("scl", false, false, true));
    rows.push_back(flag_row("spg+sml+scl", true, true, true));
  } else if (axis == "modalities") {
    for (const std::string sel : {"id", "image", "text", "id,image", "id,text", "image,text",
                                  "id,image,text"}) {
      AblateRow r;
      r.name = sel;
      r.overrides["semantics.modalities"] = sel;
      rows.push_back(r);
    }
  } else {
    throw ConfigError("ablate axis must be 'modules' or 'modalities'");
  }

  const std::string table_path = base_out + "/ablate_" + axis + ".tsv";
  std::ofstream table(table_path);
  table << "row\tauc\tuauc";
  for (const int k : eval_ks_from(cfg)) table << "\tndcg@" << k << "\trecall@" << k;
  table << "\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    RunConfig row_cfg = cfg;
    for (const auto& [k, v] : rows[i].overrides) row_cfg.set(k, v);
    std::string sub = rows[i].name;
    std::replace(sub.begin(), sub.end(), ',', '-');
    std::replace(sub.begin(), sub.end(), '+', '-');
    row_cfg.set("out.dir", base_out + "/row_" + sub);
    const TrainArtifacts art = cmd_train(row_cfg);
    table << rows[i].name << '\t' << metrics_line(art.report) << '\n';
  }
  if (!table) throw DataError("cannot write " + table_path);
  return table_path;
}

std::string cmd_grid(RunConfig& cfg, const std::vector<double>& lambdas,
                     const std::vector<double>& ts) {
  if (lambdas.empty() || ts.empty()) throw ConfigError("grid needs lambda and T values");
  const std::string base_out = resolve_out_dir(cfg, "out.dir", "runs/grid");
  fs::create_directories(base_out);
  const std::string table_path = base_out + "/grid.tsv";
  std::ofstream table(table_path);
  table << "lambda\tT\tuauc\tndcg@10\trecall@10\n";
  table.precision(6);
  table << std::fixed;
  for (double l : lambdas) {
    for (double t : ts) {
      RunConfig cell = cfg;
      std::ostringstream lo, to;
      lo << l;
      to << t;
      cell.set("train.lambda", lo.str());
      cell.set("train.clip_t", to.str());
      cell.set("out.dir", base_out + "/cell_l" + lo.str() + "_t" + to.str());
      const TrainArtifacts art = cmd_train(cell);
      const double ndcg10 = art.report.ndcg.count(10) ? art.report.ndcg.at(10)
                                                      : art.report.ndcg.begin()->second;
      const double rec10 = art.report.recall.count(10) ? art.report.recall.at(10)
                                                       : art.report.recall.begin()->second;
      table << l << '\t' << t << '\t' << art.report.uauc << '\t' << ndcg10 << '\t' << rec10
            << '\n';
    }
  }
  if (!table) throw DataError("cannot write " + table_path);
  return table_path;
}

std::string cmd_stability(RunConfig& cfg, const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("stability needs at least one run directory");
  const std::string base_out = resolve_out_dir(cfg, "out.dir", "runs/stability");
  fs::create_directories(base_out);

  StabilityOptions opt;
  opt.perturbations = cfg.get_int("stability.perturbations", 4);
  opt.seed = cfg.get_u64("stability.seed", 1);
  opt.user_cap = cfg.get_int("stability.user_cap", 0);
  opt.threads = cfg.get_int("train.threads", 0);
  const double clip_t = cfg.get_double("train.clip_t", 0.01);

  std::vector<VarianceSummary> summaries;
  std::vector<std::string> names;
  for (const std::string& dir : run_dirs) {
    TrainArtifacts art = load_run(dir);
    const Dataset& ds = *art.dataset;
    const SolidModel& model = *art.model;
    const ForwardMode mode = art.pipeline.final_mode;
    GroupScorer scorer = [&](std::span<const Sample> group, std::span<double> out) {
      model.score_group(group, mode, clip_t, out);
    };
    const auto res = stability_variance(ds.split.test, ds.manifest.k_test + 1, ds.split,
                                        art.map, opt, scorer);
    summaries.push_back(res.summary);
    names.push_back(fs::path(dir).filename().string());
  }
  const std::string table_path = base_out + "/stability.tsv";
  write_variance_tsv(table_path, summaries, names);
  return table_path;
}

}  // namespace solid
