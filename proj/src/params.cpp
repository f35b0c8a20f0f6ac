// SPDX-License-Identifier: Apache-2.0
#include "solid/params.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace solid {

namespace fs = std::filesystem;
using nlohmann::json;

int ParamStore::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw std::runtime_error("param already exists: " + name);
  const int id = static_cast<int>(values_.size());
  names_.push_back(name);
  values_.emplace_back(rows, cols, 0.0);
  index_[name] = id;
  return id;
}

int ParamStore::add_normal(const std::string& name, int rows, int cols, double stddev, Rng& rng) {
  const int id = add(name, rows, cols);
  Mat& m = values_[id];
  for (double& v : m.a) v = stddev * rng.normal();
  return id;
}

int ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("unknown param: " + name);
  return it->second;
}

uint64_t ParamStore::checksum_all() const {
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < values_.size(); ++i) {
    h = fnv1a(names_[i].data(), names_[i].size(), h);
    const uint64_t c = checksum(values_[i]);
    h = fnv1a(&c, sizeof(c), h);
  }
  return h;
}

void GradStore::match(const ParamStore& ps) {
  g.resize(ps.count());
  for (int i = 0; i < ps.count(); ++i) {
    const Mat& p = ps.value(i);
    if (!g[i].same_shape(p)) g[i].assign(p.rows, p.cols, 0.0);
  }
}

void GradStore::zero() {
  for (Mat& m : g) std::fill(m.a.begin(), m.a.end(), 0.0);
}

void GradStore::add(const GradStore& other) {
  for (size_t i = 0; i < g.size(); ++i) {
    for (size_t k = 0; k < g[i].a.size(); ++k) g[i].a[k] += other.g[i].a[k];
  }
}

void Adam::step(ParamStore& ps, const GradStore& grads, double lr) {
  if (m_.empty()) {
    m_.resize(ps.count());
    v_.resize(ps.count());
    for (int i = 0; i < ps.count(); ++i) {
      m_[i].assign(ps.value(i).rows, ps.value(i).cols, 0.0);
      v_[i].assign(ps.value(i).rows, ps.value(i).cols, 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int i = 0; i < ps.count(); ++i) {
    Mat& p = ps.value(i);
    const Mat& gr = grads.g[i];
    Mat& m = m_[i];
    Mat& v = v_[i];
    for (size_t k = 0; k < p.a.size(); ++k) {
      const double g = gr.a[k];
      m.a[k] = beta1_ * m.a[k] + (1.0 - beta1_) * g;
      v.a[k] = beta2_ * v.a[k] + (1.0 - beta2_) * g * g;
      const double mhat = m.a[k] / bc1;
      const double vhat = v.a[k] / bc2;
      const double upd = lr * mhat / (std::sqrt(vhat) + eps_);
      if (upd != 0.0) p.a[k] -= upd;
    }
  }
}

int Binder::leaf(Graph& g, int param_id) {
  auto it = cache_.find(param_id);
  if (it != cache_.end()) return it->second;
  Mat* sink = sink_ ? &sink_->g[param_id] : nullptr;
  const int node = g.leaf(&ps_->value(param_id), sink);
  cache_[param_id] = node;
  return node;
}

namespace {

constexpr uint32_t kTenMagic = 0x4e455453;  // "STEN"

std::string tensor_filename(const std::string& name) {
  std::string f = name;
  for (char& c : f) {
    if (c == '.' || c == '/' || c == ' ') c = '_';
  }
  return f + ".ten";
}

}  // namespace

void save_mat(const std::string& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const uint32_t magic = kTenMagic;
  const int64_t r = m.rows, c = m.cols;
  out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
  out.write(reinterpret_cast<const char*>(&r), sizeof(r));
  out.write(reinterpret_cast<const char*>(&c), sizeof(c));
  if (!m.a.empty()) {
    out.write(reinterpret_cast<const char*>(m.a.data()),
              static_cast<std::streamsize>(m.a.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

Mat load_mat(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  uint32_t magic = 0;
  int64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(&r), sizeof(r));
  in.read(reinterpret_cast<char*>(&c), sizeof(c));
  if (!in || magic != kTenMagic) throw std::runtime_error("bad tensor file: " + path);
  Mat m(static_cast<int>(r), static_cast<int>(c));
  if (!m.a.empty()) {
    in.read(reinterpret_cast<char*>(m.a.data()),
            static_cast<std::streamsize>(m.a.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated tensor file: " + path);
  return m;
}

void save_checkpoint(const std::string& dir, const ParamStore& ps, uint64_t seed,
                     uint64_t config_hash) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["seed"] = seed;
  manifest["config_hash"] = config_hash;
  json tensors = json::array();
  for (int i = 0; i < ps.count(); ++i) {
    const Mat& m = ps.value(i);
    const std::string file = tensor_filename(ps.name(i));
    save_mat(dir + "/" + file, m);
    tensors.push_back({{"name", ps.name(i)}, {"file", file}, {"rows", m.rows}, {"cols", m.cols}});
  }
  manifest["tensors"] = tensors;
  std::ofstream out(dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
}

void load_checkpoint(const std::string& dir, ParamStore& ps, uint64_t* seed,
                     uint64_t* config_hash) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("missing manifest in " + dir);
  json manifest = json::parse(in);
  if (seed) *seed = manifest.value("seed", 0ull);
  if (config_hash) *config_hash = manifest.value("config_hash", 0ull);
  for (const auto& t : manifest["tensors"]) {
    const std::string name = t["name"];
    Mat m = load_mat(dir + "/" + t["file"].get<std::string>());
    if (m.rows != t["rows"].get<int>() || m.cols != t["cols"].get<int>()) {
      throw std::runtime_error("tensor shape mismatch for " + name);
    }
    if (!ps.has(name)) throw std::runtime_error("checkpoint has unknown tensor " + name);
    Mat& dst = ps.value(name);
    if (!dst.same_shape(m)) {
      throw std::runtime_error("tensor " + name + " shape " + shape_str(m) +
                               " does not match model " + shape_str(dst));
    }
    dst = std::move(m);
  }
}

}  // namespace solid
