// SPDX-License-Identifier: Apache-2.0
#include "solid/data.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "solid/mat.hpp"
#include "solid/rng.hpp"

namespace solid {

namespace fs = std::filesystem;
using nlohmann::json;

LogFormat log_format_from_string(const std::string& s) {
  if (s == "csv") return LogFormat::Csv;
  if (s == "tsv") return LogFormat::Tsv;
  if (s == "jsonl") return LogFormat::Jsonl;
  throw ConfigError("unknown log format: " + s);
}

namespace {

bool parse_ll(const std::string& s, long long& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto r = std::from_chars(b, e, out);
  return r.ec == std::errc{} && r.ptr == e;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    size_t i = 0;
    while (i < f.size() && f[i] == ' ') ++i;
    f.erase(0, i);
  }
  return out;
}

}  // namespace

RawLog load_interactions(const std::string& path, LogFormat fmt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  struct Rec {
    std::string user, item;
    long long ts;
  };
  std::vector<Rec> recs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    Rec r;
    if (fmt == LogFormat::Jsonl) {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        throw DataError(path + ": malformed record at line " + std::to_string(lineno));
      }
      if (!j.contains("user") || !j.contains("item") || !j.contains("timestamp")) {
        throw DataError(path + ": missing field at line " + std::to_string(lineno));
      }
      r.user = j["user"].is_string() ? j["user"].get<std::string>() : j["user"].dump();
      r.item = j["item"].is_string() ? j["item"].get<std::string>() : j["item"].dump();
      if (j["timestamp"].is_number()) {
        r.ts = j["timestamp"].get<long long>();
      } else if (!parse_ll(j["timestamp"].get<std::string>(), r.ts)) {
        throw DataError(path + ": bad timestamp at line " + std::to_string(lineno));
      }
    } else {
      const char sep = fmt == LogFormat::Csv ? ',' : '\t';
      auto f = split_fields(line, sep);
      if (f.size() < 3) {
        throw DataError(path + ": malformed record at line " + std::to_string(lineno));
      }
      if (lineno == 1 && !parse_ll(f[2], r.ts)) continue;  // header row
      if (!parse_ll(f[2], r.ts)) {
        throw DataError(path + ": bad timestamp at line " + std::to_string(lineno));
      }
      r.user = f[0];
      r.item = f[1];
      if (r.user.empty() || r.item.empty()) {
        throw DataError(path + ": empty id at line " + std::to_string(lineno));
      }
    }
    recs.push_back(std::move(r));
  }
  if (recs.empty()) throw DataError(path + ": no interactions");

  RawLog log;
  std::unordered_map<std::string, int> umap, imap;
  log.interactions.reserve(recs.size());
  for (const Rec& r : recs) {
    auto [uit, unew] = umap.try_emplace(r.user, static_cast<int>(log.user_ids.size()));
    if (unew) log.user_ids.push_back(r.user);
    auto [iit, inew] = imap.try_emplace(r.item, static_cast<int>(log.item_ids.size()));
    if (inew) log.item_ids.push_back(r.item);
    log.interactions.push_back({uit->second, iit->second, r.ts});
  }

  // Per-user chronological order; ties keep file order (stable sort), then
  // exact duplicate triples are dropped.
  std::stable_sort(log.interactions.begin(), log.interactions.end(),
                   [](const Interaction& a, const Interaction& b) {
                     if (a.user != b.user) return a.user < b.user;
                     return a.ts < b.ts;
                   });
  std::vector<Interaction> dedup;
  dedup.reserve(log.interactions.size());
  std::unordered_set<uint64_t> seen;
  for (const Interaction& it : log.interactions) {
    uint64_t key = fnv1a(&it.user, sizeof(it.user));
    key = fnv1a(&it.item, sizeof(it.item), key);
    key = fnv1a(&it.ts, sizeof(it.ts), key);
    if (seen.insert(key).second) dedup.push_back(it);
  }
  log.interactions = std::move(dedup);
  return log;
}

SplitDataset leave_one_out_split(const std::vector<Interaction>& interactions) {
  SplitDataset out;
  int max_user = -1, max_item = -1;
  std::map<int, std::vector<std::pair<long long, int>>> per_user;  // ordered by user id
  for (const Interaction& it : interactions) {
    per_user[it.user].push_back({it.ts, it.item});
    max_user = std::max(max_user, it.user);
    max_item = std::max(max_item, it.item);
  }
  out.user_vocab = max_user + 1;
  out.item_vocab = max_item + 1;
  out.histories.assign(out.user_vocab, {});

  for (auto& [user, events] : per_user) {
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    // Repeat interactions with the same item keep only their first
    // occurrence, so a held-out positive never reappears in training.
    auto& hist = out.histories[user];
    hist.reserve(events.size());
    std::unordered_set<int> seen_items;
    for (const auto& [ts, item] : events) {
      if (seen_items.insert(item).second) hist.push_back(item);
    }

    const int n = static_cast<int>(hist.size());
    const bool heldout = n >= 3;
    const int n_train = heldout ? n - 2 : n;
    for (int i = 0; i < n_train; ++i) {
      Sample s;
      s.user = user;
      s.target_item = hist[i] + 1;
      s.label = 1;
      s.hist_end = i;
      out.train.push_back(std::move(s));
    }
    if (heldout) {
      Sample sv;
      sv.user = user;
      sv.target_item = hist[n - 2] + 1;
      sv.label = 1;
      sv.hist_end = n - 2;
      out.valid.push_back(std::move(sv));
      Sample st;
      st.user = user;
      st.target_item = hist[n - 1] + 1;
      st.label = 1;
      st.hist_end = n - 1;
      out.test.push_back(std::move(st));
    }
  }
  return out;
}

void build_sequences(SplitDataset& split, int seq_len) {
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  auto fill = [&](Sample& s) {
    s.item_seq.assign(seq_len, 0);
    const auto& hist = split.histories[s.user];
    const int end = s.hist_end;
    const int take = std::min(end, seq_len);
    for (int i = 0; i < take; ++i) {
      s.item_seq[seq_len - take + i] = hist[end - take + i] + 1;
    }
  };
  for (auto* part : {&split.train, &split.valid, &split.test}) {
    for (Sample& s : *part) fill(s);
  }
}

std::vector<Sample> sample_negatives(const std::vector<Sample>& positives, int k, int item_vocab,
                                     const std::vector<std::vector<int>>& histories,
                                     uint64_t seed) {
  if (k < 1) throw ConfigError("negative count must be >= 1");
  Rng rng(seed);

  // Per-user exclusion sets, built lazily.
  std::vector<std::unordered_set<int>> excluded(histories.size());
  std::vector<bool> built(histories.size(), false);

  std::vector<Sample> out;
  out.reserve(positives.size() * static_cast<size_t>(k + 1));
  for (const Sample& pos : positives) {
    if (!built[pos.user]) {
      excluded[pos.user].insert(histories[pos.user].begin(), histories[pos.user].end());
      built[pos.user] = true;
    }
    const auto& excl = excluded[pos.user];
    if (static_cast<int>(excl.size()) >= item_vocab) {
      throw DataError("user " + std::to_string(pos.user) +
                      " interacted with the whole vocabulary; cannot sample negatives");
    }
    out.push_back(pos);
    for (int j = 0; j < k; ++j) {
      int cand;
      do {
        cand = rng.uniform_int(item_vocab);
      } while (excl.count(cand) > 0);
      Sample neg = pos;
      neg.target_item = cand + 1;
      neg.label = 0;
      out.push_back(std::move(neg));
    }
  }
  return out;
}

Dataset build_dataset(const RawLog& log, int seq_len, int k_train, int k_test, uint64_t seed) {
  Dataset ds;
  ds.split = leave_one_out_split(log.interactions);
  ds.split.user_vocab = std::max(ds.split.user_vocab, log.user_vocab());
  ds.split.item_vocab = std::max(ds.split.item_vocab, log.item_vocab());
  if (static_cast<int>(ds.split.histories.size()) < ds.split.user_vocab) {
    ds.split.histories.resize(ds.split.user_vocab);
  }
  build_sequences(ds.split, seq_len);
  Rng root(seed);
  ds.split.train = sample_negatives(ds.split.train, k_train, ds.split.item_vocab,
                                    ds.split.histories, root.fork(1).next_u64());
  ds.split.valid = sample_negatives(ds.split.valid, k_test, ds.split.item_vocab,
                                    ds.split.histories, root.fork(2).next_u64());
  ds.split.test = sample_negatives(ds.split.test, k_test, ds.split.item_vocab,
                                   ds.split.histories, root.fork(3).next_u64());
  ds.manifest = {seed, seq_len, k_train, k_test, ds.split.item_vocab, ds.split.user_vocab};
  ds.user_ids = log.user_ids;
  ds.item_ids = log.item_ids;
  return ds;
}

namespace {

void write_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) s.push_back('|');
      s += std::to_string(v[i]);
    }
    return s;
  };
  for (const Sample& s : samples) {
    out << s.user << '\t' << s.target_item << '\t' << s.label << '\t' << join(s.item_seq) << '\t'
        << join(s.sem_seq.empty() ? std::vector<int>(s.item_seq.size(), 0) : s.sem_seq) << '\t'
        << s.hist_end << '\n';
  }
  if (!out) throw DataError("short write to " + path);
}

std::vector<int> parse_joined(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  size_t start = 0;
  while (true) {
    size_t bar = s.find('|', start);
    const std::string tok = s.substr(start, bar == std::string::npos ? bar : bar - start);
    out.push_back(std::stoi(tok));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

std::vector<Sample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<Sample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_fields(line, '\t');
    if (f.size() < 5) throw DataError(path + ": malformed sample at line " + std::to_string(lineno));
    Sample s;
    s.user = std::stoi(f[0]);
    s.target_item = std::stoi(f[1]);
    s.label = std::stoi(f[2]);
    s.item_seq = parse_joined(f[3]);
    s.sem_seq = parse_joined(f[4]);
    if (f.size() >= 6) s.hist_end = std::stoi(f[5]);
    out.push_back(std::move(s));
  }
  return out;
}

void write_id_map(const std::string& path, const std::vector<std::string>& ids) {
  std::ofstream out(path);
  for (size_t i = 0; i < ids.size(); ++i) out << ids[i] << '\t' << i << '\n';
}

std::vector<std::string> read_id_map(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    ids.push_back(line.substr(0, tab));
  }
  return ids;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  write_samples(dir + "/samples_train.tsv", ds.split.train);
  write_samples(dir + "/samples_valid.tsv", ds.split.valid);
  write_samples(dir + "/samples_test.tsv", ds.split.test);
  write_id_map(dir + "/user_ids.tsv", ds.user_ids);
  write_id_map(dir + "/item_ids.tsv", ds.item_ids);

  std::ofstream hist(dir + "/histories.tsv");
  for (size_t u = 0; u < ds.split.histories.size(); ++u) {
    hist << u;
    for (int item : ds.split.histories[u]) hist << '\t' << item;
    hist << '\n';
  }

  json m;
  m["seed"] = ds.manifest.seed;
  m["seq_len"] = ds.manifest.seq_len;
  m["k_train"] = ds.manifest.k_train;
  m["k_test"] = ds.manifest.k_test;
  m["item_vocab"] = ds.manifest.item_vocab;
  m["user_vocab"] = ds.manifest.user_vocab;
  std::ofstream out(dir + "/manifest.json");
  out << m.dump(2) << "\n";
  if (!out) throw DataError("cannot write dataset manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream min(dir + "/manifest.json");
  if (!min) throw DataError("missing dataset manifest in " + dir);
  json m = json::parse(min);
  Dataset ds;
  ds.manifest.seed = m.value("seed", 0ull);
  ds.manifest.seq_len = m.value("seq_len", 10);
  ds.manifest.k_train = m.value("k_train", 4);
  ds.manifest.k_test = m.value("k_test", 99);
  ds.manifest.item_vocab = m.value("item_vocab", 0);
  ds.manifest.user_vocab = m.value("user_vocab", 0);
  ds.split.item_vocab = ds.manifest.item_vocab;
  ds.split.user_vocab = ds.manifest.user_vocab;
  ds.split.train = read_samples(dir + "/samples_train.tsv");
  ds.split.valid = read_samples(dir + "/samples_valid.tsv");
  ds.split.test = read_samples(dir + "/samples_test.tsv");
  ds.user_ids = read_id_map(dir + "/user_ids.tsv");
  ds.item_ids = read_id_map(dir + "/item_ids.tsv");

  ds.split.histories.assign(ds.manifest.user_vocab, {});
  std::ifstream hin(dir + "/histories.tsv");
  std::string line;
  while (std::getline(hin, line)) {
    if (line.empty()) continue;
    auto f = split_fields(line, '\t');
    const int u = std::stoi(f[0]);
    auto& h = ds.split.histories[u];
    for (size_t i = 1; i < f.size(); ++i) h.push_back(std::stoi(f[i]));
  }
  return ds;
}

}  // namespace solid
