// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "solid/errors.hpp"

namespace solid {

enum class LogFormat { Csv, Tsv, Jsonl };

LogFormat log_format_from_string(const std::string& s);

struct Interaction {
  int user = 0;
  int item = 0;
  long long ts = 0;
};

/// Interactions with dense ids plus the original-id tables that map back.
struct RawLog {
  std::vector<Interaction> interactions;  // per-user chronological order
  std::vector<std::string> user_ids;      // dense -> original
  std::vector<std::string> item_ids;
  int user_vocab() const { return static_cast<int>(user_ids.size()); }
  int item_vocab() const { return static_cast<int>(item_ids.size()); }
};

/// One CTR record. Sequence entries use the shifted item-id space where 0 is
/// the padding sentinel and dense item v is stored as v+1; target_item uses
/// the same space. sem_seq uses semantic ids 1..k with 0 for padding.
struct Sample {
  int user = 0;
  int target_item = 0;
  int label = 0;
  std::vector<int> item_seq;
  std::vector<int> sem_seq;
  int target_sem = 0;  // semantic of the target item, filled when lifting
  int hist_end = 0;    // events before the target in the owner's history
};

struct SplitDataset {
  std::vector<Sample> train, valid, test;
  int item_vocab = 0;
  int user_vocab = 0;
  // Full positive history per user, chronological, dense item ids.
  std::vector<std::vector<int>> histories;
};

struct DatasetManifest {
  uint64_t seed = 0;
  int seq_len = 10;
  int k_train = 4;
  int k_test = 99;
  int item_vocab = 0;
  int user_vocab = 0;
};

struct Dataset {
  SplitDataset split;
  DatasetManifest manifest;
  std::vector<std::string> user_ids, item_ids;
};

RawLog load_interactions(const std::string& path, LogFormat fmt);

/// Last interaction of each user becomes the test positive, the
/// second-to-last the validation positive; users with fewer than three
/// interactions contribute to training only.
SplitDataset leave_one_out_split(const std::vector<Interaction>& interactions);

/// Fills item_seq for every positive with the <= seq_len interactions that
/// precede its target, left-padded with 0 (item ids shifted by +1).
void build_sequences(SplitDataset& split, int seq_len);

/// Appends k negatives per positive, sharing the positive's sequences. The
/// negative target is uniform over items absent from the owner's full
/// history. Samples stay grouped: each positive is followed by its k
/// negatives.
std::vector<Sample> sample_negatives(const std::vector<Sample>& positives, int k,
                                     int item_vocab,
                                     const std::vector<std::vector<int>>& histories,
                                     uint64_t seed);

/// End-to-end build: split, sequences, and per-split negative sampling.
Dataset build_dataset(const RawLog& log, int seq_len, int k_train, int k_test, uint64_t seed);

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace solid
