#pragma once

// Synthetic preference tasks. Completions are scored by a cheap programmatic
// rule; pairs order two completions by that rule with ties resampled, so the
// ground-truth preference direction is known exactly.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

struct SyntheticTaskConfig {
  std::string rule = "prefer-sorted"; // or "prefer-target-bigrams"
  int vocab = 8;
  int prompt_len = 0;
  int train_pairs = 512;
  int heldout_pairs = 512;
  uint64_t data_seed = 17;
};

// prefer-sorted: number of adjacent nondecreasing pairs.
// prefer-target-bigrams: number of positions with y[i+1] == (y[i] + 1) mod V.
double rule_score(const std::string& rule, const State& completion, int vocab);

struct Dataset {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> heldout;
};

// Deterministic in data_seed. The held-out split shares no pair with the
// training split.
Dataset generate_dataset(const SyntheticTaskConfig& task, const BlockLayout& layout);

// JSONL wire format, one pair per line:
//   {"prompt": [...], "pos": [...], "neg": [...]}
void write_pairs_jsonl(std::ostream& out, const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> read_pairs_jsonl(std::istream& in, int vocab);

} // namespace maskdiff
