#pragma once

// Training loop and evaluation. Every random draw comes from a named stream
// of the master seed, so reruns with the same config produce byte-identical
// metric streams.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "maskdiff/dataset.hpp"
#include "maskdiff/objectives.hpp"
#include "maskdiff/optimizer.hpp"
#include "maskdiff/policy.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

struct TrainConfig {
  std::string objective = "dtrpo"; // dtrpo | naive_masked | elbo_sft | mean_field_dpo | vrpo
  DtrpoConfig dtrpo;               // lambda doubles as the baselines' scale
  AdamConfig adam;
  int batch_size = 16;
  int grad_accum = 1;
  int epochs = 1000;
  int max_steps = 2000; // hard cap on optimizer steps; 0 runs the initial eval only
  double warmup_fraction = 0.1;
  int eval_every = 100;
  int eval_reps = 3;        // margin-accuracy repetitions, averaged
  int eval_generations = 32; // rollouts per side for the win rate
  int vrpo_n_mc = 4;
  uint64_t master_seed = 1;
  int embed_dim = 16;
  double init_scale = 0.3;
  TrainableMask trainable;
};

struct MetricsRecord {
  int step = 0;
  std::string objective;
  double loss = 0.0;   // mean train loss since the previous record
  double z_mean = 0.0; // mean score gap fed to the projection; 0 for non-pair objectives
  double margin_accuracy = 0.0;
  double win_rate = 0.0;
  uint64_t seed = 0;
  // Wall-clock time is kept in memory for humans but never serialized; run
  // outputs must be byte-identical across reruns.
  double wall_seconds = 0.0;

  std::string to_jsonl() const;
};

struct EvalResult {
  double margin_accuracy = 0.0;
  double win_rate = 0.0;
};

// Margin accuracy: fraction of held-out pairs whose preferred completion gets
// the higher score (ties count half), averaged over eval_reps independent
// time draws; the draws are shared within each pair. Win rate: fraction of
// prompts where a fresh rollout of theta beats one of ref on the task rule.
EvalResult evaluate_policy(const PolicyParams& theta, const PolicyParams& ref,
                           const std::vector<PreferencePair>& heldout, const TrainConfig& cfg,
                           const SyntheticTaskConfig& task, const BlockLayout& layout,
                           uint64_t eval_seed);

struct TrainResult {
  PolicyParams params;
  PolicyParams ref;
  std::vector<MetricsRecord> metrics;
  int steps_run = 0;
};

// Runs the configured objective over the dataset. Metrics are recorded every
// eval_every steps and at the final step; each record is also written to
// metrics_jsonl when provided. Aborts with an exception on non-finite loss.
TrainResult train(const TrainConfig& cfg, const SyntheticTaskConfig& task,
                  const BlockLayout& layout, const Dataset& data, std::ostream* metrics_jsonl);

} // namespace maskdiff
