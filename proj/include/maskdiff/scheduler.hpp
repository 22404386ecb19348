#pragma once

// Unmask scheduling: which masked coordinates of the active block commit at
// each reverse step, and the replay that reconstructs those choices for a
// given completion during training.

#include <span>
#include <string>
#include <vector>

#include "maskdiff/policy.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

enum class SchedulerKind { top_k_confidence, random_k, gaussian_top_k, all_at_once };

SchedulerKind scheduler_kind_from_string(const std::string& name);
std::string to_string(SchedulerKind kind);

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::top_k_confidence;
  double fraction = 0.1;        // k, fraction of the block committed per step
  double gaussian_center = 0.0; // block-relative center of the position bump
  double gaussian_width = 0.0;  // sigma; <= 0 selects the default block_size / 2
  bool confidence_from_ref = false;   // replay confidences from the reference policy
  bool single_forward_replay = false; // one confidence pass per block instead of per step
  // Populated from the layout when a run is assembled; select() needs the
  // block size to turn the fraction into a count.
  int block_size = 0;
};

// floor(fraction * block_size) clamped to at least 1; all_at_once commits the
// whole block.
int tokens_per_step(const SchedulerConfig& cfg, int block_size);

// Pick the coordinates to unmask this step. masked_indices must be nonempty
// and sorted ascending; confidences align with it. The final budgeted step
// (step_budget_remaining == 1) force-commits everything that is left. Ties
// break toward the lower index. Returns ascending indices.
std::vector<int> select(const SchedulerConfig& cfg, const std::vector<int>& masked_indices,
                        std::span<const double> confidences, int block_offset,
                        int step_budget_remaining, Rng& rng);

struct ReplayResult {
  State state;                 // prompt + generated sequence at (block, t)
  std::vector<int> unmask_set; // generated coordinates committed at step t
};

// Reconstructs the block-s state reached after replaying the scheduler from
// the fully masked block down to step t, then the set it commits at t.
// Confidences come from conf_policy on the intermediate states (one forward
// per replayed step, or a single one under single_forward_replay). Pad
// coordinates are never masked and never selected. Only random_k consumes
// the rng.
ReplayResult training_unmask_sets(const SchedulerConfig& cfg, const PolicyParams& conf_policy,
                                  const State& completion, const State& prompt, int block, int t,
                                  const BlockLayout& layout, Rng& rng);

} // namespace maskdiff
