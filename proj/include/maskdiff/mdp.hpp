#pragma once

// The block-decomposed denoising MDP: rollouts driven by an unmask scheduler,
// and the exact log-probability a policy assigns to a recorded trajectory.
// The trajectory measure multiplies per-transition kernels only; the
// deterministic fully-masked initial state contributes no term.

#include "maskdiff/policy.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/scheduler.hpp"
#include "maskdiff/trajectory.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// Roll the reverse process block by block. At each step the scheduler picks
// the coordinates to commit and each committed coordinate draws its value
// from the policy categorical. Throws if a block is not fully unmasked after
// its budget, which the forced terminal step rules out for sane schedulers.
Trajectory sample_trajectory(const PolicyParams& policy, const SchedulerConfig& scheduler,
                             const BlockLayout& layout, const State& prompt, Rng& rng);

// log p(after | before) for the within-block step t of the given block:
// committed coordinates contribute the unmask coefficient times the policy
// categorical, surviving masks the stay coefficient, and everything else must
// carry over unchanged. before/after cover the generated region only. The
// schedule is indexed by within-block time, so its horizon must be T_B.
// Returns -inf for transitions the schedule assigns probability zero.
double block_transition_log_prob(const PolicyParams& policy, const State& prompt,
                                 const State& before, const State& after, int block, int t,
                                 const MaskSchedule& sched, const BlockLayout& layout,
                                 const VisibilityMask& vis);

// Sum of block_transition_log_prob over all T transitions of a structurally
// valid trajectory.
double trajectory_log_prob(const PolicyParams& policy, const Trajectory& traj,
                           const MaskSchedule& sched, const BlockLayout& layout);

} // namespace maskdiff
