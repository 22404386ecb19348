#pragma once

// Brute-force references the estimator and objective tests check against.
// Everything here favors transparency over speed: exhaustive enumeration with
// hard search-space guards, the uncancelled per-coordinate kernel product,
// and central finite differences.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "maskdiff/mdp.hpp"
#include "maskdiff/policy.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/scheduler.hpp"
#include "maskdiff/trajectory.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

struct WeightedTrajectory {
  Trajectory traj;
  double log_prob;
};

struct EnumerationResult {
  std::vector<WeightedTrajectory> items;
  double total_probability = 0.0;             // pairwise sum over items
  std::map<State, double> completion_marginals; // final-state distribution
};

// Every trajectory the reverse kernel can produce, with its exact
// log-probability: each masked coordinate of the active block independently
// stays masked or commits to a vocabulary value. Throws once the visited
// node count exceeds max_nodes; guards are hard errors, never truncation.
EnumerationResult enumerate_kernel_trajectories(const PolicyParams& policy, const State& prompt,
                                                const MaskSchedule& sched, const BlockLayout& layout,
                                                int64_t max_nodes = 10'000'000);

// Every trajectory a scheduler-driven rollout can produce, with its exact
// probability: deterministic schedulers contribute one branch per step,
// random_k branches over unordered subsets uniformly, and committed values
// branch over the policy categorical. Matches sample_trajectory's law.
EnumerationResult enumerate_scheduler_trajectories(const PolicyParams& policy, const State& prompt,
                                                   const SchedulerConfig& scheduler,
                                                   const BlockLayout& layout,
                                                   int64_t max_nodes = 10'000'000);

// Single-horizon reading of one transition: the four-case kernel term of
// every coordinate, schedule coefficients left uncancelled. Visibility
// defaults to full attention over prompt + state. Throws on a non-monotone
// successor.
double full_kernel_transition_log_prob(const PolicyParams& policy, const State& prompt,
                                       const State& before, const State& after, int t,
                                       const MaskSchedule& sched,
                                       const VisibilityMask* vis = nullptr);

// Central differences over every parameter entry. Throws if the loss comes
// back non-finite anywhere on the stencil.
ParamGrads finite_difference_gradient(const std::function<double(const PolicyParams&)>& loss,
                                      const PolicyParams& at, double step);

// Summation by pairwise (tree) reduction; keeps tight tolerances honest when
// adding many terms.
double pairwise_sum(std::span<const double> xs);

} // namespace maskdiff
