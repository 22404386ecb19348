#pragma once

// Reduced estimators. The transition log-ratio collapses to a sum of
// categorical log-ratios at the newly committed coordinates; the schedule
// coefficients cancel, so none of these functions take a MaskSchedule unless
// they also produce absolute (non-ratio) quantities.

#include <span>
#include <string>
#include <vector>

#include "maskdiff/matrix.hpp"
#include "maskdiff/mdp.hpp"
#include "maskdiff/policy.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/scheduler.hpp"
#include "maskdiff/trajectory.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// log [ pi_theta(after | before) / pi_ref(after | before) ] for one
// transition, evaluated as the sum over newly committed coordinates of
// log mu_theta - log mu_ref. Both policies see the identical input state and
// visibility. before/after are full sequences (prompt included, if any).
double transition_log_ratio(const PolicyParams& theta, const PolicyParams& ref, const State& before,
                            const State& after, const VisibilityMask& vis);

struct StateReducedEstimate {
  double value = 0.0;
  std::vector<std::vector<int>> steps; // sampled within-block times, per block
};

// Unbiased single-trajectory estimate of log pi(traj): per block, average the
// transition log-prob at samples_per_block uniformly drawn within-block
// times, scaled by T_B.
StateReducedEstimate state_reduced_log_prob(const PolicyParams& policy, const Trajectory& traj,
                                            const MaskSchedule& sched, const BlockLayout& layout,
                                            int samples_per_block, Rng& rng);

// The same estimator at explicit per-block times; used to enumerate its law.
double state_reduced_log_prob_at(const PolicyParams& policy, const Trajectory& traj,
                                 const MaskSchedule& sched, const BlockLayout& layout,
                                 std::span<const int> step_per_block);

struct VarianceReport {
  Matrix delta;                       // N_B x T_B, delta(s, t-1)
  double exact_sum = 0.0;             // sum of every delta
  double estimator_mean = 0.0;        // enumerated mean of the reduced estimator
  double estimator_variance = 0.0;    // enumerated variance of the reduced estimator
  double predicted_variance = 0.0;    // sum_s T_B^2 * population variance of row s
  std::vector<double> block_variance; // per-block population variance
};

// Builds the full per-(block, step) log-ratio table for a completion under a
// deterministic scheduler, then checks the decomposition by enumerating every
// per-block time combination (guarded at max_combinations; hard error above).
VarianceReport variance_audit(const PolicyParams& theta, const PolicyParams& ref,
                              const State& completion, const State& prompt,
                              const SchedulerConfig& scheduler, const BlockLayout& layout,
                              int64_t max_combinations = 1'000'000);

struct SampledVariance {
  double mean = 0.0;
  double variance = 0.0;
  double std_error = 0.0; // of the mean
};

// Monte-Carlo stand-in for the enumeration when T_B^{N_B} is out of reach.
SampledVariance variance_audit_sampled(const PolicyParams& theta, const PolicyParams& ref,
                                       const State& completion, const State& prompt,
                                       const SchedulerConfig& scheduler, const BlockLayout& layout,
                                       int num_samples, Rng& rng);

struct BlockScore {
  int block = 0;
  int t = 0;
  std::vector<int> unmask_set;          // generated coordinates, ascending
  std::vector<double> token_log_ratios; // aligned with unmask_set
  double delta = 0.0;                   // their sum
};

struct ScoreEstimate {
  double value = 0.0; // sum over blocks of (T_B / m) * delta, m samples each
  int t_scale = 0;    // T_B
  int samples_per_block = 1;
  std::vector<BlockScore> per_block; // m * N_B entries, sample-major

  std::string to_json() const;
};

// One sampled reduction plan: per-block times plus the replayed states and
// unmask sets they induce. Kept explicit so a preference pair can share its
// time samples across both completions.
struct ScorePlan {
  int samples_per_block = 1;
  std::vector<int> steps;                                  // m * N_B, sample-major
  std::vector<std::vector<State>> block_states;            // per sample: N_B block slices
  std::vector<std::vector<std::vector<int>>> unmask_sets;  // per sample, per block
};

// Draw fresh per-block times (or take them from step_override, sized m * N_B)
// and replay the scheduler for each. conf_policy supplies replay confidences;
// pass the reference policy when the scheduler says confidence_from_ref.
ScorePlan build_score_plan(const SchedulerConfig& scheduler, const PolicyParams& conf_policy,
                           const State& completion, const State& prompt, const BlockLayout& layout,
                           int samples_per_block, Rng& rng,
                           std::span<const int> step_override = {});

// Evaluate a plan: sum over committed coordinates of log mu_theta - log mu_ref
// on the replayed states, scaled by T_B / m. use_packed routes both policies
// through one packed forward per sample instead of per-block passes.
ScoreEstimate score_from_plan(const PolicyParams& theta, const PolicyParams& ref,
                              const ScorePlan& plan, const State& completion, const State& prompt,
                              const BlockLayout& layout, bool use_packed);

// Convenience composition of build_score_plan and score_from_plan.
ScoreEstimate score(const PolicyParams& theta, const PolicyParams& ref, const State& completion,
                    const State& prompt, const BlockLayout& layout,
                    const SchedulerConfig& scheduler, int samples_per_block, bool use_packed,
                    Rng& rng);

// Rebuild the full replayed state for one plan entry (blocks before `block`
// clean, later blocks masked, pads preserved). Shared by the evaluators and
// the gradient assembly in the objectives.
State reconstruct_plan_state(const ScorePlan& plan, int sample, int block, const State& completion,
                             const State& prompt, const BlockLayout& layout, const Vocab& vocab);

} // namespace maskdiff
