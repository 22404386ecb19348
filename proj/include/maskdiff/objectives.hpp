#pragma once

// Training objectives. The headline preference loss scores each completion
// with the reduced estimator and pushes the scaled score gap through a
// projection; the baselines reproduce the standard masked-LM and DPO-proxy
// recipes. Every objective can hand back analytic parameter gradients.

#include <optional>

#include "maskdiff/estimators.hpp"
#include "maskdiff/policy.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/scheduler.hpp"
#include "maskdiff/trajectory.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

enum class Projection { log_sigmoid, ipo_square, hinge, apo };

Projection projection_from_string(const std::string& name);
std::string to_string(Projection p);

struct ProjectionConfig {
  Projection kind = Projection::log_sigmoid;
  std::optional<double> ipo_margin; // required by ipo_square
  std::optional<double> apo_shift;  // required by apo
};

// g(z) and g'(z) for the configured projection:
//   log_sigmoid: -log sigmoid(z)      ipo_square: (z - margin)^2
//   hinge:       max(0, 1 - z)        apo:        -log sigmoid(z - shift)
double project_loss(const ProjectionConfig& cfg, double z);
double project_loss_grad(const ProjectionConfig& cfg, double z);

struct DtrpoConfig {
  double lambda = 0.05;
  ProjectionConfig projection;
  SchedulerConfig scheduler;
  int samples_per_block = 1;
  bool use_packed = true;
};

struct PairLoss {
  double loss = 0.0;
  double z = 0.0; // scaled score gap fed to the projection
  ScoreEstimate pos;
  ScoreEstimate neg;
};

// Preference loss g(lambda * (S(pos) - S(neg))). The per-block time samples
// are drawn once and shared by both completions. Gradients flow to theta
// only; when grads is non-null they are accumulated (unscaled) into it.
PairLoss dtrpo_loss(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref,
                    const DtrpoConfig& cfg, const BlockLayout& layout, Rng& rng,
                    ParamGrads* grads = nullptr);

struct ScalarLoss {
  double loss = 0.0;
  int masked_count = 0;
};

// Masked cross-entropy at a corruption level drawn from the schedule
// (t uniform on [1, T]); full bidirectional attention. A draw that masks
// nothing contributes zero loss and zero gradient.
ScalarLoss naive_masked_loss(const State& completion, const State& prompt,
                             const PolicyParams& theta, const MaskSchedule& sched, Rng& rng,
                             ParamGrads* grads = nullptr);

// Importance-weighted masked cross-entropy: mask each coordinate with
// probability u ~ U(0, 1], weight the sum by 1/u.
ScalarLoss elbo_sft_loss(const State& completion, const State& prompt, const PolicyParams& theta,
                         Rng& rng, ParamGrads* grads = nullptr);

// DPO with the mean of per-block masked log-likelihoods standing in for the
// sequence log-likelihood. Block corruptions are drawn once and shared across
// both completions and both policies.
PairLoss mean_field_dpo_loss(const PreferencePair& pair, const PolicyParams& theta,
                             const PolicyParams& ref, double lambda, const BlockLayout& layout,
                             Rng& rng, ParamGrads* grads = nullptr);

// DPO with a Monte-Carlo masked-ELBO proxy for each log-likelihood; the n_mc
// corruption draws are shared across completions and policies.
PairLoss vrpo_loss(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref,
                   double lambda, int n_mc, Rng& rng, ParamGrads* grads = nullptr);

struct PgLoss {
  double loss = 0.0;
  double log_ratio = 0.0; // reduced estimate, before clamping
  double ratio = 0.0;     // exp of the clamped estimate
  bool clamped = false;   // clamped ratios contribute zero gradient
};

// Policy-gradient surrogate -ratio * advantage on a sampled trajectory, with
// the trajectory ratio estimated through the reduced per-block form. The
// reference is treated as a constant.
PgLoss pg_surrogate_loss(const Trajectory& traj, const PolicyParams& theta,
                         const PolicyParams& ref, double advantage, const BlockLayout& layout,
                         Rng& rng, double clamp_bound = 30.0, ParamGrads* grads = nullptr);

} // namespace maskdiff
