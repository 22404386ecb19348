#include "maskdiff/mdp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace maskdiff {

Trajectory sample_trajectory(const PolicyParams& policy, const SchedulerConfig& scheduler,
                             const BlockLayout& layout, const State& prompt, Rng& rng) {
  const Vocab vocab = policy.vocab();
  const int L = layout.seq_len();
  const int P = static_cast<int>(prompt.size());
  for (TokenId tok : prompt) vocab.require_real(tok, "sample_trajectory");

  SchedulerConfig cfg = scheduler;
  if (cfg.block_size == 0) cfg.block_size = layout.block_size;

  const VisibilityMask vis = build_standalone_block_mask(layout, P);
  State full(prompt);
  full.insert(full.end(), static_cast<size_t>(L), vocab.mask_id());

  Trajectory traj;
  traj.prompt = prompt;
  traj.states.reserve(layout.horizon() + 1);
  traj.states.emplace_back(full.begin() + P, full.end());

  for (int s = 0; s < layout.num_blocks; ++s) {
    for (int t = layout.steps_per_block; t >= 1; --t) {
      std::vector<int> masked;
      for (int g = layout.block_begin(s); g < layout.block_end(s); ++g)
        if (vocab.is_mask(full[P + g])) masked.push_back(g);
      if (!masked.empty()) {
        PolicyOutput out = forward(policy, full, vis);
        std::vector<double> conf(masked.size());
        for (size_t j = 0; j < masked.size(); ++j) conf[j] = out.confidence[P + masked[j]];
        std::vector<int> sel = select(cfg, masked, conf, layout.block_begin(s), t, rng);
        for (int g : sel) {
          auto mu = out.mu_at(P + g);
          double u = rng.uniform01();
          double cum = 0.0;
          TokenId pick = vocab.size - 1;
          for (TokenId v = 0; v < vocab.size; ++v) {
            cum += mu[v];
            if (u < cum) { pick = v; break; }
          }
          full[P + g] = pick;
        }
      }
      traj.states.emplace_back(full.begin() + P, full.end());
    }
    for (int g = layout.block_begin(s); g < layout.block_end(s); ++g)
      if (vocab.is_mask(full[P + g]))
        throw std::runtime_error("sample_trajectory: scheduler left block " + std::to_string(s) +
                                 " masked after its step budget");
  }
  return traj;
}

double block_transition_log_prob(const PolicyParams& policy, const State& prompt,
                                 const State& before, const State& after, int block, int t,
                                 const MaskSchedule& sched, const BlockLayout& layout,
                                 const VisibilityMask& vis) {
  const Vocab vocab = policy.vocab();
  const int L = layout.seq_len();
  const int P = static_cast<int>(prompt.size());
  if (static_cast<int>(before.size()) != L || static_cast<int>(after.size()) != L)
    throw std::invalid_argument("block_transition_log_prob: state length does not match layout");
  if (block < 0 || block >= layout.num_blocks)
    throw std::invalid_argument("block_transition_log_prob: block out of range");
  if (t < 1 || t > sched.horizon())
    throw std::out_of_range("block_transition_log_prob: t outside [1, T_B]");
  if (sched.horizon() != layout.steps_per_block)
    throw std::invalid_argument("block_transition_log_prob: schedule horizon is not T_B");
  sched.require_evaluable("block_transition_log_prob");

  const double neg_inf = -std::numeric_limits<double>::infinity();
  int stay = 0;
  std::vector<int> committed;
  for (int g = 0; g < L; ++g) {
    const bool in_block = g >= layout.block_begin(block) && g < layout.block_end(block);
    if (!vocab.is_mask(before[g])) {
      if (after[g] != before[g])
        throw std::invalid_argument("block_transition_log_prob: unmasked token changed value");
      continue;
    }
    if (!in_block) {
      if (!vocab.is_mask(after[g]))
        throw std::invalid_argument(
            "block_transition_log_prob: coordinate outside the block was committed");
      continue;
    }
    if (vocab.is_mask(after[g])) {
      ++stay;
    } else {
      vocab.require_real(after[g], "block_transition_log_prob");
      committed.push_back(g);
    }
  }

  double total = 0.0;
  if (stay > 0) {
    const double c = sched.stay_coeff(t);
    if (c == 0.0) return neg_inf;
    total += stay * std::log(c);
  }
  if (!committed.empty()) {
    const double c = sched.unmask_coeff(t);
    if (c == 0.0) return neg_inf;
    State full(prompt);
    full.insert(full.end(), before.begin(), before.end());
    PolicyOutput out = forward(policy, full, vis);
    for (int g : committed) total += std::log(c) + out.log_mu_at(P + g)[after[g]];
  }
  return total;
}

double trajectory_log_prob(const PolicyParams& policy, const Trajectory& traj,
                           const MaskSchedule& sched, const BlockLayout& layout) {
  const Vocab vocab = policy.vocab();
  TrajectoryIssue issue = validate_trajectory(traj, layout, vocab);
  if (!issue.ok) throw std::invalid_argument("trajectory_log_prob: " + issue.message);
  if (sched.horizon() != layout.steps_per_block)
    throw std::invalid_argument("trajectory_log_prob: schedule horizon is not T_B");

  const VisibilityMask vis = build_standalone_block_mask(layout, static_cast<int>(traj.prompt.size()));
  double total = 0.0;
  for (int j = 0; j < layout.horizon(); ++j) {
    total += block_transition_log_prob(policy, traj.prompt, traj.states[j], traj.states[j + 1],
                                       layout.block_of_transition(j), layout.step_of_transition(j),
                                       sched, layout, vis);
    if (std::isinf(total)) return total;
  }
  return total;
}

} // namespace maskdiff
