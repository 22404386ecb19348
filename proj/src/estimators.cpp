#include "maskdiff/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "maskdiff/oracle.hpp"

namespace maskdiff {

namespace {

void require_same_alphabet(const PolicyParams& theta, const PolicyParams& ref, const char* what) {
  if (theta.vocab_size != ref.vocab_size)
    throw std::invalid_argument(std::string(what) + ": policy and reference vocabularies differ");
}

} // namespace

double transition_log_ratio(const PolicyParams& theta, const PolicyParams& ref, const State& before,
                            const State& after, const VisibilityMask& vis) {
  require_same_alphabet(theta, ref, "transition_log_ratio");
  const std::vector<int> committed = newly_unmasked_indices(before, after, theta.vocab());
  if (committed.empty()) return 0.0;
  const PolicyOutput out_theta = forward(theta, before, vis);
  const PolicyOutput out_ref = forward(ref, before, vis);
  double total = 0.0;
  for (int g : committed) {
    const TokenId y = after[g];
    theta.vocab().require_real(y, "transition_log_ratio");
    total += out_theta.log_mu_at(g)[y] - out_ref.log_mu_at(g)[y];
  }
  return total;
}

StateReducedEstimate state_reduced_log_prob(const PolicyParams& policy, const Trajectory& traj,
                                            const MaskSchedule& sched, const BlockLayout& layout,
                                            int samples_per_block, Rng& rng) {
  if (samples_per_block < 1)
    throw std::invalid_argument("state_reduced_log_prob: samples_per_block must be >= 1");
  TrajectoryIssue issue = validate_trajectory(traj, layout, policy.vocab());
  if (!issue.ok) throw std::invalid_argument("state_reduced_log_prob: " + issue.message);
  const VisibilityMask vis =
      build_standalone_block_mask(layout, static_cast<int>(traj.prompt.size()));
  const int T_B = layout.steps_per_block;

  StateReducedEstimate est;
  est.steps.resize(layout.num_blocks);
  const double scale = static_cast<double>(T_B) / static_cast<double>(samples_per_block);
  for (int s = 0; s < layout.num_blocks; ++s) {
    for (int k = 0; k < samples_per_block; ++k) {
      const int t = rng.uniform_int(T_B) + 1;
      est.steps[s].push_back(t);
      const int j = s * T_B + (T_B - t);
      est.value += scale * block_transition_log_prob(policy, traj.prompt, traj.states[j],
                                                     traj.states[j + 1], s, t, sched, layout, vis);
    }
  }
  return est;
}

double state_reduced_log_prob_at(const PolicyParams& policy, const Trajectory& traj,
                                 const MaskSchedule& sched, const BlockLayout& layout,
                                 std::span<const int> step_per_block) {
  if (static_cast<int>(step_per_block.size()) != layout.num_blocks)
    throw std::invalid_argument("state_reduced_log_prob_at: one step per block required");
  TrajectoryIssue issue = validate_trajectory(traj, layout, policy.vocab());
  if (!issue.ok) throw std::invalid_argument("state_reduced_log_prob_at: " + issue.message);
  const VisibilityMask vis =
      build_standalone_block_mask(layout, static_cast<int>(traj.prompt.size()));
  const int T_B = layout.steps_per_block;

  double value = 0.0;
  for (int s = 0; s < layout.num_blocks; ++s) {
    const int t = step_per_block[s];
    if (t < 1 || t > T_B)
      throw std::invalid_argument("state_reduced_log_prob_at: step outside [1, T_B]");
    const int j = s * T_B + (T_B - t);
    value += T_B * block_transition_log_prob(policy, traj.prompt, traj.states[j],
                                             traj.states[j + 1], s, t, sched, layout, vis);
  }
  return value;
}

namespace {

// Per-(block, step) log-ratio of one completion under a deterministic replay.
Matrix build_delta_table(const PolicyParams& theta, const PolicyParams& ref,
                         const State& completion, const State& prompt,
                         const SchedulerConfig& scheduler, const BlockLayout& layout) {
  require_same_alphabet(theta, ref, "variance_audit");
  if (scheduler.kind == SchedulerKind::random_k)
    throw std::invalid_argument("variance_audit: requires a deterministic scheduler");
  SchedulerConfig cfg = scheduler;
  if (cfg.block_size == 0) cfg.block_size = layout.block_size;
  const VisibilityMask vis =
      build_standalone_block_mask(layout, static_cast<int>(prompt.size()));
  const int P = static_cast<int>(prompt.size());
  const PolicyParams& conf = cfg.confidence_from_ref ? ref : theta;

  Matrix delta(layout.num_blocks, layout.steps_per_block);
  Rng unused(0);
  for (int s = 0; s < layout.num_blocks; ++s) {
    for (int t = 1; t <= layout.steps_per_block; ++t) {
      ReplayResult rep = training_unmask_sets(cfg, conf, completion, prompt, s, t, layout, unused);
      if (rep.unmask_set.empty()) continue; // delta stays 0
      const PolicyOutput out_theta = forward(theta, rep.state, vis);
      const PolicyOutput out_ref = forward(ref, rep.state, vis);
      double d = 0.0;
      for (int g : rep.unmask_set)
        d += out_theta.log_mu_at(P + g)[completion[g]] - out_ref.log_mu_at(P + g)[completion[g]];
      delta(s, t - 1) = d;
    }
  }
  return delta;
}

} // namespace

VarianceReport variance_audit(const PolicyParams& theta, const PolicyParams& ref,
                              const State& completion, const State& prompt,
                              const SchedulerConfig& scheduler, const BlockLayout& layout,
                              int64_t max_combinations) {
  VarianceReport report;
  report.delta = build_delta_table(theta, ref, completion, prompt, scheduler, layout);
  const int N_B = layout.num_blocks;
  const int T_B = layout.steps_per_block;

  report.exact_sum = pairwise_sum(report.delta.data);

  report.block_variance.resize(N_B);
  long double predicted = 0.0L;
  for (int s = 0; s < N_B; ++s) {
    long double sum = 0.0L, sum_sq = 0.0L;
    for (int t = 0; t < T_B; ++t) {
      const long double d = report.delta(s, t);
      sum += d;
      sum_sq += d * d;
    }
    const long double mean = sum / T_B;
    const long double var = sum_sq / T_B - mean * mean;
    report.block_variance[s] = static_cast<double>(var);
    predicted += static_cast<long double>(T_B) * T_B * var;
  }
  report.predicted_variance = static_cast<double>(predicted);

  double combos = 1.0;
  for (int s = 0; s < N_B; ++s) combos *= T_B;
  if (combos > static_cast<double>(max_combinations))
    throw std::invalid_argument("variance_audit: T_B^{N_B} exceeds the enumeration guard");

  // Enumerate every per-block time combination; this route never assumes the
  // blocks are independent, which is exactly what makes it a useful check.
  std::vector<int> pick(N_B, 0);
  long double sum = 0.0L, sum_sq = 0.0L;
  const auto total = static_cast<int64_t>(combos);
  for (int64_t c = 0; c < total; ++c) {
    long double est = 0.0L;
    for (int s = 0; s < N_B; ++s) est += static_cast<long double>(T_B) * report.delta(s, pick[s]);
    sum += est;
    sum_sq += est * est;
    for (int s = N_B - 1; s >= 0; --s) {
      if (++pick[s] < T_B) break;
      pick[s] = 0;
    }
  }
  const long double mean = sum / total;
  report.estimator_mean = static_cast<double>(mean);
  report.estimator_variance = static_cast<double>(sum_sq / total - mean * mean);
  return report;
}

SampledVariance variance_audit_sampled(const PolicyParams& theta, const PolicyParams& ref,
                                       const State& completion, const State& prompt,
                                       const SchedulerConfig& scheduler, const BlockLayout& layout,
                                       int num_samples, Rng& rng) {
  if (num_samples < 2) throw std::invalid_argument("variance_audit_sampled: need >= 2 samples");
  const Matrix delta = build_delta_table(theta, ref, completion, prompt, scheduler, layout);
  const int T_B = layout.steps_per_block;
  long double sum = 0.0L, sum_sq = 0.0L;
  for (int k = 0; k < num_samples; ++k) {
    long double est = 0.0L;
    for (int s = 0; s < layout.num_blocks; ++s)
      est += static_cast<long double>(T_B) * delta(s, rng.uniform_int(T_B));
    sum += est;
    sum_sq += est * est;
  }
  SampledVariance out;
  const long double mean = sum / num_samples;
  const long double var =
      (sum_sq - static_cast<long double>(num_samples) * mean * mean) / (num_samples - 1);
  out.mean = static_cast<double>(mean);
  out.variance = static_cast<double>(var);
  out.std_error = std::sqrt(out.variance / num_samples);
  return out;
}

std::string ScoreEstimate::to_json() const {
  nlohmann::json j;
  j["value"] = value;
  j["t_scale"] = t_scale;
  j["samples_per_block"] = samples_per_block;
  j["per_block"] = nlohmann::json::array();
  for (const BlockScore& b : per_block) {
    nlohmann::json jb;
    jb["block"] = b.block;
    jb["t"] = b.t;
    jb["unmask_set"] = b.unmask_set;
    jb["token_log_ratios"] = b.token_log_ratios;
    jb["delta"] = b.delta;
    j["per_block"].push_back(std::move(jb));
  }
  return j.dump();
}

State reconstruct_plan_state(const ScorePlan& plan, int sample, int block, const State& completion,
                             const State& prompt, const BlockLayout& layout, const Vocab& vocab) {
  const int L = layout.seq_len();
  const int P = static_cast<int>(prompt.size());
  State state(prompt);
  state.insert(state.end(), completion.begin(), completion.end());
  const State& slice = plan.block_states.at(sample).at(block);
  for (int g = layout.block_begin(block); g < L; ++g) {
    if (vocab.is_pad(completion[g])) continue;
    if (g < layout.block_end(block)) {
      state[P + g] = slice.at(g - layout.block_begin(block));
    } else {
      state[P + g] = vocab.mask_id();
    }
  }
  return state;
}

ScorePlan build_score_plan(const SchedulerConfig& scheduler, const PolicyParams& conf_policy,
                           const State& completion, const State& prompt, const BlockLayout& layout,
                           int samples_per_block, Rng& rng, std::span<const int> step_override) {
  if (samples_per_block < 1)
    throw std::invalid_argument("build_score_plan: samples_per_block must be >= 1");
  const int N_B = layout.num_blocks;
  const int T_B = layout.steps_per_block;
  const size_t want = static_cast<size_t>(samples_per_block) * N_B;
  if (!step_override.empty() && step_override.size() != want)
    throw std::invalid_argument("build_score_plan: step override has the wrong length");

  SchedulerConfig cfg = scheduler;
  if (cfg.block_size == 0) cfg.block_size = layout.block_size;

  ScorePlan plan;
  plan.samples_per_block = samples_per_block;
  plan.steps.resize(want);
  for (size_t i = 0; i < want; ++i) {
    const int t = step_override.empty() ? rng.uniform_int(T_B) + 1 : step_override[i];
    if (t < 1 || t > T_B) throw std::invalid_argument("build_score_plan: step outside [1, T_B]");
    plan.steps[i] = t;
  }

  const int P = static_cast<int>(prompt.size());
  plan.block_states.resize(samples_per_block);
  plan.unmask_sets.resize(samples_per_block);
  for (int k = 0; k < samples_per_block; ++k) {
    plan.block_states[k].resize(N_B);
    plan.unmask_sets[k].resize(N_B);
    for (int s = 0; s < N_B; ++s) {
      const int t = plan.steps[static_cast<size_t>(k) * N_B + s];
      ReplayResult rep = training_unmask_sets(cfg, conf_policy, completion, prompt, s, t, layout, rng);
      plan.block_states[k][s].assign(rep.state.begin() + P + layout.block_begin(s),
                                     rep.state.begin() + P + layout.block_end(s));
      plan.unmask_sets[k][s] = std::move(rep.unmask_set);
    }
  }
  return plan;
}

ScoreEstimate score_from_plan(const PolicyParams& theta, const PolicyParams& ref,
                              const ScorePlan& plan, const State& completion, const State& prompt,
                              const BlockLayout& layout, bool use_packed) {
  require_same_alphabet(theta, ref, "score_from_plan");
  const Vocab vocab = theta.vocab();
  const int N_B = layout.num_blocks;
  const int P = static_cast<int>(prompt.size());
  const int m = plan.samples_per_block;
  if (static_cast<int>(plan.block_states.size()) != m ||
      static_cast<int>(plan.unmask_sets.size()) != m ||
      plan.steps.size() != static_cast<size_t>(m) * N_B)
    throw std::invalid_argument("score_from_plan: plan shape does not match its sample count");

  ScoreEstimate est;
  est.t_scale = layout.steps_per_block;
  est.samples_per_block = m;
  const double scale = static_cast<double>(layout.steps_per_block) / m;

  VisibilityMask standalone_vis;
  if (!use_packed) standalone_vis = build_standalone_block_mask(layout, P);

  for (int k = 0; k < m; ++k) {
    if (static_cast<int>(plan.block_states[k].size()) != N_B ||
        static_cast<int>(plan.unmask_sets[k].size()) != N_B)
      throw std::invalid_argument("score_from_plan: plan does not match the layout");

    PolicyOutput packed_theta, packed_ref;
    if (use_packed) {
      packed_theta = packed_forward(theta, plan.block_states[k], completion, prompt, layout);
      packed_ref = packed_forward(ref, plan.block_states[k], completion, prompt, layout);
    }

    for (int s = 0; s < N_B; ++s) {
      BlockScore bs;
      bs.block = s;
      bs.t = plan.steps[static_cast<size_t>(k) * N_B + s];

      PolicyOutput alone_theta, alone_ref;
      if (!use_packed && !plan.unmask_sets[k][s].empty()) {
        const State state = reconstruct_plan_state(plan, k, s, completion, prompt, layout, vocab);
        alone_theta = forward(theta, state, standalone_vis);
        alone_ref = forward(ref, state, standalone_vis);
      }

      for (int g : plan.unmask_sets[k][s]) {
        if (g < layout.block_begin(s) || g >= layout.block_end(s))
          throw std::invalid_argument("score_from_plan: unmask set leaves its block");
        const TokenId y = completion[g];
        vocab.require_real(y, "score_from_plan");
        const double lr = use_packed
                              ? packed_theta.log_mu_at(g)[y] - packed_ref.log_mu_at(g)[y]
                              : alone_theta.log_mu_at(P + g)[y] - alone_ref.log_mu_at(P + g)[y];
        bs.unmask_set.push_back(g);
        bs.token_log_ratios.push_back(lr);
        bs.delta += lr;
      }
      est.value += scale * bs.delta;
      est.per_block.push_back(std::move(bs));
    }
  }
  return est;
}

ScoreEstimate score(const PolicyParams& theta, const PolicyParams& ref, const State& completion,
                    const State& prompt, const BlockLayout& layout,
                    const SchedulerConfig& scheduler, int samples_per_block, bool use_packed,
                    Rng& rng) {
  const PolicyParams& conf = scheduler.confidence_from_ref ? ref : theta;
  const ScorePlan plan =
      build_score_plan(scheduler, conf, completion, prompt, layout, samples_per_block, rng);
  return score_from_plan(theta, ref, plan, completion, prompt, layout, use_packed);
}

} // namespace maskdiff
