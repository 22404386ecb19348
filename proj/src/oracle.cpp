#include "maskdiff/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace maskdiff {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct EnumContext {
  const PolicyParams& policy;
  const State& prompt;
  const BlockLayout& layout;
  const Vocab vocab;
  const VisibilityMask vis;
  int64_t max_nodes;
  int64_t nodes = 0;

  std::vector<State> states;
  EnumerationResult result;

  EnumContext(const PolicyParams& p, const State& pr, const BlockLayout& lay, int64_t cap)
      : policy(p), prompt(pr), layout(lay), vocab(p.vocab()),
        vis(build_standalone_block_mask(lay, static_cast<int>(pr.size()))), max_nodes(cap) {}

  void tick() {
    if (++nodes > max_nodes)
      throw std::runtime_error("trajectory enumeration exceeded the search-space guard");
  }

  void record(double logp) {
    Trajectory traj;
    traj.prompt = prompt;
    traj.states = states;
    result.items.push_back({std::move(traj), logp});
  }

  State full_state(const State& gen) const {
    State full(prompt);
    full.insert(full.end(), gen.begin(), gen.end());
    return full;
  }
};

void finish_enumeration(EnumerationResult& r) {
  std::vector<double> probs(r.items.size());
  for (size_t i = 0; i < r.items.size(); ++i) probs[i] = std::exp(r.items[i].log_prob);
  r.total_probability = pairwise_sum(probs);
  for (size_t i = 0; i < r.items.size(); ++i)
    r.completion_marginals[r.items[i].traj.states.back()] += probs[i];
}

// Assign values to committed coordinates one at a time, multiplying in the
// categorical mass, then hand the finished successor to `done`.
void enumerate_values(EnumContext& ctx, const PolicyOutput& out, const std::vector<int>& commit,
                      size_t pos, State& next, double logp,
                      const std::function<void(double)>& done) {
  if (pos == commit.size()) {
    done(logp);
    return;
  }
  const int g = commit[pos];
  const int row = static_cast<int>(ctx.prompt.size()) + g;
  auto log_mu = out.log_mu_at(row);
  for (TokenId v = 0; v < ctx.vocab.size; ++v) {
    ctx.tick();
    next[g] = v;
    enumerate_values(ctx, out, commit, pos + 1, next, logp + log_mu[v], done);
  }
  next[g] = ctx.vocab.mask_id();
}

// Kernel mode: each masked coordinate of the block independently stays or
// commits, weighted by the schedule coefficients.
void kernel_step(EnumContext& ctx, const MaskSchedule& sched, State& gen, int j, double logp);

void kernel_coordinate(EnumContext& ctx, const MaskSchedule& sched, const PolicyOutput* out,
                       const std::vector<int>& masked, size_t pos, State& gen, int j, int t,
                       double logp) {
  if (pos == masked.size()) {
    ctx.states.push_back(gen);
    kernel_step(ctx, sched, gen, j + 1, logp);
    ctx.states.pop_back();
    return;
  }
  const int g = masked[pos];
  const double stay = sched.stay_coeff(t);
  const double unmask = sched.unmask_coeff(t);
  if (stay > 0.0) {
    ctx.tick();
    kernel_coordinate(ctx, sched, out, masked, pos + 1, gen, j, t, logp + std::log(stay));
  }
  if (unmask > 0.0) {
    auto log_mu = out->log_mu_at(static_cast<int>(ctx.prompt.size()) + g);
    for (TokenId v = 0; v < ctx.vocab.size; ++v) {
      ctx.tick();
      gen[g] = v;
      kernel_coordinate(ctx, sched, out, masked, pos + 1, gen, j, t,
                        logp + std::log(unmask) + log_mu[v]);
    }
    gen[g] = ctx.vocab.mask_id();
  }
}

void kernel_step(EnumContext& ctx, const MaskSchedule& sched, State& gen, int j, double logp) {
  ctx.tick();
  if (j == ctx.layout.horizon()) {
    ctx.record(logp);
    return;
  }
  const int s = ctx.layout.block_of_transition(j);
  const int t = ctx.layout.step_of_transition(j);
  std::vector<int> masked;
  for (int g = ctx.layout.block_begin(s); g < ctx.layout.block_end(s); ++g)
    if (ctx.vocab.is_mask(gen[g])) masked.push_back(g);

  if (masked.empty()) {
    ctx.states.push_back(gen);
    kernel_step(ctx, sched, gen, j + 1, logp);
    ctx.states.pop_back();
    return;
  }
  PolicyOutput out = forward(ctx.policy, ctx.full_state(gen), ctx.vis);
  kernel_coordinate(ctx, sched, &out, masked, 0, gen, j, t, logp);
}

// Scheduler mode: branch over the scheduler's choices, then over values.
void scheduler_step(EnumContext& ctx, const SchedulerConfig& cfg, State& gen, int j, double logp);

void advance_with_commit(EnumContext& ctx, const SchedulerConfig& cfg, const PolicyOutput& out,
                         const std::vector<int>& commit, State& gen, int j, double logp) {
  State next = gen;
  enumerate_values(ctx, out, commit, 0, next, logp, [&](double lp) {
    ctx.states.push_back(next);
    State saved = std::move(gen);
    gen = next;
    scheduler_step(ctx, cfg, gen, j + 1, lp);
    gen = std::move(saved);
    ctx.states.pop_back();
  });
}

void subsets_of_size(EnumContext& ctx, const std::vector<int>& pool, int want, size_t from,
                     std::vector<int>& acc, const std::function<void()>& done) {
  if (want == 0) {
    done();
    return;
  }
  if (pool.size() - from < static_cast<size_t>(want)) return;
  ctx.tick();
  acc.push_back(pool[from]);
  subsets_of_size(ctx, pool, want - 1, from + 1, acc, done);
  acc.pop_back();
  subsets_of_size(ctx, pool, want, from + 1, acc, done);
}

void scheduler_step(EnumContext& ctx, const SchedulerConfig& cfg, State& gen, int j, double logp) {
  ctx.tick();
  if (j == ctx.layout.horizon()) {
    ctx.record(logp);
    return;
  }
  const int s = ctx.layout.block_of_transition(j);
  const int t = ctx.layout.step_of_transition(j);
  const int P = static_cast<int>(ctx.prompt.size());
  std::vector<int> masked;
  for (int g = ctx.layout.block_begin(s); g < ctx.layout.block_end(s); ++g)
    if (ctx.vocab.is_mask(gen[g])) masked.push_back(g);

  if (masked.empty()) {
    ctx.states.push_back(gen);
    scheduler_step(ctx, cfg, gen, j + 1, logp);
    ctx.states.pop_back();
    return;
  }

  PolicyOutput out = forward(ctx.policy, ctx.full_state(gen), ctx.vis);
  const bool force_all = t == 1 || cfg.kind == SchedulerKind::all_at_once;
  if (!force_all && cfg.kind == SchedulerKind::random_k) {
    const int count = std::min(tokens_per_step(cfg, ctx.layout.block_size),
                               static_cast<int>(masked.size()));
    // Count the subsets first so each branch carries probability 1 / C(m, n).
    double combos = 1.0;
    for (int i = 0; i < count; ++i)
      combos = combos * static_cast<double>(masked.size() - i) / static_cast<double>(i + 1);
    const double branch_logp = logp - std::log(combos);
    std::vector<int> acc;
    subsets_of_size(ctx, masked, count, 0, acc,
                    [&] { advance_with_commit(ctx, cfg, out, acc, gen, j, branch_logp); });
    return;
  }

  std::vector<int> commit;
  if (force_all) {
    commit = masked;
  } else {
    std::vector<double> conf(masked.size());
    for (size_t i = 0; i < masked.size(); ++i) conf[i] = out.confidence[P + masked[i]];
    Rng unused(0); // deterministic kinds never touch the rng
    SchedulerConfig local = cfg;
    if (local.block_size == 0) local.block_size = ctx.layout.block_size;
    commit = select(local, masked, conf, ctx.layout.block_begin(s), t, unused);
  }
  advance_with_commit(ctx, cfg, out, commit, gen, j, logp);
}

void check_guard_precondition(const PolicyParams& policy, const BlockLayout& layout,
                              int64_t max_nodes) {
  const double space = std::pow(static_cast<double>(policy.vocab_size) + 1.0,
                                static_cast<double>(layout.seq_len()));
  if (!(space <= static_cast<double>(max_nodes)))
    throw std::invalid_argument("trajectory enumeration: (V+1)^L exceeds the search-space guard");
}

} // namespace

EnumerationResult enumerate_kernel_trajectories(const PolicyParams& policy, const State& prompt,
                                                const MaskSchedule& sched, const BlockLayout& layout,
                                                int64_t max_nodes) {
  if (sched.horizon() != layout.steps_per_block)
    throw std::invalid_argument("enumerate_kernel_trajectories: schedule horizon is not T_B");
  sched.require_evaluable("enumerate_kernel_trajectories");
  check_guard_precondition(policy, layout, max_nodes);
  EnumContext ctx(policy, prompt, layout, max_nodes);
  State gen(static_cast<size_t>(layout.seq_len()), ctx.vocab.mask_id());
  ctx.states.push_back(gen);
  kernel_step(ctx, sched, gen, 0, 0.0);
  finish_enumeration(ctx.result);
  return ctx.result;
}

EnumerationResult enumerate_scheduler_trajectories(const PolicyParams& policy, const State& prompt,
                                                   const SchedulerConfig& scheduler,
                                                   const BlockLayout& layout, int64_t max_nodes) {
  check_guard_precondition(policy, layout, max_nodes);
  EnumContext ctx(policy, prompt, layout, max_nodes);
  SchedulerConfig cfg = scheduler;
  if (cfg.block_size == 0) cfg.block_size = layout.block_size;
  State gen(static_cast<size_t>(layout.seq_len()), ctx.vocab.mask_id());
  ctx.states.push_back(gen);
  scheduler_step(ctx, cfg, gen, 0, 0.0);
  finish_enumeration(ctx.result);
  return ctx.result;
}

double full_kernel_transition_log_prob(const PolicyParams& policy, const State& prompt,
                                       const State& before, const State& after, int t,
                                       const MaskSchedule& sched, const VisibilityMask* vis) {
  const Vocab vocab = policy.vocab();
  if (before.size() != after.size())
    throw std::invalid_argument("full_kernel_transition_log_prob: length mismatch");
  if (t < 1 || t > sched.horizon())
    throw std::out_of_range("full_kernel_transition_log_prob: t outside [1, T]");
  sched.require_evaluable("full_kernel_transition_log_prob");

  std::vector<int> committed;
  int stay = 0;
  for (size_t g = 0; g < before.size(); ++g) {
    if (!vocab.is_mask(before[g])) {
      if (after[g] != before[g])
        throw std::invalid_argument("full_kernel_transition_log_prob: non-monotone successor");
      continue;
    }
    if (vocab.is_mask(after[g])) {
      ++stay;
    } else {
      vocab.require_real(after[g], "full_kernel_transition_log_prob");
      committed.push_back(static_cast<int>(g));
    }
  }

  double total = 0.0;
  if (stay > 0) {
    const double c = sched.stay_coeff(t);
    if (c == 0.0) return kNegInf;
    total += stay * std::log(c);
  }
  if (!committed.empty()) {
    const double c = sched.unmask_coeff(t);
    if (c == 0.0) return kNegInf;
    State full(prompt);
    full.insert(full.end(), before.begin(), before.end());
    VisibilityMask fallback;
    if (vis == nullptr) fallback = VisibilityMask::full(static_cast<int>(full.size()));
    PolicyOutput out = forward(policy, full, vis ? *vis : fallback);
    const int P = static_cast<int>(prompt.size());
    for (int g : committed) total += std::log(c) + out.log_mu_at(P + g)[after[g]];
  }
  return total;
}

ParamGrads finite_difference_gradient(const std::function<double(const PolicyParams&)>& loss,
                                      const PolicyParams& at, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
  ParamGrads g = ParamGrads::zeros_like(at);
  PolicyParams probe = at;
  auto sweep = [&](std::vector<double>& x, Matrix& out) {
    for (size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + step;
      const double hi = loss(probe);
      x[i] = saved - step;
      const double lo = loss(probe);
      x[i] = saved;
      if (!std::isfinite(hi) || !std::isfinite(lo))
        throw std::runtime_error("finite_difference_gradient: loss is non-finite near the point");
      out.data[i] = (hi - lo) / (2.0 * step);
    }
  };
  sweep(probe.token_embed.data, g.token_embed);
  sweep(probe.pos_embed.data, g.pos_embed);
  sweep(probe.out_proj.data, g.out_proj);
  return g;
}

double pairwise_sum(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  if (xs.size() == 1) return xs[0];
  const size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

} // namespace maskdiff
