#include "maskdiff/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maskdiff {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// softplus(-z) = -log sigmoid(z)
double neg_log_sigmoid(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

double require_param(const std::optional<double>& v, const char* what) {
  if (!v) throw std::invalid_argument(std::string(what) + ": projection parameter missing");
  return *v;
}

void check_pair(const PreferencePair& pair, const Vocab& vocab, const BlockLayout& layout,
                const char* what) {
  if (pair.pos.size() != pair.neg.size())
    throw std::invalid_argument(std::string(what) + ": completion lengths differ");
  if (static_cast<int>(pair.pos.size()) != layout.seq_len())
    throw std::invalid_argument(std::string(what) + ": completion length does not match layout");
  for (TokenId t : pair.prompt) vocab.require_real(t, what);
  for (const State* y : {&pair.pos, &pair.neg})
    for (TokenId t : *y)
      if (!vocab.is_real(t) && !vocab.is_pad(t))
        throw std::invalid_argument(std::string(what) + ": completion must be fully unmasked");
}

} // namespace

Projection projection_from_string(const std::string& name) {
  if (name == "log_sigmoid") return Projection::log_sigmoid;
  if (name == "ipo_square") return Projection::ipo_square;
  if (name == "hinge") return Projection::hinge;
  if (name == "apo") return Projection::apo;
  throw std::invalid_argument("unknown projection: " + name);
}

std::string to_string(Projection p) {
  switch (p) {
    case Projection::log_sigmoid: return "log_sigmoid";
    case Projection::ipo_square: return "ipo_square";
    case Projection::hinge: return "hinge";
    case Projection::apo: return "apo";
  }
  throw std::logic_error("to_string: bad Projection");
}

double project_loss(const ProjectionConfig& cfg, double z) {
  switch (cfg.kind) {
    case Projection::log_sigmoid: return neg_log_sigmoid(z);
    case Projection::ipo_square: {
      const double m = require_param(cfg.ipo_margin, "ipo_square");
      return (z - m) * (z - m);
    }
    case Projection::hinge: return std::max(0.0, 1.0 - z);
    case Projection::apo: return neg_log_sigmoid(z - require_param(cfg.apo_shift, "apo"));
  }
  throw std::logic_error("project_loss: bad Projection");
}

double project_loss_grad(const ProjectionConfig& cfg, double z) {
  switch (cfg.kind) {
    case Projection::log_sigmoid: return -stable_sigmoid(-z);
    case Projection::ipo_square: return 2.0 * (z - require_param(cfg.ipo_margin, "ipo_square"));
    case Projection::hinge: return z < 1.0 ? -1.0 : 0.0;
    case Projection::apo: return -stable_sigmoid(-(z - require_param(cfg.apo_shift, "apo")));
  }
  throw std::logic_error("project_loss_grad: bad Projection");
}

namespace {

// Backpropagates one evaluated plan: coeff lands on d loss / d log_mu at every
// committed (state, token) of theta's evaluations.
void plan_backward(const PolicyParams& theta, const ScorePlan& plan, const State& completion,
                   const State& prompt, const BlockLayout& layout, bool use_packed, double coeff,
                   ParamGrads& grads) {
  const Vocab vocab = theta.vocab();
  const int P = static_cast<int>(prompt.size());
  const double scale = coeff * layout.steps_per_block / plan.samples_per_block;

  VisibilityMask standalone_vis;
  if (!use_packed) standalone_vis = build_standalone_block_mask(layout, P);

  for (int k = 0; k < plan.samples_per_block; ++k) {
    if (use_packed) {
      PackedInput in = build_packed_input(plan.block_states[k], completion, prompt, layout);
      Matrix upstream(2 * in.half, theta.vocab_size);
      bool any = false;
      for (int s = 0; s < layout.num_blocks; ++s)
        for (int g : plan.unmask_sets[k][s]) {
          upstream(in.masked_row(g), completion[g]) += scale;
          any = true;
        }
      if (any)
        accumulate(grads, backward(theta, in.tokens, in.vis, upstream, in.positions));
    } else {
      for (int s = 0; s < layout.num_blocks; ++s) {
        if (plan.unmask_sets[k][s].empty()) continue;
        const State state = reconstruct_plan_state(plan, k, s, completion, prompt, layout, vocab);
        Matrix upstream(static_cast<int>(state.size()), theta.vocab_size);
        for (int g : plan.unmask_sets[k][s]) upstream(P + g, completion[g]) += scale;
        accumulate(grads, backward(theta, state, standalone_vis, upstream));
      }
    }
  }
}

} // namespace

PairLoss dtrpo_loss(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref,
                    const DtrpoConfig& cfg, const BlockLayout& layout, Rng& rng,
                    ParamGrads* grads) {
  const Vocab vocab = theta.vocab();
  check_pair(pair, vocab, layout, "dtrpo_loss");
  if (cfg.samples_per_block < 1)
    throw std::invalid_argument("dtrpo_loss: samples_per_block must be >= 1");

  // One set of per-block times for the whole pair.
  std::vector<int> steps(static_cast<size_t>(cfg.samples_per_block) * layout.num_blocks);
  for (int& t : steps) t = rng.uniform_int(layout.steps_per_block) + 1;

  const PolicyParams& conf = cfg.scheduler.confidence_from_ref ? ref : theta;
  const ScorePlan plan_pos = build_score_plan(cfg.scheduler, conf, pair.pos, pair.prompt, layout,
                                              cfg.samples_per_block, rng, steps);
  const ScorePlan plan_neg = build_score_plan(cfg.scheduler, conf, pair.neg, pair.prompt, layout,
                                              cfg.samples_per_block, rng, steps);

  PairLoss out;
  out.pos = score_from_plan(theta, ref, plan_pos, pair.pos, pair.prompt, layout, cfg.use_packed);
  out.neg = score_from_plan(theta, ref, plan_neg, pair.neg, pair.prompt, layout, cfg.use_packed);
  out.z = cfg.lambda * (out.pos.value - out.neg.value);
  out.loss = project_loss(cfg.projection, out.z);

  if (grads != nullptr) {
    const double gz = project_loss_grad(cfg.projection, out.z);
    plan_backward(theta, plan_pos, pair.pos, pair.prompt, layout, cfg.use_packed,
                  gz * cfg.lambda, *grads);
    plan_backward(theta, plan_neg, pair.neg, pair.prompt, layout, cfg.use_packed,
                  -gz * cfg.lambda, *grads);
  }
  return out;
}

ScalarLoss naive_masked_loss(const State& completion, const State& prompt,
                             const PolicyParams& theta, const MaskSchedule& sched, Rng& rng,
                             ParamGrads* grads) {
  const Vocab vocab = theta.vocab();
  const int t = rng.uniform_int(sched.horizon()) + 1;
  const double alpha = sched.alpha(t);

  State state(prompt);
  state.insert(state.end(), completion.begin(), completion.end());
  const int P = static_cast<int>(prompt.size());
  std::vector<int> masked;
  for (size_t g = 0; g < completion.size(); ++g) {
    if (vocab.is_pad(completion[g])) continue;
    vocab.require_real(completion[g], "naive_masked_loss");
    if (rng.uniform01() >= alpha) {
      state[P + g] = vocab.mask_id();
      masked.push_back(static_cast<int>(g));
    }
  }

  ScalarLoss out;
  out.masked_count = static_cast<int>(masked.size());
  if (masked.empty()) return out;

  const VisibilityMask vis = VisibilityMask::full(static_cast<int>(state.size()));
  const PolicyOutput pol = forward(theta, state, vis);
  for (int g : masked) out.loss -= pol.log_mu_at(P + g)[completion[g]];

  if (grads != nullptr) {
    Matrix upstream(static_cast<int>(state.size()), theta.vocab_size);
    for (int g : masked) upstream(P + g, completion[g]) = -1.0;
    accumulate(*grads, backward(theta, state, vis, upstream));
  }
  return out;
}

ScalarLoss elbo_sft_loss(const State& completion, const State& prompt, const PolicyParams& theta,
                         Rng& rng, ParamGrads* grads) {
  const Vocab vocab = theta.vocab();
  const double u = 1.0 - rng.uniform01(); // (0, 1]

  State state(prompt);
  state.insert(state.end(), completion.begin(), completion.end());
  const int P = static_cast<int>(prompt.size());
  std::vector<int> masked;
  for (size_t g = 0; g < completion.size(); ++g) {
    if (vocab.is_pad(completion[g])) continue;
    vocab.require_real(completion[g], "elbo_sft_loss");
    if (rng.uniform01() < u) {
      state[P + g] = vocab.mask_id();
      masked.push_back(static_cast<int>(g));
    }
  }

  ScalarLoss out;
  out.masked_count = static_cast<int>(masked.size());
  if (masked.empty()) return out;

  const VisibilityMask vis = VisibilityMask::full(static_cast<int>(state.size()));
  const PolicyOutput pol = forward(theta, state, vis);
  for (int g : masked) out.loss -= pol.log_mu_at(P + g)[completion[g]] / u;

  if (grads != nullptr) {
    Matrix upstream(static_cast<int>(state.size()), theta.vocab_size);
    for (int g : masked) upstream(P + g, completion[g]) = -1.0 / u;
    accumulate(*grads, backward(theta, state, vis, upstream));
  }
  return out;
}

PairLoss mean_field_dpo_loss(const PreferencePair& pair, const PolicyParams& theta,
                             const PolicyParams& ref, double lambda, const BlockLayout& layout,
                             Rng& rng, ParamGrads* grads) {
  const Vocab vocab = theta.vocab();
  check_pair(pair, vocab, layout, "mean_field_dpo_loss");
  const int P = static_cast<int>(pair.prompt.size());
  const int L = layout.seq_len();
  const VisibilityMask vis = build_standalone_block_mask(layout, P);

  // Corruption pattern drawn once: per-block level u_s, per-coordinate draws.
  std::vector<double> level(layout.num_blocks);
  std::vector<double> coord_draw(L);
  for (int s = 0; s < layout.num_blocks; ++s) level[s] = 1.0 - rng.uniform01();
  for (int g = 0; g < L; ++g) coord_draw[g] = rng.uniform01();

  struct Eval {
    double proxy = 0.0;
    int masked_total = 0;
  };
  // Per completion: per-block states and masked sets, reused by both policies.
  auto block_states = [&](const State& y) {
    std::vector<std::pair<State, std::vector<int>>> out(layout.num_blocks);
    for (int s = 0; s < layout.num_blocks; ++s) {
      State state(pair.prompt);
      state.insert(state.end(), y.begin(), y.end());
      for (int g = layout.block_begin(s); g < L; ++g) {
        if (vocab.is_pad(y[g])) continue;
        const bool in_block = g < layout.block_end(s);
        if (!in_block || coord_draw[g] < level[s]) {
          state[P + g] = vocab.mask_id();
          if (in_block) out[s].second.push_back(g);
        }
      }
      out[s].first = std::move(state);
    }
    return out;
  };

  const auto states_pos = block_states(pair.pos);
  const auto states_neg = block_states(pair.neg);

  auto eval = [&](const PolicyParams& p, const State& y,
                  const std::vector<std::pair<State, std::vector<int>>>& states) {
    Eval e;
    double sum = 0.0;
    for (int s = 0; s < layout.num_blocks; ++s) {
      if (states[s].second.empty()) continue;
      const PolicyOutput out = forward(p, states[s].first, vis);
      for (int g : states[s].second) sum += out.log_mu_at(P + g)[y[g]];
      e.masked_total += static_cast<int>(states[s].second.size());
    }
    e.proxy = e.masked_total > 0 ? sum / e.masked_total : 0.0;
    return e;
  };

  const Eval tp = eval(theta, pair.pos, states_pos);
  const Eval tn = eval(theta, pair.neg, states_neg);
  const Eval rp = eval(ref, pair.pos, states_pos);
  const Eval rn = eval(ref, pair.neg, states_neg);

  PairLoss out;
  out.z = lambda * ((tp.proxy - rp.proxy) - (tn.proxy - rn.proxy));
  out.loss = neg_log_sigmoid(out.z);

  if (grads != nullptr) {
    const double gz = -stable_sigmoid(-out.z);
    auto push = [&](const State& y, const std::vector<std::pair<State, std::vector<int>>>& states,
                    int masked_total, double sign) {
      if (masked_total == 0) return;
      const double coeff = gz * lambda * sign / masked_total;
      for (int s = 0; s < layout.num_blocks; ++s) {
        if (states[s].second.empty()) continue;
        Matrix upstream(static_cast<int>(states[s].first.size()), theta.vocab_size);
        for (int g : states[s].second) upstream(P + g, y[g]) += coeff;
        accumulate(*grads, backward(theta, states[s].first, vis, upstream));
      }
    };
    push(pair.pos, states_pos, tp.masked_total, 1.0);
    push(pair.neg, states_neg, tn.masked_total, -1.0);
  }
  return out;
}

PairLoss vrpo_loss(const PreferencePair& pair, const PolicyParams& theta, const PolicyParams& ref,
                   double lambda, int n_mc, Rng& rng, ParamGrads* grads) {
  const Vocab vocab = theta.vocab();
  if (n_mc < 1) throw std::invalid_argument("vrpo_loss: n_mc must be >= 1");
  if (pair.pos.size() != pair.neg.size())
    throw std::invalid_argument("vrpo_loss: completion lengths differ");
  for (TokenId t : pair.prompt) vocab.require_real(t, "vrpo_loss");
  const int P = static_cast<int>(pair.prompt.size());
  const int L = static_cast<int>(pair.pos.size());

  // Shared corruption draws: level and per-coordinate uniforms for each of
  // the n_mc estimates.
  std::vector<double> level(n_mc);
  Matrix coord_draw(n_mc, L);
  for (int k = 0; k < n_mc; ++k) {
    level[k] = 1.0 - rng.uniform01();
    for (int g = 0; g < L; ++g) coord_draw(k, g) = rng.uniform01();
  }

  const VisibilityMask vis = VisibilityMask::full(P + L);
  struct Draw {
    State state;
    std::vector<int> masked;
  };
  auto corrupt = [&](const State& y, int k) {
    Draw d;
    d.state = pair.prompt;
    d.state.insert(d.state.end(), y.begin(), y.end());
    for (int g = 0; g < L; ++g) {
      if (vocab.is_pad(y[g])) continue;
      vocab.require_real(y[g], "vrpo_loss");
      if (coord_draw(k, g) < level[k]) {
        d.state[P + g] = vocab.mask_id();
        d.masked.push_back(g);
      }
    }
    return d;
  };

  auto estimate = [&](const PolicyParams& p, const State& y, std::vector<Draw>* keep) {
    double total = 0.0;
    for (int k = 0; k < n_mc; ++k) {
      Draw d = corrupt(y, k);
      if (!d.masked.empty()) {
        const PolicyOutput out = forward(p, d.state, vis);
        double sum = 0.0;
        for (int g : d.masked) sum += out.log_mu_at(P + g)[y[g]];
        total += sum / (level[k] * n_mc);
      }
      if (keep) keep->push_back(std::move(d));
    }
    return total;
  };

  std::vector<Draw> draws_pos, draws_neg;
  const double tp = estimate(theta, pair.pos, &draws_pos);
  const double tn = estimate(theta, pair.neg, &draws_neg);
  const double rp = estimate(ref, pair.pos, nullptr);
  const double rn = estimate(ref, pair.neg, nullptr);

  PairLoss out;
  out.z = lambda * ((tp - rp) - (tn - rn));
  out.loss = neg_log_sigmoid(out.z);

  if (grads != nullptr) {
    const double gz = -stable_sigmoid(-out.z);
    auto push = [&](const State& y, const std::vector<Draw>& draws, double sign) {
      for (int k = 0; k < n_mc; ++k) {
        if (draws[k].masked.empty()) continue;
        const double coeff = gz * lambda * sign / (level[k] * n_mc);
        Matrix upstream(P + L, theta.vocab_size);
        for (int g : draws[k].masked) upstream(P + g, y[g]) += coeff;
        accumulate(*grads, backward(theta, draws[k].state, vis, upstream));
      }
    };
    push(pair.pos, draws_pos, 1.0);
    push(pair.neg, draws_neg, -1.0);
  }
  return out;
}

PgLoss pg_surrogate_loss(const Trajectory& traj, const PolicyParams& theta,
                         const PolicyParams& ref, double advantage, const BlockLayout& layout,
                         Rng& rng, double clamp_bound, ParamGrads* grads) {
  const Vocab vocab = theta.vocab();
  if (theta.vocab_size != ref.vocab_size)
    throw std::invalid_argument("pg_surrogate_loss: policy and reference vocabularies differ");
  TrajectoryIssue issue = validate_trajectory(traj, layout, vocab);
  if (!issue.ok) throw std::invalid_argument("pg_surrogate_loss: " + issue.message);
  if (!(clamp_bound > 0.0))
    throw std::invalid_argument("pg_surrogate_loss: clamp bound must be > 0");

  const int P = static_cast<int>(traj.prompt.size());
  const int T_B = layout.steps_per_block;
  const VisibilityMask vis = build_standalone_block_mask(layout, P);

  struct BlockEval {
    State state;            // full prompt + before
    std::vector<int> committed;
    const State* after;
  };
  std::vector<BlockEval> evals;

  PgLoss out;
  for (int s = 0; s < layout.num_blocks; ++s) {
    const int t = rng.uniform_int(T_B) + 1;
    const int j = s * T_B + (T_B - t);
    const State& before = traj.states[j];
    const State& after = traj.states[j + 1];
    BlockEval ev;
    ev.committed = newly_unmasked_indices(before, after, vocab);
    if (ev.committed.empty()) continue;
    ev.state = traj.prompt;
    ev.state.insert(ev.state.end(), before.begin(), before.end());
    ev.after = &after;

    const PolicyOutput out_theta = forward(theta, ev.state, vis);
    const PolicyOutput out_ref = forward(ref, ev.state, vis);
    double delta = 0.0;
    for (int g : ev.committed)
      delta += out_theta.log_mu_at(P + g)[(*ev.after)[g]] - out_ref.log_mu_at(P + g)[(*ev.after)[g]];
    out.log_ratio += T_B * delta;
    evals.push_back(std::move(ev));
  }

  const double clamped_lr = std::clamp(out.log_ratio, -clamp_bound, clamp_bound);
  out.clamped = clamped_lr != out.log_ratio;
  out.ratio = std::exp(clamped_lr);
  out.loss = -advantage * out.ratio;

  if (grads != nullptr && !out.clamped) {
    const double coeff = -advantage * out.ratio * T_B;
    for (const BlockEval& ev : evals) {
      Matrix upstream(static_cast<int>(ev.state.size()), theta.vocab_size);
      for (int g : ev.committed) upstream(P + g, (*ev.after)[g]) += coeff;
      accumulate(*grads, backward(theta, ev.state, vis, upstream));
    }
  }
  return out;
}

} // namespace maskdiff
