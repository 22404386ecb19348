#include "maskdiff/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "maskdiff/estimators.hpp"
#include "maskdiff/mdp.hpp"
#include "maskdiff/schedule.hpp"

namespace maskdiff {

std::string MetricsRecord::to_jsonl() const {
  // Wall-clock time and the win rate stay out of the line; the stream must be
  // byte-identical across reruns and the win rate is reported by eval/ablate.
  nlohmann::json j;
  j["step"] = step;
  j["objective"] = objective;
  j["loss"] = loss;
  j["z_mean"] = z_mean;
  j["margin_accuracy"] = margin_accuracy;
  j["seed"] = seed;
  return j.dump();
}

namespace {

// Fisher-Yates with our own generator, so epoch order is pinned.
void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const uint64_t j = rng.uniform_int(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

double margin_accuracy_once(const PolicyParams& theta, const PolicyParams& ref,
                            const std::vector<PreferencePair>& heldout, const DtrpoConfig& cfg,
                            const BlockLayout& layout, Rng& rng) {
  if (heldout.empty()) return 0.0;
  double correct = 0.0;
  const int m = cfg.samples_per_block;
  for (const PreferencePair& pair : heldout) {
    std::vector<int> steps(static_cast<size_t>(m) * layout.num_blocks);
    for (int& t : steps) t = static_cast<int>(rng.uniform_int(layout.steps_per_block)) + 1;
    const PolicyParams& conf = cfg.scheduler.confidence_from_ref ? ref : theta;
    const ScorePlan plan_pos =
        build_score_plan(cfg.scheduler, conf, pair.pos, pair.prompt, layout, m, rng, steps);
    const ScorePlan plan_neg =
        build_score_plan(cfg.scheduler, conf, pair.neg, pair.prompt, layout, m, rng, steps);
    const double sp =
        score_from_plan(theta, ref, plan_pos, pair.pos, pair.prompt, layout, cfg.use_packed).value;
    const double sn =
        score_from_plan(theta, ref, plan_neg, pair.neg, pair.prompt, layout, cfg.use_packed).value;
    if (sp > sn) {
      correct += 1.0;
    } else if (sp == sn) {
      correct += 0.5;
    }
  }
  return correct / static_cast<double>(heldout.size());
}

double win_rate_once(const PolicyParams& theta, const PolicyParams& ref,
                     const std::vector<PreferencePair>& heldout, const TrainConfig& cfg,
                     const SyntheticTaskConfig& task, const BlockLayout& layout, Rng& rng) {
  if (cfg.eval_generations <= 0 || heldout.empty()) return 0.0;
  SchedulerConfig sched = cfg.dtrpo.scheduler;
  sched.block_size = layout.block_size;
  double wins = 0.0;
  const int n = cfg.eval_generations;
  for (int g = 0; g < n; ++g) {
    const PreferencePair& pair = heldout[g % heldout.size()];
    const Trajectory roll_theta = sample_trajectory(theta, sched, layout, pair.prompt, rng);
    const Trajectory roll_ref = sample_trajectory(ref, sched, layout, pair.prompt, rng);
    const double st = rule_score(task.rule, roll_theta.states.back(), task.vocab);
    const double sr = rule_score(task.rule, roll_ref.states.back(), task.vocab);
    if (st > sr) {
      wins += 1.0;
    } else if (st == sr) {
      wins += 0.5;
    }
  }
  return wins / static_cast<double>(n);
}

} // namespace

EvalResult evaluate_policy(const PolicyParams& theta, const PolicyParams& ref,
                           const std::vector<PreferencePair>& heldout, const TrainConfig& cfg,
                           const SyntheticTaskConfig& task, const BlockLayout& layout,
                           uint64_t eval_seed) {
  DtrpoConfig dtrpo = cfg.dtrpo;
  dtrpo.scheduler.block_size = layout.block_size;

  EvalResult out;
  double acc = 0.0;
  for (int rep = 0; rep < cfg.eval_reps; ++rep) {
    Rng rng(Rng::derive(eval_seed, "margin", static_cast<uint64_t>(rep)));
    acc += margin_accuracy_once(theta, ref, heldout, dtrpo, layout, rng);
  }
  out.margin_accuracy = acc / static_cast<double>(std::max(1, cfg.eval_reps));

  Rng roll_rng(Rng::derive(eval_seed, "rollout"));
  out.win_rate = win_rate_once(theta, ref, heldout, cfg, task, layout, roll_rng);
  return out;
}

TrainResult train(const TrainConfig& cfg, const SyntheticTaskConfig& task,
                  const BlockLayout& layout, const Dataset& data, std::ostream* metrics_jsonl) {
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  const auto wall_start = std::chrono::steady_clock::now();

  Rng init_rng(Rng::derive(cfg.master_seed, "init"));
  const int max_pos = task.prompt_len + layout.seq_len();
  PolicyParams ref =
      PolicyParams::random(task.vocab, cfg.embed_dim, max_pos, cfg.init_scale, init_rng);
  ref.trainable = TrainableMask{false, false, false};
  PolicyParams theta = ref;
  theta.trainable = cfg.trainable;

  DtrpoConfig dtrpo = cfg.dtrpo;
  dtrpo.scheduler.block_size = layout.block_size;
  const MaskSchedule naive_sched = MaskSchedule::linear(layout.horizon());

  AdamState opt = AdamState::zeros_like(theta);
  const size_t step_examples =
      static_cast<size_t>(cfg.batch_size) * static_cast<size_t>(cfg.grad_accum);
  const int steps_per_epoch =
      static_cast<int>((data.train.size() + step_examples - 1) / step_examples);
  const int total_steps = std::min(cfg.epochs * steps_per_epoch, cfg.max_steps);

  TrainResult result;
  result.ref = ref;
  uint64_t example_counter = 0;
  int step = 0;
  double loss_sum = 0.0;
  double z_sum = 0.0;
  int loss_count = 0;

  auto record_metrics = [&](int at_step) {
    const uint64_t eval_seed = Rng::derive(cfg.master_seed, "eval", static_cast<uint64_t>(at_step));
    const EvalResult ev = evaluate_policy(theta, ref, data.heldout, cfg, task, layout, eval_seed);
    MetricsRecord rec;
    rec.step = at_step;
    rec.objective = cfg.objective;
    rec.loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    rec.z_mean = loss_count > 0 ? z_sum / loss_count : 0.0;
    rec.margin_accuracy = ev.margin_accuracy;
    rec.win_rate = ev.win_rate;
    rec.seed = cfg.master_seed;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    result.metrics.push_back(rec);
    if (metrics_jsonl != nullptr) *metrics_jsonl << rec.to_jsonl() << "\n";
    loss_sum = 0.0;
    z_sum = 0.0;
    loss_count = 0;
  };

  std::vector<size_t> order(data.train.size());
  bool done = total_steps == 0;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(Rng::derive(cfg.master_seed, "order", static_cast<uint64_t>(epoch)));
    shuffle_indices(order, order_rng);

    size_t cursor = 0;
    while (cursor < order.size() && !done) {
      ParamGrads grads = ParamGrads::zeros_like(theta);
      const size_t chunk = std::min(step_examples, order.size() - cursor);
      double batch_loss = 0.0;
      double batch_z = 0.0;
      for (size_t b = 0; b < chunk; ++b) {
        const size_t example_id = order[cursor + b];
        const PreferencePair& pair = data.train[example_id];
        Rng ex_rng(Rng::derive(cfg.master_seed, "example", example_counter++));
        ParamGrads ex_grads = ParamGrads::zeros_like(theta);
        double loss = 0.0;
        double z = 0.0;
        if (cfg.objective == "dtrpo") {
          const PairLoss pl = dtrpo_loss(pair, theta, ref, dtrpo, layout, ex_rng, &ex_grads);
          loss = pl.loss;
          z = pl.z;
        } else if (cfg.objective == "naive_masked") {
          const ScalarLoss sl =
              naive_masked_loss(pair.pos, pair.prompt, theta, naive_sched, ex_rng, &ex_grads);
          loss = sl.loss;
        } else if (cfg.objective == "elbo_sft") {
          const ScalarLoss sl = elbo_sft_loss(pair.pos, pair.prompt, theta, ex_rng, &ex_grads);
          loss = sl.loss;
        } else if (cfg.objective == "mean_field_dpo") {
          const PairLoss pl =
              mean_field_dpo_loss(pair, theta, ref, dtrpo.lambda, layout, ex_rng, &ex_grads);
          loss = pl.loss;
          z = pl.z;
        } else if (cfg.objective == "vrpo") {
          const PairLoss pl =
              vrpo_loss(pair, theta, ref, dtrpo.lambda, cfg.vrpo_n_mc, ex_rng, &ex_grads);
          loss = pl.loss;
          z = pl.z;
        } else {
          throw std::invalid_argument("train: unknown objective " + cfg.objective);
        }
        if (!std::isfinite(loss))
          throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                   ", example " + std::to_string(example_id));
        batch_loss += loss;
        batch_z += z;
        accumulate(grads, ex_grads, 1.0 / static_cast<double>(chunk));
      }
      cursor += chunk;

      const double lr_scale = cosine_lr_scale(step, total_steps, cfg.warmup_fraction);
      adam_step(theta, opt, grads, cfg.adam, lr_scale);

      loss_sum += batch_loss / static_cast<double>(chunk);
      z_sum += batch_z / static_cast<double>(chunk);
      loss_count += 1;
      step += 1;

      if (step % cfg.eval_every == 0 && step != total_steps) record_metrics(step);
      if (step >= total_steps) done = true;
    }
  }

  record_metrics(step);
  result.params = theta;
  result.steps_run = step;
  return result;
}

} // namespace maskdiff
