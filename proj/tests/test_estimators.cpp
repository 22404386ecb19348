#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "maskdiff/estimators.hpp"
#include "maskdiff/mdp.hpp"
#include "maskdiff/oracle.hpp"

using namespace maskdiff;

namespace {

struct Fixture {
  BlockLayout layout{2, 2, 2};
  PolicyParams theta;
  PolicyParams ref;
  State prompt{0};
  State completion{1, 0, 2, 1};

  Fixture() {
    Rng rng(71);
    theta = PolicyParams::random(3, 2, 1 + layout.seq_len(), 0.6, rng);
    ref = PolicyParams::random(3, 2, 1 + layout.seq_len(), 0.6, rng);
  }

  SchedulerConfig scheduler(SchedulerKind kind = SchedulerKind::top_k_confidence) const {
    SchedulerConfig cfg;
    cfg.kind = kind;
    cfg.fraction = 0.5;
    cfg.block_size = layout.block_size;
    return cfg;
  }
};

} // namespace

TEST_CASE("transition log-ratio vanishes when the policies coincide") {
  const Fixture f;
  const Vocab v = f.theta.vocab();
  const State before{0, v.mask_id(), v.mask_id(), 1};
  const State after{0, 2, v.mask_id(), 1};
  CHECK(transition_log_ratio(f.theta, f.theta, before, after, VisibilityMask::full(4)) == 0.0);
}

TEST_CASE("transition log-ratio sums per-coordinate categorical gaps") {
  const Fixture f;
  const Vocab v = f.theta.vocab();
  const State before{v.mask_id(), v.mask_id(), v.mask_id(), v.mask_id()};
  const State after{1, v.mask_id(), 0, v.mask_id()};
  const VisibilityMask vis = VisibilityMask::full(4);
  const PolicyOutput ot = forward(f.theta, before, vis);
  const PolicyOutput orf = forward(f.ref, before, vis);
  const double want = (ot.log_mu(0, 1) - orf.log_mu(0, 1)) + (ot.log_mu(2, 0) - orf.log_mu(2, 0));
  CHECK(transition_log_ratio(f.theta, f.ref, before, after, vis) ==
        doctest::Approx(want).epsilon(1e-14));
  // No commits: exactly zero, no forward needed.
  CHECK(transition_log_ratio(f.theta, f.ref, before, before, vis) == 0.0);
}

TEST_CASE("state-reduced estimate at a fixed time grid is the scaled transition sum") {
  const Fixture f;
  Rng rng(73);
  const MaskSchedule sched({0.5, 0.5});
  const Trajectory traj = sample_trajectory(f.theta, f.scheduler(), f.layout, f.prompt, rng);
  const VisibilityMask vis = build_standalone_block_mask(f.layout, 1);

  const double got = state_reduced_log_prob_at(f.theta, traj, sched, f.layout, std::vector<int>{2, 1});
  const int T_B = f.layout.steps_per_block;
  double want = 0.0;
  // Block 0 at t = 2 is transition j = 0; block 1 at t = 1 is j = 3.
  want += T_B * block_transition_log_prob(f.theta, traj.prompt, traj.states[0], traj.states[1], 0,
                                          2, sched, f.layout, vis);
  want += T_B * block_transition_log_prob(f.theta, traj.prompt, traj.states[3], traj.states[4], 1,
                                          1, sched, f.layout, vis);
  CHECK(got == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("state-reduced sampling reports the times it drew") {
  const Fixture f;
  Rng rng(79);
  const MaskSchedule sched({0.5, 0.5});
  const Trajectory traj = sample_trajectory(f.theta, f.scheduler(), f.layout, f.prompt, rng);
  const StateReducedEstimate est = state_reduced_log_prob(f.theta, traj, sched, f.layout, 3, rng);
  REQUIRE(est.steps.size() == 2);
  for (const auto& block_steps : est.steps) {
    REQUIRE(block_steps.size() == 3);
    for (int t : block_steps) {
      CHECK(t >= 1);
      CHECK(t <= 2);
    }
  }
  CHECK(std::isfinite(est.value));
}

TEST_CASE("score plans share override times and reconstruct block-ordered states") {
  const Fixture f;
  Rng rng(83);
  const std::vector<int> steps{2, 1, 1, 2}; // two samples, two blocks
  const ScorePlan plan =
      build_score_plan(f.scheduler(), f.ref, f.completion, f.prompt, f.layout, 2, rng, steps);
  CHECK(plan.samples_per_block == 2);
  CHECK(plan.steps == steps);
  REQUIRE(plan.unmask_sets.size() == 2);
  REQUIRE(plan.unmask_sets[0].size() == 2);

  const Vocab v = f.theta.vocab();
  // Sample 1 evaluates block 1 at its top step, so the block is fully masked.
  const State st = reconstruct_plan_state(plan, 1, 1, f.completion, f.prompt, f.layout, v);
  REQUIRE(st.size() == 5);
  CHECK(st[0] == 0); // prompt carried
  CHECK(st[1] == f.completion[0]);
  CHECK(st[2] == f.completion[1]); // block 0 clean
  // Block 1 at its top step is fully masked.
  CHECK(st[3] == v.mask_id());
  CHECK(st[4] == v.mask_id());
}

TEST_CASE("score_from_plan vanishes at theta = ref and is packed/standalone consistent") {
  const Fixture f;
  Rng rng(89);
  const ScorePlan plan =
      build_score_plan(f.scheduler(), f.ref, f.completion, f.prompt, f.layout, 2, rng);
  const ScoreEstimate zero =
      score_from_plan(f.ref, f.ref, plan, f.completion, f.prompt, f.layout, false);
  CHECK(zero.value == 0.0);

  const ScoreEstimate alone =
      score_from_plan(f.theta, f.ref, plan, f.completion, f.prompt, f.layout, false);
  const ScoreEstimate packed =
      score_from_plan(f.theta, f.ref, plan, f.completion, f.prompt, f.layout, true);
  CHECK(alone.value == doctest::Approx(packed.value).epsilon(1e-12));
  CHECK(alone.t_scale == f.layout.steps_per_block);
  CHECK(alone.samples_per_block == 2);
  REQUIRE(alone.per_block.size() == 4);

  double manual = 0.0;
  for (const BlockScore& b : alone.per_block) {
    double delta = 0.0;
    for (double r : b.token_log_ratios) delta += r;
    CHECK(delta == doctest::Approx(b.delta).epsilon(1e-14));
    manual += b.delta;
  }
  manual *= static_cast<double>(f.layout.steps_per_block) / 2.0;
  CHECK(alone.value == doctest::Approx(manual).epsilon(1e-12));

  const nlohmann::json parsed = nlohmann::json::parse(alone.to_json());
  CHECK(parsed.contains("value"));
}

TEST_CASE("the score convenience wrapper matches plan + evaluate") {
  const Fixture f;
  Rng a(97), b(97);
  const ScorePlan plan = build_score_plan(f.scheduler(), f.ref, f.completion, f.prompt, f.layout,
                                          1, a);
  const ScoreEstimate direct = score_from_plan(f.theta, f.ref, plan, f.completion, f.prompt,
                                               f.layout, false);
  SchedulerConfig sc = f.scheduler();
  sc.confidence_from_ref = true;
  const ScoreEstimate wrapped =
      score(f.theta, f.ref, f.completion, f.prompt, f.layout, sc, 1, false, b);
  CHECK(wrapped.value == doctest::Approx(direct.value).epsilon(1e-12));
}

TEST_CASE("variance audit reproduces its own enumerated law") {
  const Fixture f;
  const VarianceReport rep = variance_audit(f.theta, f.ref, f.completion, f.prompt, f.scheduler(),
                                            f.layout);
  CHECK(rep.estimator_mean == doctest::Approx(rep.exact_sum).epsilon(1e-10));
  CHECK(rep.estimator_variance == doctest::Approx(rep.predicted_variance).epsilon(1e-10));
  REQUIRE(rep.block_variance.size() == 2);
  const int T_B = f.layout.steps_per_block;
  CHECK(rep.predicted_variance ==
        doctest::Approx(T_B * T_B * (rep.block_variance[0] + rep.block_variance[1]))
            .epsilon(1e-12));
  CHECK(rep.delta.rows == 2);
  CHECK(rep.delta.cols == 2);
}

TEST_CASE("variance audit rejects stochastic schedulers and tiny combination guards") {
  const Fixture f;
  CHECK_THROWS_AS(variance_audit(f.theta, f.ref, f.completion, f.prompt,
                                 f.scheduler(SchedulerKind::random_k), f.layout),
                  std::exception);
  CHECK_THROWS_AS(
      variance_audit(f.theta, f.ref, f.completion, f.prompt, f.scheduler(), f.layout, 2),
      std::exception);
}

TEST_CASE("sampled variance tracks the exact audit on a deterministic scheduler") {
  const Fixture f;
  Rng rng(101);
  const VarianceReport exact = variance_audit(f.theta, f.ref, f.completion, f.prompt,
                                              f.scheduler(), f.layout);
  const SampledVariance sampled = variance_audit_sampled(f.theta, f.ref, f.completion, f.prompt,
                                                         f.scheduler(), f.layout, 4000, rng);
  CHECK(std::abs(sampled.mean - exact.estimator_mean) <= 4.0 * sampled.std_error + 1e-12);
}

TEST_CASE("plan builders validate the step override") {
  const Fixture f;
  Rng rng(103);
  CHECK_THROWS_AS(build_score_plan(f.scheduler(), f.ref, f.completion, f.prompt, f.layout, 1, rng,
                                   std::vector<int>{1}),
                  std::exception);
  CHECK_THROWS_AS(build_score_plan(f.scheduler(), f.ref, f.completion, f.prompt, f.layout, 1, rng,
                                   std::vector<int>{0, 1}),
                  std::exception);
  CHECK_THROWS_AS(build_score_plan(f.scheduler(), f.ref, f.completion, f.prompt, f.layout, 0, rng),
                  std::exception);
}
