#include <doctest.h>

#include <cmath>

#include "maskdiff/objectives.hpp"
#include "maskdiff/oracle.hpp"

using namespace maskdiff;

namespace {

struct Fixture {
  BlockLayout layout{2, 2, 2};
  PolicyParams theta;
  PolicyParams ref;
  PreferencePair pair;

  Fixture() {
    Rng rng(211);
    theta = PolicyParams::random(3, 2, 1 + layout.seq_len(), 0.6, rng);
    ref = PolicyParams::random(3, 2, 1 + layout.seq_len(), 0.6, rng);
    pair.prompt = {2};
    pair.pos = {0, 1, 2, 0};
    pair.neg = {2, 2, 1, 1};
  }

  DtrpoConfig dtrpo() const {
    DtrpoConfig cfg;
    cfg.lambda = 0.05;
    cfg.scheduler.fraction = 0.5;
    cfg.scheduler.block_size = layout.block_size;
    cfg.samples_per_block = 2;
    cfg.use_packed = false;
    return cfg;
  }
};

double group_max_err(const ParamGrads& a, const ParamGrads& b) {
  double worst = 0.0;
  auto upd = [&](const Matrix& x, const Matrix& y) {
    for (size_t i = 0; i < x.data.size(); ++i)
      worst = std::max(worst, std::abs(x.data[i] - y.data[i]));
  };
  upd(a.token_embed, b.token_embed);
  upd(a.pos_embed, b.pos_embed);
  upd(a.out_proj, b.out_proj);
  return worst;
}

} // namespace

TEST_CASE("projections match their closed forms and derivatives") {
  ProjectionConfig cfg;

  cfg.kind = Projection::log_sigmoid;
  CHECK(project_loss(cfg, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(project_loss_grad(cfg, 0.0) == doctest::Approx(-0.5).epsilon(1e-15));

  cfg.kind = Projection::ipo_square;
  cfg.ipo_margin = 0.5;
  CHECK(project_loss(cfg, 0.2) == doctest::Approx(0.09).epsilon(1e-15));
  CHECK(project_loss_grad(cfg, 0.2) == doctest::Approx(-0.6).epsilon(1e-15));

  cfg.kind = Projection::hinge;
  CHECK(project_loss(cfg, 0.25) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(project_loss_grad(cfg, 0.25) == -1.0);
  CHECK(project_loss(cfg, 2.0) == 0.0);
  CHECK(project_loss_grad(cfg, 2.0) == 0.0);

  cfg.kind = Projection::apo;
  cfg.apo_shift = 0.3;
  CHECK(project_loss(cfg, 0.3) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // Derivatives against central differences on a smooth grid.
  for (Projection kind : {Projection::log_sigmoid, Projection::ipo_square, Projection::apo}) {
    cfg.kind = kind;
    for (double z : {-0.7, -0.1, 0.05, 0.6}) {
      const double h = 1e-6;
      const double fd = (project_loss(cfg, z + h) - project_loss(cfg, z - h)) / (2.0 * h);
      CHECK(project_loss_grad(cfg, z) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("projection parameters are mandatory where the form needs them") {
  ProjectionConfig cfg;
  cfg.kind = Projection::ipo_square;
  CHECK_THROWS_AS(project_loss(cfg, 0.1), std::exception);
  cfg.kind = Projection::apo;
  CHECK_THROWS_AS(project_loss_grad(cfg, 0.1), std::exception);
  CHECK(projection_from_string("log_sigmoid") == Projection::log_sigmoid);
  CHECK(to_string(Projection::hinge) == "hinge");
  CHECK_THROWS_AS(projection_from_string("nope"), std::exception);
}

TEST_CASE("dtrpo loss at theta = ref is exactly the zero-margin projection value") {
  const Fixture f;
  Rng rng(223);
  const PairLoss pl = dtrpo_loss(f.pair, f.ref, f.ref, f.dtrpo(), f.layout, rng);
  CHECK(pl.z == 0.0);
  CHECK(pl.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(pl.pos.value == 0.0);
  CHECK(pl.neg.value == 0.0);
}

TEST_CASE("dtrpo pos and neg scores share the same sampled times") {
  const Fixture f;
  Rng rng(227);
  const PairLoss pl = dtrpo_loss(f.pair, f.theta, f.ref, f.dtrpo(), f.layout, rng);
  REQUIRE(pl.pos.per_block.size() == pl.neg.per_block.size());
  for (size_t i = 0; i < pl.pos.per_block.size(); ++i) {
    CHECK(pl.pos.per_block[i].block == pl.neg.per_block[i].block);
    CHECK(pl.pos.per_block[i].t == pl.neg.per_block[i].t);
  }
  CHECK(pl.z == doctest::Approx(0.05 * (pl.pos.value - pl.neg.value)).epsilon(1e-14));
}

TEST_CASE("dtrpo rejects layout-incompatible pairs") {
  const Fixture f;
  Rng rng(229);
  PreferencePair bad = f.pair;
  bad.neg.pop_back();
  CHECK_THROWS_AS(dtrpo_loss(bad, f.theta, f.ref, f.dtrpo(), f.layout, rng), std::exception);
}

TEST_CASE("naive masked loss is a nonnegative masked cross-entropy") {
  const Fixture f;
  const MaskSchedule sched = MaskSchedule::linear(f.layout.horizon());
  for (uint64_t s = 0; s < 8; ++s) {
    Rng rng(300 + s);
    const ScalarLoss sl = naive_masked_loss(f.pair.pos, f.pair.prompt, f.theta, sched, rng);
    CHECK(std::isfinite(sl.loss));
    CHECK(sl.loss >= 0.0);
    CHECK(sl.masked_count >= 0);
    CHECK(sl.masked_count <= 4);
    if (sl.masked_count == 0) CHECK(sl.loss == 0.0);
  }
}

TEST_CASE("baseline objective gradients match finite differences") {
  const Fixture f;
  const MaskSchedule sched = MaskSchedule::linear(f.layout.horizon());

  SUBCASE("naive_masked") {
    ParamGrads g = ParamGrads::zeros_like(f.theta);
    Rng rng(401);
    naive_masked_loss(f.pair.pos, f.pair.prompt, f.theta, sched, rng, &g);
    const ParamGrads fd = finite_difference_gradient(
        [&](const PolicyParams& p) {
          Rng r(401);
          return naive_masked_loss(f.pair.pos, f.pair.prompt, p, sched, r).loss;
        },
        f.theta, 1e-5);
    CHECK(group_max_err(g, fd) < 1e-6);
  }
  SUBCASE("elbo_sft") {
    ParamGrads g = ParamGrads::zeros_like(f.theta);
    Rng rng(409);
    elbo_sft_loss(f.pair.pos, f.pair.prompt, f.theta, rng, &g);
    const ParamGrads fd = finite_difference_gradient(
        [&](const PolicyParams& p) {
          Rng r(409);
          return elbo_sft_loss(f.pair.pos, f.pair.prompt, p, r).loss;
        },
        f.theta, 1e-5);
    CHECK(group_max_err(g, fd) < 1e-6);
  }
  SUBCASE("mean_field_dpo") {
    ParamGrads g = ParamGrads::zeros_like(f.theta);
    Rng rng(419);
    mean_field_dpo_loss(f.pair, f.theta, f.ref, 0.1, f.layout, rng, &g);
    const ParamGrads fd = finite_difference_gradient(
        [&](const PolicyParams& p) {
          Rng r(419);
          return mean_field_dpo_loss(f.pair, p, f.ref, 0.1, f.layout, r).loss;
        },
        f.theta, 1e-5);
    CHECK(group_max_err(g, fd) < 1e-6);
  }
  SUBCASE("vrpo") {
    ParamGrads g = ParamGrads::zeros_like(f.theta);
    Rng rng(421);
    vrpo_loss(f.pair, f.theta, f.ref, 0.1, 3, rng, &g);
    const ParamGrads fd = finite_difference_gradient(
        [&](const PolicyParams& p) {
          Rng r(421);
          return vrpo_loss(f.pair, p, f.ref, 0.1, 3, r).loss;
        },
        f.theta, 1e-5);
    CHECK(group_max_err(g, fd) < 1e-6);
  }
}

TEST_CASE("pair baselines collapse to the zero-margin loss at theta = ref") {
  const Fixture f;
  Rng a(431), b(433);
  const PairLoss dpo = mean_field_dpo_loss(f.pair, f.ref, f.ref, 0.2, f.layout, a);
  CHECK(dpo.z == 0.0);
  CHECK(dpo.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const PairLoss vr = vrpo_loss(f.pair, f.ref, f.ref, 0.2, 2, b);
  CHECK(vr.z == 0.0);
  CHECK(vr.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("pg surrogate at theta = ref is minus the advantage") {
  const Fixture f;
  Rng roll(439), eval(443);
  SchedulerConfig sc;
  sc.fraction = 0.5;
  sc.block_size = f.layout.block_size;
  const Trajectory traj = sample_trajectory(f.ref, sc, f.layout, f.pair.prompt, roll);
  const PgLoss pl = pg_surrogate_loss(traj, f.ref, f.ref, 0.7, f.layout, eval);
  CHECK(pl.log_ratio == 0.0);
  CHECK(pl.ratio == 1.0);
  CHECK(pl.loss == doctest::Approx(-0.7).epsilon(1e-15));
  CHECK_FALSE(pl.clamped);
}

TEST_CASE("pg surrogate clamps extreme ratios and zeroes their gradient") {
  const Fixture f;
  Rng roll(449), eval(457);
  SchedulerConfig sc;
  sc.fraction = 0.5;
  sc.block_size = f.layout.block_size;
  const Trajectory traj = sample_trajectory(f.ref, sc, f.layout, f.pair.prompt, roll);
  ParamGrads g = ParamGrads::zeros_like(f.theta);
  const PgLoss pl = pg_surrogate_loss(traj, f.theta, f.ref, 1.0, f.layout, eval, 1e-6, &g);
  CHECK(pl.clamped);
  for (double x : g.token_embed.data) CHECK(x == 0.0);
  for (double x : g.out_proj.data) CHECK(x == 0.0);
}
