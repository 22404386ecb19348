#include <doctest.h>

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/scheduler.hpp"

using namespace maskdiff;

namespace {

SchedulerConfig make_cfg(SchedulerKind kind, double fraction, int block_size) {
  SchedulerConfig cfg;
  cfg.kind = kind;
  cfg.fraction = fraction;
  cfg.block_size = block_size;
  return cfg;
}

} // namespace

TEST_CASE("tokens_per_step floors the fraction and clamps to one") {
  CHECK(tokens_per_step(make_cfg(SchedulerKind::top_k_confidence, 0.1, 32), 32) == 3);
  CHECK(tokens_per_step(make_cfg(SchedulerKind::top_k_confidence, 1.0, 4), 4) == 4);
  CHECK(tokens_per_step(make_cfg(SchedulerKind::top_k_confidence, 0.25, 4), 4) == 1);
  CHECK(tokens_per_step(make_cfg(SchedulerKind::random_k, 0.9, 1), 1) == 1);
  CHECK(tokens_per_step(make_cfg(SchedulerKind::all_at_once, 0.1, 8), 8) == 8);
  CHECK_THROWS_AS(tokens_per_step(make_cfg(SchedulerKind::top_k_confidence, 0.0, 4), 4),
                  std::exception);
  CHECK_THROWS_AS(tokens_per_step(make_cfg(SchedulerKind::top_k_confidence, 1.5, 4), 4),
                  std::exception);
}

TEST_CASE("kind names round trip") {
  for (SchedulerKind k : {SchedulerKind::top_k_confidence, SchedulerKind::random_k,
                          SchedulerKind::gaussian_top_k, SchedulerKind::all_at_once})
    CHECK(scheduler_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(scheduler_kind_from_string("nope"), std::exception);
}

TEST_CASE("top-k selection takes the most confident, ties to the lower index") {
  Rng rng(1);
  const SchedulerConfig cfg = make_cfg(SchedulerKind::top_k_confidence, 0.5, 4);
  const std::vector<int> masked{4, 5, 6, 7};
  const std::vector<double> conf{0.5, 0.9, 0.5, 0.1};
  const std::vector<int> sel = select(cfg, masked, conf, 4, 3, rng);
  CHECK(sel == std::vector<int>{4, 5}); // 0.9 first, then the 0.5 tie at index 0
}

TEST_CASE("the terminal step and all_at_once force-commit everything") {
  Rng rng(2);
  const std::vector<int> masked{0, 2, 3};
  const std::vector<double> conf{0.1, 0.2, 0.3};
  CHECK(select(make_cfg(SchedulerKind::top_k_confidence, 0.25, 4), masked, conf, 0, 1, rng) ==
        masked);
  CHECK(select(make_cfg(SchedulerKind::all_at_once, 0.25, 4), masked, conf, 0, 5, rng) == masked);
}

TEST_CASE("gaussian weighting pulls selection toward the configured center") {
  Rng rng(3);
  SchedulerConfig cfg = make_cfg(SchedulerKind::gaussian_top_k, 0.5, 4);
  const std::vector<int> masked{10, 11, 12, 13};
  const std::vector<double> conf{1.0, 1.0, 1.0, 1.0};
  // Default center 0: closest block-relative positions win.
  CHECK(select(cfg, masked, conf, 10, 3, rng) == std::vector<int>{10, 11});
  cfg.gaussian_center = 3.0;
  CHECK(select(cfg, masked, conf, 10, 3, rng) == std::vector<int>{12, 13});
}

TEST_CASE("random_k returns a sorted subset of the requested size") {
  Rng rng(4);
  const SchedulerConfig cfg = make_cfg(SchedulerKind::random_k, 0.5, 4);
  const std::vector<int> masked{1, 3, 5, 7};
  const std::vector<double> conf(4, 0.0);
  for (int it = 0; it < 50; ++it) {
    const std::vector<int> sel = select(cfg, masked, conf, 0, 9, rng);
    REQUIRE(sel.size() == 2);
    CHECK(std::is_sorted(sel.begin(), sel.end()));
    for (int g : sel) CHECK(std::find(masked.begin(), masked.end(), g) != masked.end());
  }
}

TEST_CASE("select validates its inputs") {
  Rng rng(5);
  const SchedulerConfig cfg = make_cfg(SchedulerKind::top_k_confidence, 0.5, 4);
  const std::vector<double> conf{0.5};
  CHECK_THROWS_AS(select(cfg, {}, {}, 0, 2, rng), std::exception);
  CHECK_THROWS_AS(select(cfg, {3, 1}, std::vector<double>(2, 0.0), 0, 2, rng), std::exception);
  CHECK_THROWS_AS(select(cfg, {1}, conf, 0, 0, rng), std::exception);
  CHECK_THROWS_AS(select(cfg, {1, 2}, conf, 0, 2, rng), std::exception);
}

TEST_CASE("replay reconstructs block-ordered states and skips pads") {
  Rng dummy(6);
  Rng prng(7);
  const BlockLayout layout(2, 3, 3);
  const PolicyParams policy = PolicyParams::random(4, 3, layout.seq_len(), 0.5, prng);
  const Vocab v = policy.vocab();
  State completion{0, 1, 2, 3, v.pad_id(), 1};
  const SchedulerConfig cfg = make_cfg(SchedulerKind::top_k_confidence, 0.34, 3);

  // At the top step of block 1 the whole block (minus pads) is still masked
  // and block 0 carries the completion.
  const ReplayResult top = training_unmask_sets(cfg, policy, completion, {}, 1, 3, layout, dummy);
  CHECK(top.state[0] == 0);
  CHECK(top.state[2] == 2);
  CHECK(top.state[3] == v.mask_id());
  CHECK(top.state[4] == v.pad_id());
  CHECK(top.state[5] == v.mask_id());
  REQUIRE(top.unmask_set.size() == 1); // floor(0.34 * 3) = 1
  CHECK(top.unmask_set[0] >= 3);
  CHECK(top.unmask_set[0] != 4);

  // Replaying every step of a block partitions its non-pad coordinates.
  std::vector<int> seen;
  for (int t = 3; t >= 1; --t) {
    Rng rng(99);
    const ReplayResult rep = training_unmask_sets(cfg, policy, completion, {}, 1, t, layout, rng);
    seen.insert(seen.end(), rep.unmask_set.begin(), rep.unmask_set.end());
  }
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<int>{3, 5});
}

TEST_CASE("replay validates completion shape and step range") {
  Rng rng(8);
  Rng prng(9);
  const BlockLayout layout(1, 2, 2);
  const PolicyParams policy = PolicyParams::random(3, 2, 2, 0.5, prng);
  const SchedulerConfig cfg = make_cfg(SchedulerKind::top_k_confidence, 0.5, 2);
  const State good{0, 1};
  CHECK_THROWS_AS(training_unmask_sets(cfg, policy, {0}, {}, 0, 1, layout, rng), std::exception);
  CHECK_THROWS_AS(training_unmask_sets(cfg, policy, good, {}, 0, 0, layout, rng), std::exception);
  CHECK_THROWS_AS(training_unmask_sets(cfg, policy, good, {}, 1, 1, layout, rng), std::exception);
  CHECK_THROWS_AS(
      training_unmask_sets(cfg, policy, {policy.vocab().mask_id(), 0}, {}, 0, 1, layout, rng),
      std::exception);
}
