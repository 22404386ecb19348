#include <doctest.h>

#include <cmath>
#include <cstring>

#include "maskdiff/optimizer.hpp"
#include "maskdiff/rng.hpp"

using namespace maskdiff;

namespace {

PolicyParams sample_params(uint64_t seed) {
  Rng rng(seed);
  return PolicyParams::random(4, 3, 3, 0.5, rng);
}

ParamGrads sample_grads(const PolicyParams& p, uint64_t seed) {
  Rng rng(seed);
  ParamGrads g = ParamGrads::zeros_like(p);
  for (double& x : g.token_embed.data) x = rng.normal();
  for (double& x : g.pos_embed.data) x = rng.normal();
  for (double& x : g.out_proj.data) x = rng.normal();
  return g;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.data.size() != b.data.size()) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (std::memcmp(&a.data[i], &b.data[i], sizeof(double)) != 0) return false;
  return true;
}

} // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  PolicyParams p = sample_params(5);
  const PolicyParams before = p;
  AdamState st = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.7;
  adam_step(p, st, sample_grads(p, 6), cfg, 1.0);
  CHECK(bitwise_equal(p.token_embed, before.token_embed));
  CHECK(bitwise_equal(p.pos_embed, before.pos_embed));
  CHECK(bitwise_equal(p.out_proj, before.out_proj));
  CHECK(st.step == 1); // moments advance even when the step size is zero
}

TEST_CASE("frozen groups are untouched by updates and decay") {
  PolicyParams p = sample_params(7);
  p.trainable = TrainableMask{true, false, true};
  const PolicyParams before = p;
  AdamState st = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.3;
  for (int i = 0; i < 3; ++i) adam_step(p, st, sample_grads(p, 11 + i), cfg, 1.0);
  CHECK(bitwise_equal(p.pos_embed, before.pos_embed));
  CHECK_FALSE(bitwise_equal(p.token_embed, before.token_embed));
  CHECK_FALSE(bitwise_equal(p.out_proj, before.out_proj));
  // Frozen moments never accumulate either.
  for (double v : st.m_pos.data) CHECK(v == 0.0);
  for (double v : st.v_pos.data) CHECK(v == 0.0);
}

TEST_CASE("weight decay is decoupled from the gradient moments") {
  PolicyParams p = sample_params(13);
  const PolicyParams before = p;
  AdamState st = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.25;
  adam_step(p, st, ParamGrads::zeros_like(p), cfg, 1.0);
  // With zero gradients the moment term is exactly 0 / eps, so the update is
  // the pure decay expression; compare against the same arithmetic.
  for (size_t i = 0; i < p.token_embed.data.size(); ++i) {
    double expect = before.token_embed.data[i];
    expect -= cfg.lr * (0.0 + cfg.weight_decay * expect);
    CHECK(p.token_embed.data[i] == expect);
  }
  for (size_t i = 0; i < p.out_proj.data.size(); ++i) {
    double expect = before.out_proj.data[i];
    expect -= cfg.lr * (0.0 + cfg.weight_decay * expect);
    CHECK(p.out_proj.data[i] == expect);
  }
}

TEST_CASE("a single adam step matches the closed form") {
  PolicyParams p = PolicyParams::zeros(2, 1, 1);
  p.token_embed.data = {0.5, -0.25, 0.0}; // vocab+mask rows, 1 col
  const std::vector<double> start = p.token_embed.data;
  ParamGrads g = ParamGrads::zeros_like(p);
  g.token_embed.data = {1.0, -2.0, 0.5};
  AdamState st = AdamState::zeros_like(p);
  AdamConfig cfg;
  adam_step(p, st, g, cfg, 0.5);
  // First step: mhat = g, vhat = g^2, so the move is lr_eff * g / (|g| + eps).
  for (size_t i = 0; i < start.size(); ++i) {
    const double gi = g.token_embed.data[i];
    const double expect = start[i] - cfg.lr * 0.5 * (gi / (std::sqrt(gi * gi) + cfg.eps));
    CHECK(p.token_embed.data[i] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("adam rejects shape mismatches") {
  PolicyParams p = sample_params(17);
  Rng rng(23);
  const PolicyParams other = PolicyParams::random(4, 3, 4, 0.5, rng);
  AdamState st = AdamState::zeros_like(p);
  CHECK_THROWS_AS(adam_step(p, st, ParamGrads::zeros_like(other), AdamConfig{}, 1.0),
                  std::invalid_argument);
}

TEST_CASE("cosine schedule warms up linearly then decays to zero") {
  CHECK(cosine_lr_scale(0, 10, 0.2) == doctest::Approx(0.5));
  CHECK(cosine_lr_scale(1, 10, 0.2) == doctest::Approx(1.0));
  CHECK(cosine_lr_scale(2, 10, 0.2) == doctest::Approx(1.0)); // cosine start
  CHECK(cosine_lr_scale(6, 10, 0.2) == doctest::Approx(0.5)); // halfway through decay
  CHECK(cosine_lr_scale(9, 10, 0.2) > 0.0);
  CHECK(cosine_lr_scale(9, 10, 0.2) < 0.1);

  CHECK(cosine_lr_scale(0, 10, 0.0) == doctest::Approx(1.0)); // no warmup
  CHECK(cosine_lr_scale(5, 10, 0.0) == doctest::Approx(0.5));

  // Full-warmup schedules never decay.
  CHECK(cosine_lr_scale(0, 4, 1.0) == doctest::Approx(0.25));
  CHECK(cosine_lr_scale(3, 4, 1.0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(cosine_lr_scale(0, 0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr_scale(0, 10, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr_scale(0, 10, 1.5), std::invalid_argument);
}
