#include <doctest.h>

#include <cmath>
#include <vector>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/rng.hpp"

using namespace maskdiff;

namespace {
const MaskSchedule kHalf({0.5, 0.5}); // alpha = {1, 1/2, 1/4}
const Vocab kV2(2);
} // namespace

TEST_CASE("forward kernel rows are normalized and mask is absorbing") {
  for (int t = 1; t <= 2; ++t) {
    for (TokenId prev = 0; prev <= kV2.mask_id(); ++prev) {
      double sum = 0.0;
      for (TokenId next = 0; next <= kV2.mask_id(); ++next)
        sum += forward_kernel_prob(prev, next, t, kHalf, kV2);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(forward_kernel_prob(kV2.mask_id(), kV2.mask_id(), t, kHalf, kV2) == 1.0);
    CHECK(forward_kernel_prob(0, 1, t, kHalf, kV2) == 0.0); // no real-to-real moves
  }
  CHECK(forward_kernel_prob(0, 0, 1, kHalf, kV2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(forward_kernel_prob(0, kV2.mask_id(), 1, kHalf, kV2) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("forward marginal is the two-point alpha mixture") {
  CHECK(forward_marginal_prob(0, 0, 2, kHalf, kV2) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(forward_marginal_prob(0, kV2.mask_id(), 2, kHalf, kV2) ==
        doctest::Approx(0.75).epsilon(1e-15));
  CHECK(forward_marginal_prob(0, 1, 2, kHalf, kV2) == 0.0);
  CHECK(forward_marginal_prob(0, 0, 0, kHalf, kV2) == 1.0);
}

// Hand case: q(prev | cur = mask, clean = 0, t = 2) = (1/3, 2/3) over
// {clean, mask}; computed from the Bayes quotient with alpha = {1, 1/2, 1/4}.
TEST_CASE("posterior matches the hand-computed values and normalizes") {
  CHECK(posterior_prob(0, kV2.mask_id(), 0, 2, kHalf, kV2) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(posterior_prob(kV2.mask_id(), kV2.mask_id(), 0, 2, kHalf, kV2) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(posterior_prob(1, kV2.mask_id(), 0, 2, kHalf, kV2) == 0.0);

  for (TokenId cur : {TokenId(0), kV2.mask_id()}) {
    double sum = 0.0;
    for (TokenId prev = 0; prev <= kV2.mask_id(); ++prev)
      sum += posterior_prob(prev, cur, 0, 2, kHalf, kV2);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

// Hand case: mu = (1/4, 3/4), t = 2: stay 2/3, commits 1/12 and 1/4.
TEST_CASE("reverse kernel matches the hand-computed mixture") {
  const std::vector<double> mu{0.25, 0.75};
  CHECK(reverse_kernel_prob(kV2.mask_id(), kV2.mask_id(), mu, 2, kHalf, kV2) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(reverse_kernel_prob(0, kV2.mask_id(), mu, 2, kHalf, kV2) ==
        doctest::Approx(1.0 / 12.0).epsilon(1e-15));
  CHECK(reverse_kernel_prob(1, kV2.mask_id(), mu, 2, kHalf, kV2) ==
        doctest::Approx(0.25).epsilon(1e-15));
  // Real tokens carry over with probability 1.
  CHECK(reverse_kernel_prob(1, 1, mu, 2, kHalf, kV2) == 1.0);
  CHECK(reverse_kernel_prob(0, 1, mu, 2, kHalf, kV2) == 0.0);
  CHECK(reverse_kernel_prob(kV2.mask_id(), 1, mu, 2, kHalf, kV2) == 0.0);
}

TEST_CASE("reverse kernel rejects unnormalized mu and non-progressing schedules") {
  CHECK_THROWS_AS(reverse_kernel_prob(0, kV2.mask_id(), std::vector<double>{0.5, 0.6}, 1, kHalf, kV2),
                  std::exception);
  MaskSchedule flat({0.5, 0.0});
  CHECK_THROWS_AS(reverse_kernel_prob(0, kV2.mask_id(), std::vector<double>{0.5, 0.5}, 1, flat, kV2),
                  std::exception);
}

TEST_CASE("sample_forward hits the degenerate corruption levels") {
  Rng rng(5);
  const State clean{0, 1, 1, 0};
  MaskSchedule all({1.0}); // alpha_1 = 0
  State noisy = sample_forward(clean, 1, all, kV2, rng);
  for (TokenId t : noisy) CHECK(t == kV2.mask_id());

  State same = sample_forward(clean, 0, all, kV2, rng); // t = 0 never corrupts
  CHECK(same == clean);
}

TEST_CASE("sample_forward masking rate is near 1 - alpha_t") {
  Rng rng(11);
  const State clean(1000, 0);
  int masked = 0;
  for (int rep = 0; rep < 20; ++rep) {
    State noisy = sample_forward(clean, 2, kHalf, kV2, rng);
    masked += count_masked(noisy, kV2);
  }
  // 20000 draws at rate 3/4: 6 sigma is ~367.
  CHECK(std::abs(masked - 15000) < 400);
}
