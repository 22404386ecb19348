#pragma once

// Point kernels of the absorbing-state discrete diffusion. The forward
// process masks tokens coordinate-wise; the reverse kernel either keeps a
// coordinate masked or commits it to a value drawn from a model categorical.

#include <span>

#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// q(next | prev, t): keep with probability 1 - beta_t, mask with beta_t.
// Mask is absorbing. prev/next range over the real alphabet plus mask.
double forward_kernel_prob(TokenId prev, TokenId next, int t, const MaskSchedule& sched,
                           const Vocab& vocab);

// q(noisy | clean, t) = alpha_t * [noisy == clean] + (1 - alpha_t) * [noisy == mask].
// clean must be a real token; t in [0, T].
double forward_marginal_prob(TokenId clean, TokenId noisy, int t, const MaskSchedule& sched,
                             const Vocab& vocab);

// Corrupt each coordinate of a fully unmasked state independently at level t.
State sample_forward(const State& clean, int t, const MaskSchedule& sched, const Vocab& vocab,
                     Rng& rng);

// q(prev | cur, clean, t): the exact one-coordinate posterior. Degenerate
// queries (cur masked while alpha_t = 1) are rejected.
double posterior_prob(TokenId prev, TokenId cur, TokenId clean, int t, const MaskSchedule& sched,
                      const Vocab& vocab);

// p(prev | cur, t) with the model categorical mu over real tokens standing in
// for the unknown clean token. Requires a strictly progressing schedule and
// mu summing to 1 within 1e-9.
double reverse_kernel_prob(TokenId prev, TokenId cur, std::span<const double> mu, int t,
                           const MaskSchedule& sched, const Vocab& vocab);

} // namespace maskdiff
