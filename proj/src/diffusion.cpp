#include "maskdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace maskdiff {

namespace {

void require_step(int t, const MaskSchedule& sched, const char* what) {
  if (t < 1 || t > sched.horizon()) throw std::out_of_range(std::string(what) + ": t outside [1, T]");
}

bool valid_symbol(TokenId t, const Vocab& v) { return v.is_real(t) || v.is_mask(t); }

} // namespace

double forward_kernel_prob(TokenId prev, TokenId next, int t, const MaskSchedule& sched,
                           const Vocab& vocab) {
  require_step(t, sched, "forward_kernel_prob");
  if (!valid_symbol(prev, vocab) || !valid_symbol(next, vocab))
    throw std::invalid_argument("forward_kernel_prob: token outside alphabet");
  if (vocab.is_mask(prev)) return vocab.is_mask(next) ? 1.0 : 0.0;
  double b = sched.beta(t);
  if (next == prev) return 1.0 - b;
  if (vocab.is_mask(next)) return b;
  return 0.0;
}

double forward_marginal_prob(TokenId clean, TokenId noisy, int t, const MaskSchedule& sched,
                             const Vocab& vocab) {
  if (t < 0 || t > sched.horizon())
    throw std::out_of_range("forward_marginal_prob: t outside [0, T]");
  vocab.require_real(clean, "forward_marginal_prob");
  if (!valid_symbol(noisy, vocab))
    throw std::invalid_argument("forward_marginal_prob: noisy token outside alphabet");
  double a = sched.alpha(t);
  if (noisy == clean) return a;
  if (vocab.is_mask(noisy)) return 1.0 - a;
  return 0.0;
}

State sample_forward(const State& clean, int t, const MaskSchedule& sched, const Vocab& vocab,
                     Rng& rng) {
  if (t < 0 || t > sched.horizon()) throw std::out_of_range("sample_forward: t outside [0, T]");
  double a = sched.alpha(t);
  State out(clean.size());
  for (size_t i = 0; i < clean.size(); ++i) {
    vocab.require_real(clean[i], "sample_forward");
    out[i] = rng.uniform01() < a ? clean[i] : vocab.mask_id();
  }
  return out;
}

double posterior_prob(TokenId prev, TokenId cur, TokenId clean, int t, const MaskSchedule& sched,
                      const Vocab& vocab) {
  require_step(t, sched, "posterior_prob");
  vocab.require_real(clean, "posterior_prob");
  if (!valid_symbol(prev, vocab) || !valid_symbol(cur, vocab))
    throw std::invalid_argument("posterior_prob: token outside alphabet");
  if (!vocab.is_mask(cur)) {
    // cur outside the forward support of clean has probability 0 regardless.
    return (prev == cur && cur == clean) ? 1.0 : 0.0;
  }
  double at = sched.alpha(t);
  if (!(at < 1.0)) throw std::invalid_argument("posterior_prob: alpha_t = 1 with cur masked");
  double ap = sched.alpha(t - 1);
  if (prev == clean) return (ap - at) / (1.0 - at);
  if (vocab.is_mask(prev)) return (1.0 - ap) / (1.0 - at);
  return 0.0;
}

double reverse_kernel_prob(TokenId prev, TokenId cur, std::span<const double> mu, int t,
                           const MaskSchedule& sched, const Vocab& vocab) {
  require_step(t, sched, "reverse_kernel_prob");
  sched.require_progressing("reverse_kernel_prob");
  if (!valid_symbol(prev, vocab) || !valid_symbol(cur, vocab))
    throw std::invalid_argument("reverse_kernel_prob: token outside alphabet");
  if (static_cast<int>(mu.size()) != vocab.size)
    throw std::invalid_argument("reverse_kernel_prob: mu size does not match vocabulary");
  double total = 0.0;
  for (double p : mu) total += p;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("reverse_kernel_prob: mu does not sum to 1");
  if (!vocab.is_mask(cur)) return prev == cur ? 1.0 : 0.0;
  if (vocab.is_mask(prev)) return sched.stay_coeff(t);
  return sched.unmask_coeff(t) * mu[prev];
}

} // namespace maskdiff
