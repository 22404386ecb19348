#pragma once

// The property suite behind `verify` and the acceptance gate. Every check
// runs on fixed seeds derived from one master seed, pins its tolerance, and
// reports the worst observed error.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace maskdiff {

struct CheckResult {
  std::string name;
  bool passed = false;
  double tolerance = 0.0; // 0 for structural or bitwise checks
  double observed = 0.0;  // worst observed error
  std::string detail;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct VerifyOptions {
  uint64_t seed = 1;
  bool mutate_ratio = false;     // negative control: perturbs the reduced ratio
  bool include_training = false; // adds the minutes-long training checks
};

// Exact cancellation of schedule coefficients in the transition log-ratio,
// against the uncancelled full-kernel computation under two schedules.
CheckResult check_ratio_reduction(uint64_t seed, bool mutate);

// Exhaustive expectation of the per-block time-sampled estimator equals the
// exact trajectory log-probability.
CheckResult check_state_reduction(uint64_t seed);

// Exhaustive variance of that estimator equals the per-block decomposition
// sum_s T_B^2 * population variance. Runs on check_state_reduction's
// instances.
CheckResult check_variance_law(uint64_t seed);

// packed_forward equals standalone per-block forwards.
CheckResult check_packed_equivalence(uint64_t seed);

// Analytic gradients of dtrpo_loss and pg_surrogate_loss against central
// finite differences.
CheckResult check_gradient_correctness(uint64_t seed);

// Enumerated trajectory measures sum to 1.
CheckResult check_normalization_measure(uint64_t seed);
// Every reverse-kernel conditional sums to 1.
CheckResult check_normalization_kernel(uint64_t seed);
// The one-coordinate posterior agrees with the Bayes quotient of forward
// kernels and marginals.
CheckResult check_normalization_bayes(uint64_t seed);

// The preference loss is schedule-free: bit-identical reruns, and the
// schedule-parameterized full-kernel score gap matches the reduced gap under
// two distinct schedules.
CheckResult check_schedule_invariance(uint64_t seed);

// tokens_per_step arithmetic, replay partition, terminal force-unmask.
CheckResult check_scheduler_contract(uint64_t seed);

// Byte-identical metric streams and datasets across reruns.
CheckResult check_determinism(uint64_t seed);

// Training checks (minutes): preference training beats the masked-CE
// baseline and clears the accuracy bar; ablation sweeps stay in their
// expected order. Shared with the acceptance binary.
CheckResult check_training_efficacy(uint64_t seed);
CheckResult check_ablation_directionality(uint64_t seed);

// The fast checks in criterion order, plus the training checks when
// include_training is set.
std::vector<CheckResult> run_verify_checks(const VerifyOptions& opts);

} // namespace maskdiff
