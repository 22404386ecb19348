// Acceptance gate: eleven go/no-go criteria over the property suite, one
// PASS/FAIL line each. Exits nonzero when any criterion fails.

#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "maskdiff/verify.hpp"

using namespace maskdiff;

namespace {

struct Criterion {
  const char* label;
  double time_budget; // seconds; 0 disables the runtime gate
  std::function<std::vector<CheckResult>()> run;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string part_summary(const CheckResult& r) {
  if (r.tolerance == 0.0) return r.name + " observed " + fmt(r.observed);
  return r.name + " observed " + fmt(r.observed) + ", tolerance " + fmt(r.tolerance);
}

} // namespace

int main() {
  const uint64_t seed = 1;
  std::cout << "maskdiff acceptance, seed " << seed << "\n" << std::flush;

  auto single = [seed](CheckResult (*fn)(uint64_t)) {
    return [fn, seed] { return std::vector<CheckResult>{fn(seed)}; };
  };

  const std::vector<Criterion> criteria = {
      {"transition log-ratio reduction", 5.0,
       [seed] { return std::vector<CheckResult>{check_ratio_reduction(seed, false)}; }},
      {"state reduction expectation", 10.0, single(&check_state_reduction)},
      {"variance decomposition", 0.0, single(&check_variance_law)},
      {"packed attention equivalence", 0.0, single(&check_packed_equivalence)},
      {"gradient correctness", 0.0, single(&check_gradient_correctness)},
      {"normalization", 0.0,
       [seed] {
         return std::vector<CheckResult>{check_normalization_measure(seed),
                                         check_normalization_kernel(seed),
                                         check_normalization_bayes(seed)};
       }},
      {"schedule invariance", 0.0, single(&check_schedule_invariance)},
      {"scheduler contract", 0.0, single(&check_scheduler_contract)},
      {"training efficacy", 300.0, single(&check_training_efficacy)},
      {"sampling ablations", 0.0, single(&check_ablation_directionality)},
      {"rerun determinism", 0.0, single(&check_determinism)},
  };

  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const Criterion& c = criteria[i];
    const std::vector<CheckResult> parts = c.run();

    bool passed = true;
    double seconds = 0.0;
    std::string summary;
    for (const CheckResult& part : parts) {
      passed = passed && part.passed;
      seconds += part.seconds;
      if (!summary.empty()) summary += "; ";
      summary += part_summary(part);
    }
    std::string note;
    if (c.time_budget > 0.0 && seconds > c.time_budget) {
      passed = false;
      note = " over the " + fmt(c.time_budget) + "s budget";
    }
    if (!passed) ++failures;

    char head[64];
    std::snprintf(head, sizeof(head), "criterion %2zu/%zu", i + 1, criteria.size());
    std::cout << head << "  " << (passed ? "PASS" : "FAIL") << "  " << c.label << "  [" << summary
              << ", " << fmt(seconds) << "s" << note << "]\n"
              << std::flush;
    if (!passed) {
      for (const CheckResult& part : parts)
        if (!part.detail.empty()) std::cout << "    " << part.name << ": " << part.detail << "\n";
      std::cout << std::flush;
    }
  }

  if (failures == 0) {
    std::cout << "all " << criteria.size() << " criteria passed\n";
    return 0;
  }
  std::cout << failures << " criteria failed\n";
  return 1;
}
