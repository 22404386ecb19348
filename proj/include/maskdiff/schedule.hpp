#pragma once

// Masking schedule for the absorbing forward process. Stores per-step hazard
// rates beta_t and the survival probabilities alpha_t = prod_{s<=t}(1-beta_s),
// alpha_0 = 1. Validation happens once at construction; reverse-process entry
// points only check the cached flags.

#include <iosfwd>
#include <string>
#include <vector>

namespace maskdiff {

class MaskSchedule {
 public:
  // General forward schedule. Betas must lie in [0, 1].
  explicit MaskSchedule(std::vector<double> betas);

  // Schedule vetted for reverse-process sampling: alpha must be strictly
  // decreasing with alpha_t < 1 for t >= 1. Throws otherwise.
  static MaskSchedule for_reverse(std::vector<double> betas);

  // Linear survival alpha_t = 1 - t/T; strictly progressing by construction.
  static MaskSchedule linear(int horizon);

  int horizon() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;  // t in [1, T]
  double alpha(int t) const; // t in [0, T]

  // alpha_{t-1} > alpha_t for every t and alpha_t < 1 for t >= 1.
  bool strictly_progressing() const { return strictly_progressing_; }
  // Weaker: alpha_t < 1 for t >= 1, so the reverse-kernel divisions are
  // defined. Flat stretches are allowed; their unmask coefficient is 0.
  bool reverse_evaluable() const { return reverse_evaluable_; }

  void require_progressing(const char* what) const;
  void require_evaluable(const char* what) const;

  // Stay-masked and unmask coefficients of the reverse kernel at step t.
  double stay_coeff(int t) const;   // (1 - alpha_{t-1}) / (1 - alpha_t)
  double unmask_coeff(int t) const; // (alpha_{t-1} - alpha_t) / (1 - alpha_t)

  std::string to_json() const;
  static MaskSchedule from_json(const std::string& text);
  static MaskSchedule load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_; // size T + 1, alphas_[0] = 1
  bool strictly_progressing_ = false;
  bool reverse_evaluable_ = false;
};

} // namespace maskdiff
