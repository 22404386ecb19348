#pragma once

// Reverse-process trajectories. States cover the generated region only; the
// conditioning prompt travels alongside and is never masked. states[j] is the
// state after j transitions, so states[0] is fully masked and states[T] is
// the clean sequence. In diffusion-time indexing, states[j] = tau_{T-j}.

#include <iosfwd>
#include <string>
#include <vector>

#include "maskdiff/types.hpp"

namespace maskdiff {

struct Trajectory {
  State prompt;              // possibly empty; excluded from serialization
  std::vector<State> states; // T + 1 states of length L each

  int transitions() const { return static_cast<int>(states.size()) - 1; }

  // State at remaining-time t, t in [0, T].
  const State& at_time(int t) const { return states.at(states.size() - 1 - t); }
};

struct TrajectoryIssue {
  bool ok = true;
  std::string message; // empty when ok
  int step = -1;       // transition index of the first violation, -1 if none
  int coord = -1;      // offending coordinate, -1 if not coordinate-specific
};

// Structural validation against a layout: state count and lengths, fully
// masked start, fully unmasked end, monotone unmasking, transitions confined
// to their block, and block ordering (earlier blocks clean, later masked).
TrajectoryIssue validate_trajectory(const Trajectory& traj, const BlockLayout& layout,
                                    const Vocab& vocab);

// Coordinates masked in before and real in after. Throws on length mismatch
// or a non-monotone successor.
std::vector<int> newly_unmasked_indices(const State& before, const State& after,
                                        const Vocab& vocab);

// JSONL wire format: one state per line as an integer array, mask written as
// -1. The prompt is conditioning context and is not part of the wire format.
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, const Vocab& vocab);
Trajectory read_trajectory_jsonl(std::istream& in, const Vocab& vocab);

} // namespace maskdiff
