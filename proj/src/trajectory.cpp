#include "maskdiff/trajectory.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace maskdiff {

namespace {

TrajectoryIssue fail(std::string msg, int step, int coord) {
  return TrajectoryIssue{false, std::move(msg), step, coord};
}

} // namespace

TrajectoryIssue validate_trajectory(const Trajectory& traj, const BlockLayout& layout,
                                    const Vocab& vocab) {
  const int T = layout.horizon();
  const int L = layout.seq_len();
  if (static_cast<int>(traj.states.size()) != T + 1)
    return fail("state count does not match horizon + 1", -1, -1);
  for (int j = 0; j <= T; ++j) {
    if (static_cast<int>(traj.states[j].size()) != L)
      return fail("state length does not match layout", j, -1);
    for (int i = 0; i < L; ++i) {
      TokenId tok = traj.states[j][i];
      if (!vocab.is_real(tok) && !vocab.is_mask(tok))
        return fail("token outside alphabet", j, i);
    }
  }
  if (!fully_masked(traj.states.front(), vocab))
    return fail("initial state is not fully masked", 0, -1);
  if (!fully_unmasked(traj.states.back(), vocab))
    return fail("final state is not fully unmasked", T, -1);

  for (int j = 0; j < T; ++j) {
    const State& before = traj.states[j];
    const State& after = traj.states[j + 1];
    const int s = layout.block_of_transition(j);
    for (int i = 0; i < L; ++i) {
      if (!vocab.is_mask(before[i]) && after[i] != before[i])
        return fail("unmasked token changed value", j, i);
      bool changed = vocab.is_mask(before[i]) && !vocab.is_mask(after[i]);
      if (changed && (i < layout.block_begin(s) || i >= layout.block_end(s)))
        return fail("transition touched a coordinate outside its block", j, i);
    }
  }

  // Block ordering: while block s is in flight, earlier blocks are clean and
  // later blocks fully masked.
  for (int j = 0; j <= T; ++j) {
    const State& st = traj.states[j];
    const int s = j == T ? layout.num_blocks - 1 : layout.block_of_transition(j);
    for (int i = 0; i < layout.block_begin(s); ++i)
      if (vocab.is_mask(st[i])) return fail("earlier block still masked", j, i);
    for (int i = layout.block_end(s); i < L; ++i)
      if (!vocab.is_mask(st[i])) return fail("later block unmasked early", j, i);
  }
  return TrajectoryIssue{};
}

std::vector<int> newly_unmasked_indices(const State& before, const State& after,
                                        const Vocab& vocab) {
  if (before.size() != after.size())
    throw std::invalid_argument("newly_unmasked_indices: length mismatch");
  std::vector<int> out;
  for (size_t i = 0; i < before.size(); ++i) {
    if (vocab.is_mask(before[i])) {
      if (!vocab.is_mask(after[i])) out.push_back(static_cast<int>(i));
    } else if (after[i] != before[i]) {
      throw std::invalid_argument("newly_unmasked_indices: non-monotone successor");
    }
  }
  return out;
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj, const Vocab& vocab) {
  for (const State& st : traj.states) {
    nlohmann::json row = nlohmann::json::array();
    for (TokenId tok : st) row.push_back(vocab.is_mask(tok) ? -1 : tok);
    out << row.dump() << "\n";
  }
}

Trajectory read_trajectory_jsonl(std::istream& in, const Vocab& vocab) {
  Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line);
    State st;
    for (const auto& v : row) {
      int64_t x = v.get<int64_t>();
      if (x == -1) {
        st.push_back(vocab.mask_id());
      } else if (x >= 0 && x < vocab.size) {
        st.push_back(static_cast<TokenId>(x));
      } else {
        throw std::runtime_error("read_trajectory_jsonl: token outside alphabet");
      }
    }
    traj.states.push_back(std::move(st));
  }
  if (traj.states.empty()) throw std::runtime_error("read_trajectory_jsonl: no states");
  return traj;
}

} // namespace maskdiff
