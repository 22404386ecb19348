#include <doctest.h>

#include <sstream>
#include <stdexcept>

#include "maskdiff/trajectory.hpp"

using namespace maskdiff;

namespace {

const Vocab kV2(2);
const BlockLayout kLayout(2, 2, 2);

Trajectory valid_traj() {
  const TokenId M = kV2.mask_id();
  Trajectory tr;
  tr.states = {{M, M, M, M}, {0, M, M, M}, {0, 1, M, M}, {0, 1, 1, M}, {0, 1, 1, 0}};
  return tr;
}

} // namespace

TEST_CASE("a block-ordered monotone trajectory validates") {
  const Trajectory tr = valid_traj();
  CHECK(tr.transitions() == 4);
  CHECK(tr.at_time(4) == tr.states[0]);
  CHECK(tr.at_time(0) == tr.states[4]);
  const TrajectoryIssue issue = validate_trajectory(tr, kLayout, kV2);
  CHECK(issue.ok);
  CHECK(issue.message.empty());
}

TEST_CASE("validation pinpoints structural violations") {
  const TokenId M = kV2.mask_id();

  SUBCASE("wrong state count") {
    Trajectory tr = valid_traj();
    tr.states.pop_back();
    CHECK_FALSE(validate_trajectory(tr, kLayout, kV2).ok);
  }
  SUBCASE("start not fully masked") {
    Trajectory tr = valid_traj();
    tr.states[0][0] = 0;
    const TrajectoryIssue issue = validate_trajectory(tr, kLayout, kV2);
    CHECK_FALSE(issue.ok);
  }
  SUBCASE("end not fully unmasked") {
    Trajectory tr = valid_traj();
    tr.states[4][3] = M;
    CHECK_FALSE(validate_trajectory(tr, kLayout, kV2).ok);
  }
  SUBCASE("remasking is non-monotone") {
    Trajectory tr = valid_traj();
    tr.states[2] = {M, 1, M, M}; // coordinate 0 flips back to mask
    const TrajectoryIssue issue = validate_trajectory(tr, kLayout, kV2);
    CHECK_FALSE(issue.ok);
    CHECK(issue.step == 1);
    CHECK(issue.coord == 0);
  }
  SUBCASE("commit outside the active block") {
    Trajectory tr = valid_traj();
    tr.states[1] = {M, M, 1, M}; // transition 0 belongs to block 0
    tr.states[2] = {0, 1, 1, M};
    tr.states[3] = {0, 1, 1, M};
    const TrajectoryIssue issue = validate_trajectory(tr, kLayout, kV2);
    CHECK_FALSE(issue.ok);
  }
  SUBCASE("wrong state length") {
    Trajectory tr = valid_traj();
    tr.states[3].push_back(0);
    CHECK_FALSE(validate_trajectory(tr, kLayout, kV2).ok);
  }
}

TEST_CASE("newly_unmasked_indices lists exactly the committed coordinates") {
  const TokenId M = kV2.mask_id();
  CHECK(newly_unmasked_indices({M, M, 0, M}, {1, M, 0, 0}, kV2) == std::vector<int>{0, 3});
  CHECK(newly_unmasked_indices({M, M}, {M, M}, kV2).empty());
  CHECK_THROWS_AS(newly_unmasked_indices({0, M}, {M, M}, kV2), std::exception); // remask
  CHECK_THROWS_AS(newly_unmasked_indices({M, M}, {M}, kV2), std::exception);    // length
}

TEST_CASE("trajectory jsonl round trip preserves every state") {
  const Trajectory tr = valid_traj();
  std::stringstream buf;
  write_trajectory_jsonl(buf, tr, kV2);
  const Trajectory back = read_trajectory_jsonl(buf, kV2);
  REQUIRE(back.states.size() == tr.states.size());
  for (size_t j = 0; j < tr.states.size(); ++j) CHECK(back.states[j] == tr.states[j]);
  CHECK(back.prompt.empty());
}

TEST_CASE("trajectory jsonl writes masks as -1") {
  Trajectory tr;
  tr.states = {{kV2.mask_id()}, {1}};
  std::stringstream buf;
  write_trajectory_jsonl(buf, tr, kV2);
  std::string first;
  std::getline(buf, first);
  CHECK(first == "[-1]");
}
