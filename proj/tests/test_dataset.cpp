#include <doctest.h>

#include <set>
#include <sstream>

#include "maskdiff/dataset.hpp"

using namespace maskdiff;

namespace {

SyntheticTaskConfig small_task(const std::string& rule) {
  SyntheticTaskConfig t;
  t.rule = rule;
  t.vocab = 5;
  t.prompt_len = 2;
  t.train_pairs = 40;
  t.heldout_pairs = 24;
  t.data_seed = 99;
  return t;
}

std::string dump(const std::vector<PreferencePair>& pairs) {
  std::ostringstream out;
  write_pairs_jsonl(out, pairs);
  return out.str();
}

} // namespace

TEST_CASE("rule scores match hand-counted values") {
  CHECK(rule_score("prefer-sorted", {1, 2, 2, 3}, 4) == 3.0);
  CHECK(rule_score("prefer-sorted", {3, 1, 2, 0}, 4) == 1.0);
  CHECK(rule_score("prefer-sorted", {2}, 4) == 0.0);
  CHECK(rule_score("prefer-target-bigrams", {0, 1, 2, 3}, 4) == 3.0);
  CHECK(rule_score("prefer-target-bigrams", {1, 3, 0, 1}, 4) == 2.0);
  CHECK_THROWS_AS(rule_score("nope", {0}, 4), std::exception);
}

TEST_CASE("generation is deterministic in the data seed") {
  const SyntheticTaskConfig task = small_task("prefer-sorted");
  const BlockLayout layout(2, 2, 2);
  const Dataset a = generate_dataset(task, layout);
  const Dataset b = generate_dataset(task, layout);
  CHECK(dump(a.train) == dump(b.train));
  CHECK(dump(a.heldout) == dump(b.heldout));

  SyntheticTaskConfig other = task;
  other.data_seed = 100;
  const Dataset c = generate_dataset(other, layout);
  CHECK(dump(a.train) != dump(c.train));
}

TEST_CASE("splits have the requested sizes and share no pair") {
  const SyntheticTaskConfig task = small_task("prefer-sorted");
  const BlockLayout layout(2, 2, 2);
  const Dataset d = generate_dataset(task, layout);
  REQUIRE(static_cast<int>(d.train.size()) == task.train_pairs);
  REQUIRE(static_cast<int>(d.heldout.size()) == task.heldout_pairs);

  auto key = [](const PreferencePair& p) {
    std::ostringstream out;
    write_pairs_jsonl(out, {p});
    return out.str();
  };
  std::set<std::string> train_keys;
  for (const PreferencePair& p : d.train) train_keys.insert(key(p));
  for (const PreferencePair& p : d.heldout) CHECK(train_keys.count(key(p)) == 0);
}

TEST_CASE("pairs are layout-compatible and strictly rule-ordered") {
  for (const char* rule : {"prefer-sorted", "prefer-target-bigrams"}) {
    const SyntheticTaskConfig task = small_task(rule);
    const BlockLayout layout(2, 2, 2);
    const Dataset d = generate_dataset(task, layout);
    const Vocab v(task.vocab);
    for (const PreferencePair& p : d.train) {
      REQUIRE(static_cast<int>(p.prompt.size()) == task.prompt_len);
      REQUIRE(static_cast<int>(p.pos.size()) == layout.seq_len());
      REQUIRE(static_cast<int>(p.neg.size()) == layout.seq_len());
      for (TokenId t : p.prompt) CHECK(v.is_real(t));
      CHECK(rule_score(rule, p.pos, task.vocab) > rule_score(rule, p.neg, task.vocab));
    }
  }
}

TEST_CASE("pairs jsonl round trips") {
  const SyntheticTaskConfig task = small_task("prefer-sorted");
  const BlockLayout layout(2, 2, 2);
  const Dataset d = generate_dataset(task, layout);
  std::stringstream buf;
  write_pairs_jsonl(buf, d.train);
  const std::vector<PreferencePair> back = read_pairs_jsonl(buf, task.vocab);
  REQUIRE(back.size() == d.train.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].prompt == d.train[i].prompt);
    CHECK(back[i].pos == d.train[i].pos);
    CHECK(back[i].neg == d.train[i].neg);
  }
}

TEST_CASE("generation validates its configuration") {
  const BlockLayout layout(2, 2, 2);
  SyntheticTaskConfig bad = small_task("prefer-sorted");
  bad.vocab = 0;
  CHECK_THROWS_AS(generate_dataset(bad, layout), std::exception);
  bad = small_task("nope");
  CHECK_THROWS_AS(generate_dataset(bad, layout), std::exception);
}
