#include "maskdiff/dataset.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace maskdiff {

double rule_score(const std::string& rule, const State& completion, int vocab) {
  if (rule != "prefer-sorted" && rule != "prefer-target-bigrams")
    throw std::invalid_argument("rule_score: unknown rule " + rule);
  if (completion.size() < 2) return 0.0;
  double score = 0.0;
  if (rule == "prefer-sorted") {
    for (size_t i = 0; i + 1 < completion.size(); ++i)
      score += completion[i + 1] >= completion[i] ? 1.0 : 0.0;
    return score;
  }
  for (size_t i = 0; i + 1 < completion.size(); ++i)
    score += completion[i + 1] == (completion[i] + 1) % vocab ? 1.0 : 0.0;
  return score;
}

namespace {

State random_completion(int len, int vocab, Rng& rng) {
  State y(len);
  for (TokenId& t : y) t = rng.uniform_int(vocab);
  return y;
}

// One pair with a strict score gap; throws if the rule cannot produce one.
PreferencePair draw_pair(const SyntheticTaskConfig& task, int len, Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    PreferencePair pair;
    pair.prompt = random_completion(task.prompt_len, task.vocab, rng);
    if (task.rule == "prefer-sorted") {
      State pos = random_completion(len, task.vocab, rng);
      std::sort(pos.begin(), pos.end());
      State neg = pos;
      bool found = false;
      for (int shuffle = 0; shuffle < 50 && !found; ++shuffle) {
        for (int i = len - 1; i > 0; --i) std::swap(neg[i], neg[rng.uniform_int(i + 1)]);
        found = rule_score(task.rule, neg, task.vocab) < rule_score(task.rule, pos, task.vocab);
      }
      if (!found) continue; // e.g. a constant multiset; redraw
      pair.pos = std::move(pos);
      pair.neg = std::move(neg);
      return pair;
    }
    State a = random_completion(len, task.vocab, rng);
    State b = random_completion(len, task.vocab, rng);
    const double sa = rule_score(task.rule, a, task.vocab);
    const double sb = rule_score(task.rule, b, task.vocab);
    if (sa == sb) continue;
    pair.pos = sa > sb ? std::move(a) : std::move(b);
    pair.neg = sa > sb ? std::move(b) : std::move(a);
    return pair;
  }
  throw std::runtime_error("draw_pair: could not produce a strict preference for rule " +
                           task.rule);
}

std::vector<TokenId> pair_key(const PreferencePair& p) {
  std::vector<TokenId> key(p.prompt);
  key.push_back(-2);
  key.insert(key.end(), p.pos.begin(), p.pos.end());
  key.push_back(-2);
  key.insert(key.end(), p.neg.begin(), p.neg.end());
  return key;
}

} // namespace

Dataset generate_dataset(const SyntheticTaskConfig& task, const BlockLayout& layout) {
  if (task.vocab < 2) throw std::invalid_argument("generate_dataset: vocab must be >= 2");
  if (task.prompt_len < 0) throw std::invalid_argument("generate_dataset: negative prompt length");
  Rng rng(Rng::derive(task.data_seed, "dataset"));
  const int len = layout.seq_len();

  std::set<std::vector<TokenId>> seen;
  auto fill = [&](std::vector<PreferencePair>& out, int count) {
    int budget = 200 * count + 1000;
    while (static_cast<int>(out.size()) < count) {
      if (--budget < 0)
        throw std::runtime_error("generate_dataset: pair space too small for the requested count");
      PreferencePair p = draw_pair(task, len, rng);
      if (!seen.insert(pair_key(p)).second) continue;
      out.push_back(std::move(p));
    }
  };

  Dataset ds;
  fill(ds.train, task.train_pairs);
  fill(ds.heldout, task.heldout_pairs);
  return ds;
}

void write_pairs_jsonl(std::ostream& out, const std::vector<PreferencePair>& pairs) {
  for (const PreferencePair& p : pairs) {
    nlohmann::json j;
    j["prompt"] = p.prompt;
    j["pos"] = p.pos;
    j["neg"] = p.neg;
    out << j.dump() << "\n";
  }
}

std::vector<PreferencePair> read_pairs_jsonl(std::istream& in, int vocab) {
  const Vocab v(vocab);
  std::vector<PreferencePair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PreferencePair p;
    p.prompt = j.at("prompt").get<State>();
    p.pos = j.at("pos").get<State>();
    p.neg = j.at("neg").get<State>();
    for (const State* st : {&p.prompt, &p.pos, &p.neg})
      for (TokenId t : *st)
        if (!v.is_real(t) && !v.is_pad(t))
          throw std::runtime_error("read_pairs_jsonl: token outside alphabet");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

} // namespace maskdiff
