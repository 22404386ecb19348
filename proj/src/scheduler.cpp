#include "maskdiff/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace maskdiff {

SchedulerKind scheduler_kind_from_string(const std::string& name) {
  if (name == "top_k_confidence") return SchedulerKind::top_k_confidence;
  if (name == "random_k") return SchedulerKind::random_k;
  if (name == "gaussian_top_k") return SchedulerKind::gaussian_top_k;
  if (name == "all_at_once") return SchedulerKind::all_at_once;
  throw std::invalid_argument("unknown scheduler kind: " + name);
}

std::string to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::top_k_confidence: return "top_k_confidence";
    case SchedulerKind::random_k: return "random_k";
    case SchedulerKind::gaussian_top_k: return "gaussian_top_k";
    case SchedulerKind::all_at_once: return "all_at_once";
  }
  throw std::logic_error("to_string: bad SchedulerKind");
}

int tokens_per_step(const SchedulerConfig& cfg, int block_size) {
  if (block_size < 1) throw std::invalid_argument("tokens_per_step: block size must be >= 1");
  if (cfg.kind == SchedulerKind::all_at_once) return block_size;
  if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0))
    throw std::invalid_argument("tokens_per_step: fraction outside (0, 1]");
  int n = static_cast<int>(std::floor(cfg.fraction * block_size));
  return std::max(1, n);
}

std::vector<int> select(const SchedulerConfig& cfg, const std::vector<int>& masked_indices,
                        std::span<const double> confidences, int block_offset,
                        int step_budget_remaining, Rng& rng) {
  if (masked_indices.empty()) throw std::invalid_argument("select: empty masked set");
  if (confidences.size() != masked_indices.size())
    throw std::invalid_argument("select: confidence count does not match masked set");
  if (step_budget_remaining < 1) throw std::invalid_argument("select: step budget must be >= 1");
  if (!std::is_sorted(masked_indices.begin(), masked_indices.end()))
    throw std::invalid_argument("select: masked indices must be ascending");

  const int m = static_cast<int>(masked_indices.size());
  if (step_budget_remaining == 1 || cfg.kind == SchedulerKind::all_at_once) return masked_indices;

  const int count = std::min(tokens_per_step(cfg, cfg.block_size), m);
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);

  switch (cfg.kind) {
    case SchedulerKind::top_k_confidence: {
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return confidences[a] > confidences[b]; });
      break;
    }
    case SchedulerKind::gaussian_top_k: {
      const double sigma = cfg.gaussian_width > 0.0 ? cfg.gaussian_width
                                                    : static_cast<double>(cfg.block_size) / 2.0;
      std::vector<double> weight(m);
      for (int j = 0; j < m; ++j) {
        const double pos = static_cast<double>(masked_indices[j] - block_offset) - cfg.gaussian_center;
        weight[j] = confidences[j] * std::exp(-pos * pos / (2.0 * sigma * sigma));
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return weight[a] > weight[b]; });
      break;
    }
    case SchedulerKind::random_k: {
      // Partial Fisher-Yates; draws exactly `count` integers from the rng.
      for (int j = 0; j < count; ++j) {
        int pick = j + rng.uniform_int(m - j);
        std::swap(order[j], order[pick]);
      }
      break;
    }
    case SchedulerKind::all_at_once: break; // handled above
  }

  std::vector<int> out(count);
  for (int j = 0; j < count; ++j) out[j] = masked_indices[order[j]];
  std::sort(out.begin(), out.end());
  return out;
}

ReplayResult training_unmask_sets(const SchedulerConfig& cfg, const PolicyParams& conf_policy,
                                  const State& completion, const State& prompt, int block, int t,
                                  const BlockLayout& layout, Rng& rng) {
  const int L = layout.seq_len();
  const int B = layout.block_size;
  const int P = static_cast<int>(prompt.size());
  const Vocab vocab = conf_policy.vocab();
  if (static_cast<int>(completion.size()) != L)
    throw std::invalid_argument("training_unmask_sets: completion length does not match layout");
  if (block < 0 || block >= layout.num_blocks)
    throw std::invalid_argument("training_unmask_sets: block out of range");
  if (t < 1 || t > layout.steps_per_block)
    throw std::invalid_argument("training_unmask_sets: step outside [1, T_B]");
  for (int g = 0; g < L; ++g)
    if (!vocab.is_real(completion[g]) && !vocab.is_pad(completion[g]))
      throw std::invalid_argument("training_unmask_sets: completion must be unmasked");

  SchedulerConfig local = cfg;
  if (local.block_size == 0) local.block_size = B;

  // Blocks before `block` carry the completion, later blocks are masked; pad
  // coordinates keep their pad everywhere.
  State state(prompt);
  state.insert(state.end(), completion.begin(), completion.end());
  std::vector<int> masked;
  for (int g = layout.block_begin(block); g < L; ++g) {
    if (vocab.is_pad(completion[g])) continue;
    state[P + g] = vocab.mask_id();
    if (g < layout.block_end(block)) masked.push_back(g);
  }

  const VisibilityMask vis = build_standalone_block_mask(layout, P);
  std::vector<double> cached_conf; // single_forward_replay: confidences frozen at t = T_B

  auto confidences_at = [&](const std::vector<int>& idx) {
    std::vector<double> conf(idx.size());
    if (cfg.single_forward_replay && !cached_conf.empty()) {
      for (size_t j = 0; j < idx.size(); ++j)
        conf[j] = cached_conf[idx[j] - layout.block_begin(block)];
      return conf;
    }
    PolicyOutput out = forward(conf_policy, state, vis);
    if (cfg.single_forward_replay) {
      cached_conf.assign(B, 0.0);
      for (int i = 0; i < B; ++i) {
        const int g = layout.block_begin(block) + i;
        if (out.valid[P + g]) cached_conf[i] = out.confidence[P + g];
      }
    }
    for (size_t j = 0; j < idx.size(); ++j) conf[j] = out.confidence[P + idx[j]];
    return conf;
  };

  for (int r = layout.steps_per_block; r > t; --r) {
    if (masked.empty()) break;
    std::vector<int> sel =
        select(local, masked, confidences_at(masked), layout.block_begin(block), r, rng);
    for (int g : sel) state[P + g] = completion[g];
    std::vector<int> rest;
    std::set_difference(masked.begin(), masked.end(), sel.begin(), sel.end(),
                        std::back_inserter(rest));
    masked = std::move(rest);
  }

  ReplayResult res;
  res.unmask_set = masked.empty() ? std::vector<int>{}
                                  : select(local, masked, confidences_at(masked),
                                           layout.block_begin(block), t, rng);
  res.state = std::move(state);
  return res;
}

} // namespace maskdiff
