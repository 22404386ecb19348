#pragma once

// Shared value types: token alphabet, sequence states, block layout.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskdiff {

using TokenId = int32_t;

// A sequence over the extended alphabet {0..V-1} u {mask} u {pad}. The mask
// token is the absorbing state of the forward process; the pad token only
// appears as inert right-padding in preference data and is invisible to
// attention pooling.
using State = std::vector<TokenId>;

struct Vocab {
  int32_t size = 0; // number of real tokens V

  explicit Vocab(int32_t v) : size(v) {
    if (v < 1) throw std::invalid_argument("Vocab: size must be >= 1");
  }

  TokenId mask_id() const { return size; }
  TokenId pad_id() const { return size + 1; }

  bool is_real(TokenId t) const { return t >= 0 && t < size; }
  bool is_mask(TokenId t) const { return t == mask_id(); }
  bool is_pad(TokenId t) const { return t == pad_id(); }

  void require_real(TokenId t, const char* what) const {
    if (!is_real(t)) throw std::invalid_argument(std::string(what) + ": token outside real vocabulary");
  }
};

inline int count_masked(const State& s, const Vocab& v) {
  int n = 0;
  for (TokenId t : s) n += v.is_mask(t) ? 1 : 0;
  return n;
}

inline bool fully_masked(const State& s, const Vocab& v) {
  for (TokenId t : s)
    if (!v.is_mask(t)) return false;
  return true;
}

inline bool fully_unmasked(const State& s, const Vocab& v) {
  for (TokenId t : s)
    if (v.is_mask(t)) return false;
  return true;
}

// A preference judgment: two fully unmasked completions of equal,
// layout-compatible length (right-padded with the pad token if need be) over
// a shared prompt, pos preferred over neg.
struct PreferencePair {
  State prompt;
  State pos;
  State neg;
};

// Semi-autoregressive block structure. A sequence of L = num_blocks *
// block_size tokens is generated block by block, each block taking
// steps_per_block reverse steps; the total horizon is their product.
struct BlockLayout {
  int num_blocks = 1;     // N_B
  int steps_per_block = 1; // T_B
  int block_size = 1;     // B

  BlockLayout(int n_blocks, int t_block, int b_size)
      : num_blocks(n_blocks), steps_per_block(t_block), block_size(b_size) {
    if (n_blocks < 1 || t_block < 1 || b_size < 1)
      throw std::invalid_argument("BlockLayout: all dimensions must be >= 1");
  }

  int horizon() const { return num_blocks * steps_per_block; }  // T
  int seq_len() const { return num_blocks * block_size; }       // L

  int block_begin(int s) const { return s * block_size; }
  int block_end(int s) const { return (s + 1) * block_size; }

  // Block owning the j-th transition of a trajectory, j in [0, T).
  int block_of_transition(int j) const { return j / steps_per_block; }
  // Within-block time remaining for that transition, counting down T_B..1.
  int step_of_transition(int j) const { return steps_per_block - (j % steps_per_block); }
};

} // namespace maskdiff
