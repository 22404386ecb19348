#pragma once

// Mean-pool embedding policy. Each position pools the token embeddings it is
// allowed to see, adds its position embedding, and projects to a categorical
// over the real vocabulary:
//
//   h_i = P[pos_i] + (1/|Vis(i)|) sum_{j in Vis(i)} E[token_j]
//   mu_i = softmax(h_i^T W)
//
// Visibility is an explicit boolean mask, which is also how the block
// attention pattern for packed training inputs is expressed.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/matrix.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

struct TrainableMask {
  bool token_embed = true;
  bool pos_embed = true;
  bool out_proj = true;
};

struct PolicyParams {
  int vocab_size = 0;   // V
  int embed_dim = 0;    // d
  int max_positions = 0; // L_max
  Matrix token_embed;   // (V + 1) x d, row V is the mask embedding
  Matrix pos_embed;     // L_max x d
  Matrix out_proj;      // d x V
  TrainableMask trainable;

  static PolicyParams zeros(int vocab, int dim, int max_pos);
  static PolicyParams random(int vocab, int dim, int max_pos, double scale, Rng& rng);

  Vocab vocab() const { return Vocab(vocab_size); }
};

// Gradients with the same shapes as the parameter groups.
struct ParamGrads {
  Matrix token_embed;
  Matrix pos_embed;
  Matrix out_proj;

  static ParamGrads zeros_like(const PolicyParams& p);
};

// Binary round-trip: header {V, d, L_max} as little-endian int32, then E, P, W
// as row-major float64. The trainable mask is a runtime concern and is not
// serialized.
void save_params(const std::string& path, const PolicyParams& p);
PolicyParams load_params(const std::string& path);

class VisibilityMask {
 public:
  VisibilityMask() = default;
  explicit VisibilityMask(int n) : n_(n), bits_(static_cast<size_t>(n) * n, 0) {}

  static VisibilityMask full(int n);

  int size() const { return n_; }
  bool at(int i, int j) const { return bits_[static_cast<size_t>(i) * n_ + j] != 0; }
  void set(int i, int j, bool v) { bits_[static_cast<size_t>(i) * n_ + j] = v ? 1 : 0; }

 private:
  int n_ = 0;
  std::vector<uint8_t> bits_;
};

// Inference-time visibility over one sequence of prompt_len + L positions:
// every row sees the prompt, and a row in block s sees blocks <= s.
VisibilityMask build_standalone_block_mask(const BlockLayout& layout, int prompt_len);

// Training-time visibility over a packed sequence of 2 * (prompt_len + L)
// positions, masked half first. A masked-half row in block s sees the
// masked half of block s, the clean half of blocks < s, and the clean
// prompt; a clean-half row in block s sees the clean half of blocks <= s and
// the clean prompt.
VisibilityMask build_block_attention_mask(const BlockLayout& layout, int prompt_len);

struct PolicyOutput {
  Matrix mu;              // n x V
  Matrix log_mu;          // n x V, computed by log-softmax, not log(mu)
  std::vector<double> confidence; // max_v mu_i(v); 0 for invalid rows
  std::vector<uint8_t> valid;     // row has a nonempty visible set

  std::span<const double> mu_at(int i) const;
  std::span<const double> log_mu_at(int i) const;
};

// Categoricals at every position. Pad tokens are skipped when pooling and do
// not count toward the visible-set size; a row whose visible set is empty is
// marked invalid and throws when consumed through the checked accessors.
PolicyOutput forward(const PolicyParams& p, const State& tokens, const VisibilityMask& vis,
                     std::span<const int> position_ids = {});

// Pullback of d loss / d log_mu (one row per position, zero rows for
// positions that are not consumed) onto the parameter groups. Frozen groups
// come back as zeros.
ParamGrads backward(const PolicyParams& p, const State& tokens, const VisibilityMask& vis,
                    const Matrix& upstream, std::span<const int> position_ids = {});

void accumulate(ParamGrads& into, const ParamGrads& g, double scale = 1.0);

// One packed training sequence: [masked half | clean half], both halves
// carrying the prompt, with shared underlying position ids.
struct PackedInput {
  State tokens;
  std::vector<int> positions;
  VisibilityMask vis;
  int prompt_len = 0;
  int half = 0; // offset of the clean half, equals prompt_len + L

  // Packed row holding generated coordinate i of the masked half.
  int masked_row(int i) const { return prompt_len + i; }
};

// block_states holds the partially masked contents of each block (length B
// each); clean is the full unmasked sequence the clean half carries. Each
// block state must agree with clean wherever it is unmasked.
PackedInput build_packed_input(const std::vector<State>& block_states, const State& clean,
                               const State& prompt, const BlockLayout& layout);

// Forward on the packed sequence, restricted to the masked-half generated
// coordinates: row i of the result is coordinate i. Equals a standalone
// forward of each block state against its clean left context.
PolicyOutput packed_forward(const PolicyParams& p, const std::vector<State>& block_states,
                            const State& clean, const State& prompt, const BlockLayout& layout);

} // namespace maskdiff
