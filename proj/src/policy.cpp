#include "maskdiff/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace maskdiff {

static_assert(std::endian::native == std::endian::little,
              "params.bin is little-endian; byte swapping is not implemented");

PolicyParams PolicyParams::zeros(int vocab, int dim, int max_pos) {
  if (vocab < 1 || dim < 1 || max_pos < 1)
    throw std::invalid_argument("PolicyParams: dimensions must be >= 1");
  PolicyParams p;
  p.vocab_size = vocab;
  p.embed_dim = dim;
  p.max_positions = max_pos;
  p.token_embed = Matrix(vocab + 1, dim);
  p.pos_embed = Matrix(max_pos, dim);
  p.out_proj = Matrix(dim, vocab);
  return p;
}

PolicyParams PolicyParams::random(int vocab, int dim, int max_pos, double scale, Rng& rng) {
  PolicyParams p = zeros(vocab, dim, max_pos);
  for (double& x : p.token_embed.data) x = scale * rng.normal();
  for (double& x : p.pos_embed.data) x = scale * rng.normal();
  for (double& x : p.out_proj.data) x = scale * rng.normal();
  return p;
}

ParamGrads ParamGrads::zeros_like(const PolicyParams& p) {
  ParamGrads g;
  g.token_embed = Matrix(p.token_embed.rows, p.token_embed.cols);
  g.pos_embed = Matrix(p.pos_embed.rows, p.pos_embed.cols);
  g.out_proj = Matrix(p.out_proj.rows, p.out_proj.cols);
  return g;
}

void save_params(const std::string& path, const PolicyParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  int32_t header[3] = {p.vocab_size, p.embed_dim, p.max_positions};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (const Matrix* m : {&p.token_embed, &p.pos_embed, &p.out_proj})
    out.write(reinterpret_cast<const char*>(m->data.data()),
              static_cast<std::streamsize>(m->data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

PolicyParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  int32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error("load_params: truncated header in " + path);
  PolicyParams p = PolicyParams::zeros(header[0], header[1], header[2]);
  for (Matrix* m : {&p.token_embed, &p.pos_embed, &p.out_proj}) {
    in.read(reinterpret_cast<char*>(m->data.data()),
            static_cast<std::streamsize>(m->data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_params: truncated payload in " + path);
  }
  return p;
}

VisibilityMask VisibilityMask::full(int n) {
  VisibilityMask m(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m.set(i, j, true);
  return m;
}

VisibilityMask build_standalone_block_mask(const BlockLayout& layout, int prompt_len) {
  if (prompt_len < 0) throw std::invalid_argument("build_standalone_block_mask: negative prompt");
  const int n = prompt_len + layout.seq_len();
  VisibilityMask m(n);
  for (int i = 0; i < prompt_len; ++i)
    for (int j = 0; j < prompt_len; ++j) m.set(i, j, true);
  for (int g = 0; g < layout.seq_len(); ++g) {
    const int s = g / layout.block_size;
    const int limit = prompt_len + layout.block_end(s);
    for (int j = 0; j < limit; ++j) m.set(prompt_len + g, j, true);
  }
  return m;
}

VisibilityMask build_block_attention_mask(const BlockLayout& layout, int prompt_len) {
  if (prompt_len < 0) throw std::invalid_argument("build_block_attention_mask: negative prompt");
  const int L = layout.seq_len();
  const int half = prompt_len + L;
  VisibilityMask m(2 * half);

  auto see_clean_prompt = [&](int row) {
    for (int j = 0; j < prompt_len; ++j) m.set(row, half + j, true);
  };

  // Masked half. Prompt rows see the clean prompt; a generated row in block s
  // sees its own masked block, the clean half of earlier blocks, and the
  // clean prompt. Masked-half prompt columns stay invisible to everyone.
  for (int i = 0; i < prompt_len; ++i) see_clean_prompt(i);
  for (int g = 0; g < L; ++g) {
    const int s = g / layout.block_size;
    const int row = prompt_len + g;
    see_clean_prompt(row);
    for (int j = layout.block_begin(s); j < layout.block_end(s); ++j)
      m.set(row, prompt_len + j, true);
    for (int j = 0; j < layout.block_begin(s); ++j) m.set(row, half + prompt_len + j, true);
  }

  // Clean half: bidirectional within blocks <= s, plus the prompt.
  for (int i = 0; i < prompt_len; ++i) see_clean_prompt(half + i);
  for (int g = 0; g < L; ++g) {
    const int s = g / layout.block_size;
    const int row = half + prompt_len + g;
    see_clean_prompt(row);
    for (int j = 0; j < layout.block_end(s); ++j) m.set(row, half + prompt_len + j, true);
  }
  return m;
}

namespace {

struct RowContext {
  std::vector<double> hidden; // d
  int visible_count = 0;      // non-pad visible positions
};

// Pools one row's hidden state; visible_count == 0 flags an invalid row.
RowContext pool_row(const PolicyParams& p, const State& tokens, const VisibilityMask& vis, int i,
                    int pos_id) {
  RowContext ctx;
  ctx.hidden.assign(p.embed_dim, 0.0);
  const Vocab v = p.vocab();
  const int n = static_cast<int>(tokens.size());
  for (int j = 0; j < n; ++j) {
    if (!vis.at(i, j) || v.is_pad(tokens[j])) continue;
    auto emb = p.token_embed.row(tokens[j]);
    for (int k = 0; k < p.embed_dim; ++k) ctx.hidden[k] += emb[k];
    ++ctx.visible_count;
  }
  if (ctx.visible_count == 0) return ctx;
  const double inv = 1.0 / static_cast<double>(ctx.visible_count);
  auto pos = p.pos_embed.row(pos_id);
  for (int k = 0; k < p.embed_dim; ++k) ctx.hidden[k] = pos[k] + ctx.hidden[k] * inv;
  return ctx;
}

void check_inputs(const PolicyParams& p, const State& tokens, const VisibilityMask& vis,
                  std::span<const int> position_ids, const char* what) {
  const int n = static_cast<int>(tokens.size());
  if (vis.size() != n) throw std::invalid_argument(std::string(what) + ": visibility size mismatch");
  if (!position_ids.empty() && static_cast<int>(position_ids.size()) != n)
    throw std::invalid_argument(std::string(what) + ": position id count mismatch");
  const Vocab v = p.vocab();
  for (int j = 0; j < n; ++j) {
    TokenId t = tokens[j];
    if (!v.is_real(t) && !v.is_mask(t) && !v.is_pad(t))
      throw std::invalid_argument(std::string(what) + ": token outside alphabet");
  }
  for (int j = 0; j < n; ++j) {
    int pos = position_ids.empty() ? j : position_ids[j];
    if (pos < 0 || pos >= p.max_positions)
      throw std::out_of_range(std::string(what) + ": position id outside [0, L_max)");
  }
}

} // namespace

std::span<const double> PolicyOutput::mu_at(int i) const {
  if (i < 0 || i >= mu.rows) throw std::out_of_range("PolicyOutput::mu_at: row out of range");
  if (!valid[i]) throw std::invalid_argument("PolicyOutput::mu_at: position has an empty visible set");
  return mu.row(i);
}

std::span<const double> PolicyOutput::log_mu_at(int i) const {
  if (i < 0 || i >= log_mu.rows) throw std::out_of_range("PolicyOutput::log_mu_at: row out of range");
  if (!valid[i])
    throw std::invalid_argument("PolicyOutput::log_mu_at: position has an empty visible set");
  return log_mu.row(i);
}

PolicyOutput forward(const PolicyParams& p, const State& tokens, const VisibilityMask& vis,
                     std::span<const int> position_ids) {
  check_inputs(p, tokens, vis, position_ids, "forward");
  const int n = static_cast<int>(tokens.size());
  const int V = p.vocab_size;
  PolicyOutput out;
  out.mu = Matrix(n, V);
  out.log_mu = Matrix(n, V);
  out.confidence.assign(n, 0.0);
  out.valid.assign(n, 0);

  std::vector<double> logits(V);
  for (int i = 0; i < n; ++i) {
    const int pos = position_ids.empty() ? i : position_ids[i];
    RowContext ctx = pool_row(p, tokens, vis, i, pos);
    if (ctx.visible_count == 0) continue;
    out.valid[i] = 1;
    for (int v = 0; v < V; ++v) {
      double z = 0.0;
      for (int k = 0; k < p.embed_dim; ++k) z += ctx.hidden[k] * p.out_proj(k, v);
      logits[v] = z;
    }
    double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (int v = 0; v < V; ++v) sum += std::exp(logits[v] - zmax);
    const double log_z = zmax + std::log(sum);
    double best = 0.0;
    for (int v = 0; v < V; ++v) {
      out.log_mu(i, v) = logits[v] - log_z;
      out.mu(i, v) = std::exp(out.log_mu(i, v));
      best = std::max(best, out.mu(i, v));
    }
    out.confidence[i] = best;
  }
  return out;
}

ParamGrads backward(const PolicyParams& p, const State& tokens, const VisibilityMask& vis,
                    const Matrix& upstream, std::span<const int> position_ids) {
  check_inputs(p, tokens, vis, position_ids, "backward");
  const int n = static_cast<int>(tokens.size());
  if (upstream.rows != n || upstream.cols != p.vocab_size)
    throw std::invalid_argument("backward: upstream shape mismatch");

  ParamGrads g = ParamGrads::zeros_like(p);
  const Vocab vb = p.vocab();
  std::vector<double> logits(p.vocab_size), mu(p.vocab_size), glog(p.vocab_size), dh(p.embed_dim);

  for (int i = 0; i < n; ++i) {
    auto u = upstream.row(i);
    bool touched = false;
    for (double x : u)
      if (x != 0.0) { touched = true; break; }
    if (!touched) continue;

    const int pos = position_ids.empty() ? i : position_ids[i];
    RowContext ctx = pool_row(p, tokens, vis, i, pos);
    if (ctx.visible_count == 0)
      throw std::invalid_argument("backward: upstream consumes a position with an empty visible set");

    for (int v = 0; v < p.vocab_size; ++v) {
      double z = 0.0;
      for (int k = 0; k < p.embed_dim; ++k) z += ctx.hidden[k] * p.out_proj(k, v);
      logits[v] = z;
    }
    double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (int v = 0; v < p.vocab_size; ++v) sum += std::exp(logits[v] - zmax);
    for (int v = 0; v < p.vocab_size; ++v) mu[v] = std::exp(logits[v] - zmax) / sum;

    // d loss / d logits for loss expressed through log_mu rows.
    double usum = 0.0;
    for (int v = 0; v < p.vocab_size; ++v) usum += u[v];
    for (int v = 0; v < p.vocab_size; ++v) glog[v] = u[v] - mu[v] * usum;

    if (p.trainable.out_proj)
      for (int k = 0; k < p.embed_dim; ++k)
        for (int v = 0; v < p.vocab_size; ++v) g.out_proj(k, v) += ctx.hidden[k] * glog[v];

    for (int k = 0; k < p.embed_dim; ++k) {
      double acc = 0.0;
      for (int v = 0; v < p.vocab_size; ++v) acc += p.out_proj(k, v) * glog[v];
      dh[k] = acc;
    }

    if (p.trainable.pos_embed)
      for (int k = 0; k < p.embed_dim; ++k) g.pos_embed(pos, k) += dh[k];

    if (p.trainable.token_embed) {
      const double inv = 1.0 / static_cast<double>(ctx.visible_count);
      for (int j = 0; j < n; ++j) {
        if (!vis.at(i, j) || vb.is_pad(tokens[j])) continue;
        for (int k = 0; k < p.embed_dim; ++k) g.token_embed(tokens[j], k) += inv * dh[k];
      }
    }
  }
  return g;
}

void accumulate(ParamGrads& into, const ParamGrads& g, double scale) {
  if (!into.token_embed.same_shape(g.token_embed) || !into.pos_embed.same_shape(g.pos_embed) ||
      !into.out_proj.same_shape(g.out_proj))
    throw std::invalid_argument("accumulate: gradient shape mismatch");
  for (size_t i = 0; i < into.token_embed.data.size(); ++i)
    into.token_embed.data[i] += scale * g.token_embed.data[i];
  for (size_t i = 0; i < into.pos_embed.data.size(); ++i)
    into.pos_embed.data[i] += scale * g.pos_embed.data[i];
  for (size_t i = 0; i < into.out_proj.data.size(); ++i)
    into.out_proj.data[i] += scale * g.out_proj.data[i];
}

PackedInput build_packed_input(const std::vector<State>& block_states, const State& clean,
                               const State& prompt, const BlockLayout& layout) {
  const int L = layout.seq_len();
  const int B = layout.block_size;
  const int P = static_cast<int>(prompt.size());
  if (static_cast<int>(clean.size()) != L)
    throw std::invalid_argument("build_packed_input: clean length does not match layout");
  if (static_cast<int>(block_states.size()) != layout.num_blocks)
    throw std::invalid_argument("build_packed_input: block state count mismatch");

  PackedInput in;
  in.prompt_len = P;
  in.half = P + L;
  in.tokens.reserve(2 * in.half);
  in.tokens.insert(in.tokens.end(), prompt.begin(), prompt.end());
  for (int s = 0; s < layout.num_blocks; ++s) {
    if (static_cast<int>(block_states[s].size()) != B)
      throw std::invalid_argument("build_packed_input: block state length mismatch");
    in.tokens.insert(in.tokens.end(), block_states[s].begin(), block_states[s].end());
  }
  in.tokens.insert(in.tokens.end(), prompt.begin(), prompt.end());
  in.tokens.insert(in.tokens.end(), clean.begin(), clean.end());

  in.positions.resize(2 * in.half);
  for (int i = 0; i < in.half; ++i) {
    in.positions[i] = i;
    in.positions[in.half + i] = i;
  }
  in.vis = build_block_attention_mask(layout, P);
  return in;
}

PolicyOutput packed_forward(const PolicyParams& p, const std::vector<State>& block_states,
                            const State& clean, const State& prompt, const BlockLayout& layout) {
  const Vocab v = p.vocab();
  const int B = layout.block_size;
  for (int s = 0; s < layout.num_blocks; ++s) {
    if (static_cast<int>(block_states[s].size()) != B)
      throw std::invalid_argument("packed_forward: block state length mismatch");
    for (int i = 0; i < B; ++i) {
      TokenId got = block_states[s][i];
      TokenId want = clean.at(static_cast<size_t>(layout.block_begin(s)) + i);
      bool consistent = v.is_pad(want) ? got == want : (v.is_mask(got) || got == want);
      if (!consistent)
        throw std::invalid_argument("packed_forward: block state disagrees with clean sequence");
    }
  }

  PackedInput in = build_packed_input(block_states, clean, prompt, layout);
  PolicyOutput packed = forward(p, in.tokens, in.vis, in.positions);

  const int L = layout.seq_len();
  PolicyOutput out;
  out.mu = Matrix(L, p.vocab_size);
  out.log_mu = Matrix(L, p.vocab_size);
  out.confidence.assign(L, 0.0);
  out.valid.assign(L, 0);
  for (int g = 0; g < L; ++g) {
    const int row = in.masked_row(g);
    for (int vv = 0; vv < p.vocab_size; ++vv) {
      out.mu(g, vv) = packed.mu(row, vv);
      out.log_mu(g, vv) = packed.log_mu(row, vv);
    }
    out.confidence[g] = packed.confidence[row];
    out.valid[g] = packed.valid[row];
  }
  return out;
}

} // namespace maskdiff
