#pragma once

// Adam with decoupled weight decay (0 by default) and a warmup-then-cosine
// learning-rate multiplier. Frozen parameter groups are skipped outright, so
// they stay bit-identical regardless of decay.

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "maskdiff/matrix.hpp"
#include "maskdiff/policy.hpp"

namespace maskdiff {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0; // decoupled; trainable groups only
};

struct AdamState {
  Matrix m_embed, v_embed, m_pos, v_pos, m_proj, v_proj;
  int64_t step = 0;

  static AdamState zeros_like(const PolicyParams& p) {
    AdamState s;
    s.m_embed = Matrix(p.token_embed.rows, p.token_embed.cols);
    s.v_embed = Matrix(p.token_embed.rows, p.token_embed.cols);
    s.m_pos = Matrix(p.pos_embed.rows, p.pos_embed.cols);
    s.v_pos = Matrix(p.pos_embed.rows, p.pos_embed.cols);
    s.m_proj = Matrix(p.out_proj.rows, p.out_proj.cols);
    s.v_proj = Matrix(p.out_proj.rows, p.out_proj.cols);
    return s;
  }
};

inline void adam_step(PolicyParams& params, AdamState& state, const ParamGrads& grads,
                      const AdamConfig& cfg, double lr_scale) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double lr = cfg.lr * lr_scale;

  auto update = [&](std::vector<double>& x, Matrix& m, Matrix& v, const Matrix& g,
                    bool trainable) {
    if (x.size() != g.data.size()) throw std::invalid_argument("adam_step: shape mismatch");
    if (!trainable) return;
    for (size_t i = 0; i < x.size(); ++i) {
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      x[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * x[i]);
    }
  };
  update(params.token_embed.data, state.m_embed, state.v_embed, grads.token_embed,
         params.trainable.token_embed);
  update(params.pos_embed.data, state.m_pos, state.v_pos, grads.pos_embed,
         params.trainable.pos_embed);
  update(params.out_proj.data, state.m_proj, state.v_proj, grads.out_proj,
         params.trainable.out_proj);
}

// Linear warmup over the first warmup_fraction of total_steps, cosine decay
// to zero afterwards. step is 0-based.
inline double cosine_lr_scale(int step, int total_steps, double warmup_fraction) {
  if (total_steps < 1) throw std::invalid_argument("cosine_lr_scale: total_steps must be >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
    throw std::invalid_argument("cosine_lr_scale: warmup fraction outside [0, 1]");
  const int warmup = static_cast<int>(warmup_fraction * total_steps);
  if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps == warmup) return 1.0;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

} // namespace maskdiff
