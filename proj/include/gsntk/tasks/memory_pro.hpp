#ifndef GSNTK_TASKS_MEMORY_PRO_HPP
#define GSNTK_TASKS_MEMORY_PRO_HPP

// Delayed reproduction of a 2-D stimulus. Input channels are
// (fixation, cos θ, sin θ); targets are (fixation, cos θ, sin θ) with the
// stimulus channels active only in the response period.

#include "../models/common.hpp"

#include <numbers>

namespace gsntk {

struct MemoryProConfig {
  Index n_x = 10;
  Index stimulus = 10;
  Index memory = 10;
  Index response = 10;
  double noise_var = 0.0;  // 0 disables input noise
  std::uint64_t seed = 0;

  Index n_t() const { return stimulus + memory + response; }
  void validate() const {
    if (n_x < 1) throw std::invalid_argument("MemoryProConfig: n_x must be positive");
    if (stimulus < 1 || memory < 0 || response < 1)
      throw std::invalid_argument("MemoryProConfig: stimulus and response periods must be non-empty");
    if (noise_var < 0.0) throw std::invalid_argument("MemoryProConfig: noise variance must be non-negative");
  }
};

/// Trial angles, uniform on [0, 2π).
inline Vector memory_pro_angles(const MemoryProConfig& cfg) {
  Rng rng = make_rng(cfg.seed, kTask, 0);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  Vector th(cfg.n_x);
  for (Index j = 0; j < cfg.n_x; ++j) th(j) = u(rng);
  return th;
}

/// Builds inputs/targets for explicit angles. `n_t` is checked against the phase lengths.
inline TaskBatch memory_pro_batch(const MemoryProConfig& cfg, const Vector& theta, Index n_t = -1) {
  cfg.validate();
  if (n_t >= 0 && n_t != cfg.n_t())
    throw std::invalid_argument("memory_pro_batch: phase lengths sum to " + std::to_string(cfg.n_t()) + ", not " +
                                std::to_string(n_t));
  if (theta.size() != cfg.n_x) throw ShapeError("memory_pro_batch: need one angle per trial");
  const Index nt = cfg.n_t(), k = cfg.n_x * nt;
  TaskBatch b;
  b.n_x = cfg.n_x;
  b.n_t = nt;
  b.x = RowMatrix::Zero(k, 3);
  b.y = RowMatrix::Zero(k, 3);
  b.phase.resize(nt);
  for (Index t = 0; t < nt; ++t)
    b.phase[t] = t < cfg.stimulus ? Phase::stimulus : t < cfg.stimulus + cfg.memory ? Phase::memory : Phase::response;
  for (Index j = 0; j < cfg.n_x; ++j)
    for (Index t = 0; t < nt; ++t) {
      const Index r = j * nt + t;
      const double c = std::cos(theta(j)), s = std::sin(theta(j));
      switch (b.phase[t]) {
        case Phase::stimulus:
          b.x.row(r) << 1.0, c, s;
          b.y(r, 0) = 1.0;
          break;
        case Phase::memory:
          b.x(r, 0) = 1.0;
          b.y(r, 0) = 1.0;
          break;
        default:
          b.y(r, 1) = c;
          b.y(r, 2) = s;
      }
    }
  if (cfg.noise_var > 0.0) b.x += gaussian_matrix(k, 3, cfg.seed, kTask + 1, std::sqrt(cfg.noise_var));
  return b;
}

inline TaskBatch memory_pro_batch(const MemoryProConfig& cfg) { return memory_pro_batch(cfg, memory_pro_angles(cfg)); }

/// 1 for response-period rows, 0 elsewhere.
inline Vector response_mask(const TaskBatch& b) {
  if (static_cast<Index>(b.phase.size()) != b.n_t) throw std::invalid_argument("response_mask: batch has no phases");
  Vector m(b.k());
  for (Index j = 0; j < b.n_x; ++j)
    for (Index t = 0; t < b.n_t; ++t) m(j * b.n_t + t) = b.phase[t] == Phase::response ? 1.0 : 0.0;
  return m;
}

}  // namespace gsntk

#endif  // GSNTK_TASKS_MEMORY_PRO_HPP
