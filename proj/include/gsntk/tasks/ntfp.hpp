#ifndef GSNTK_TASKS_NTFP_HPP
#define GSNTK_TASKS_NTFP_HPP

// Recurrent weights with prescribed non-trivial fixed points (NTFPs) of the
// autonomous map h -> W tanh(h).

#include "../models/common.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace gsntk {

/// scale * e_i for i < m; tanh maps these to mutually orthogonal vectors.
inline std::vector<Vector> coordinate_points(Index n_h, Index m, double scale = 2.0) {
  if (m < 0 || m > n_h) throw std::invalid_argument("coordinate_points: need 0 <= m <= n_h");
  std::vector<Vector> pts;
  for (Index i = 0; i < m; ++i) {
    Vector v = Vector::Zero(n_h);
    v(i) = scale;
    pts.push_back(v);
  }
  return pts;
}

/// W = Σ h_i σ(h_i)ᵀ/‖σ(h_i)‖² + W_g (I - Π), Π the projector onto span σ(h_i)
/// and W_g Xavier-normal with gain g. Throws if the σ-images are not orthogonal.
inline Matrix ntfp_weights(Index n_h, const std::vector<Vector>& points, double gain, Rng& rng) {
  std::vector<Vector> s;
  for (const auto& h : points) {
    if (h.size() != n_h) throw ShapeError("ntfp_weights: fixed point has the wrong dimension");
    s.push_back(h.array().tanh().matrix());
    if (s.back().norm() == 0.0) throw std::invalid_argument("ntfp_weights: fixed point at the origin");
  }
  for (std::size_t a = 0; a < s.size(); ++a)
    for (std::size_t b = a + 1; b < s.size(); ++b)
      if (std::abs(s[a].dot(s[b])) > 1e-8 * s[a].norm() * s[b].norm())
        throw std::invalid_argument("ntfp_weights: tanh images of points " + std::to_string(a) + " and " +
                                    std::to_string(b) + " are not orthogonal");
  Matrix W = xavier_normal(n_h, n_h, gain, rng);
  Matrix proj = Matrix::Zero(n_h, n_h);
  for (const auto& v : s) proj += v * v.transpose() / v.squaredNorm();
  W -= W * proj;
  for (std::size_t i = 0; i < s.size(); ++i) W += points[i] * s[i].transpose() / s[i].squaredNorm();
  return W;
}

struct NtfpRun {
  Matrix endpoints;     // n_h x starts, time-averaged over the final window
  Matrix final_states;  // n_h x starts
  std::vector<Matrix> trajectories;  // per start, n_h x (recorded steps)
};

/// Iterates h <- W tanh(h) from Gaussian starts; endpoints are averages over
/// the last `window` steps so that a non-settling orbit still yields one point.
inline NtfpRun ntfp_simulate(const Matrix& W, Index starts, Index steps, Index window, double start_sd,
                             std::uint64_t seed, Index record_every = 0) {
  if (window < 1 || window > steps) throw std::invalid_argument("ntfp_simulate: need 1 <= window <= steps");
  const Index n = W.rows();
  NtfpRun run;
  Matrix h = gaussian_matrix(n, starts, seed, kSweep, start_sd);
  run.endpoints = Matrix::Zero(n, starts);
  if (record_every > 0) run.trajectories.assign(starts, Matrix(n, 0));
  std::vector<std::vector<Vector>> rec(record_every > 0 ? starts : 0);
  for (Index t = 0; t < steps; ++t) {
    h = W * h.array().tanh().matrix();
    if (!h.allFinite()) throw ForwardError("ntfp_simulate: non-finite state", 0, t);
    if (t >= steps - window) run.endpoints += h;
    if (record_every > 0 && t % record_every == 0)
      for (Index i = 0; i < starts; ++i) rec[i].push_back(h.col(i));
  }
  run.endpoints /= static_cast<double>(window);
  run.final_states = h;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    run.trajectories[i].resize(n, static_cast<Index>(rec[i].size()));
    for (std::size_t c = 0; c < rec[i].size(); ++c) run.trajectories[i].col(static_cast<Index>(c)) = rec[i][c];
  }
  return run;
}

/// Single-linkage clusters of the columns of `pts` under Euclidean distance <= tol.
/// Returns a label per column, labels ordered by first appearance.
inline std::vector<Index> cluster_points(const Matrix& pts, double tol) {
  const Index n = pts.cols();
  std::vector<Index> parent(n);
  std::iota(parent.begin(), parent.end(), Index{0});
  auto find = [&](Index i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (Index a = 0; a < n; ++a)
    for (Index b = a + 1; b < n; ++b)
      if ((pts.col(a) - pts.col(b)).norm() <= tol) parent[find(a)] = find(b);
  std::vector<Index> label(n, -1), root_label(n, -1);
  Index next = 0;
  for (Index i = 0; i < n; ++i) {
    const Index r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    label[i] = root_label[r];
  }
  return label;
}

inline Index cluster_count(const Matrix& pts, double tol) {
  auto l = cluster_points(pts, tol);
  return l.empty() ? 0 : *std::max_element(l.begin(), l.end()) + 1;
}

}  // namespace gsntk

#endif  // GSNTK_TASKS_NTFP_HPP
