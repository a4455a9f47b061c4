#ifndef GSNTK_ORACLES_HPP
#define GSNTK_ORACLES_HPP

// Dense reference computations used by the tests, the acceptance suite and
// `gsntk verify`. Everything here is built from single-site step derivatives
// or full forward passes, never from the batched operators under test.

#include "models/common.hpp"

#include <vector>

namespace gsntk::oracle {

/// L = I - D_h f T as a dense dim x dim matrix; P = L^-1.
template <class M>
Matrix state_shift_matrix(const M& model, const typename M::State& s) {
  const Index n = model.n_h(), dim = s.n_x * s.n_t * n;
  Matrix L = Matrix::Identity(dim, dim);
  for (Index j = 0; j < s.n_x; ++j)
    for (Index t = 1; t < s.n_t; ++t)
      for (Index i = 0; i < n; ++i) {
        Vector e = Vector::Zero(n);
        e(i) = 1.0;
        L.block((j * s.n_t + t) * n, (j * s.n_t + t - 1) * n + i, n, 1) -= model.step_jvp_state(s, j, t, e);
      }
  return L;
}

/// Total derivative dS/dtheta (dim x p) by forward-mode accumulation in time,
/// one parameter basis direction at a time.
template <class M>
Matrix total_param_jacobian(const M& model, const typename M::State& s) {
  const Index n = model.n_h(), p = model.num_params(), dim = s.n_x * s.n_t * n;
  Matrix J(dim, p);
  for (Index i = 0; i < p; ++i) {
    Vector e = Vector::Zero(p);
    e(i) = 1.0;
    auto dir = direction_from_flat(model.params, M::kDynamics, e);
    for (Index j = 0; j < s.n_x; ++j) {
      Vector u = Vector::Zero(n);
      for (Index t = 0; t < s.n_t; ++t) {
        Vector next = model.step_jvp_params(s, j, t, dir);
        if (t > 0) next += model.step_jvp_state(s, j, t, u);
        J.block((j * s.n_t + t) * n, i, n, 1) = next;
        u = next;
      }
    }
  }
  return J;
}

/// dS/dtheta by central differences of full forward passes.
template <class M>
Matrix fd_param_jacobian(const M& model, const TaskBatch& batch, double eps = 1e-6) {
  const Vector th = model.params.flatten(M::kDynamics);
  Matrix J;
  for (Index i = 0; i < th.size(); ++i) {
    M plus = model, minus = model;
    Vector tp = th, tm = th;
    tp(i) += eps;
    tm(i) -= eps;
    plus.params.unflatten(M::kDynamics, tp);
    minus.params.unflatten(M::kDynamics, tm);
    Vector col = (plus.forward(batch).flat() - minus.forward(batch).flat()) / (2 * eps);
    if (i == 0) J.resize(col.size(), th.size());
    J.col(i) = col;
  }
  return J;
}

/// Partial trace over the axes flagged in `traced`, divided by the traced
/// extent, by explicit index enumeration over a row-major tensor layout.
inline Matrix partial_average(const Matrix& m, const std::vector<Index>& ext, const std::vector<bool>& traced) {
  const auto na = ext.size();
  Index nk = 1, nt = 1;
  for (std::size_t a = 0; a < na; ++a) (traced[a] ? nt : nk) *= ext[a];
  Matrix out = Matrix::Zero(nk, nk);
  auto split = [&](Index flat) {
    std::vector<Index> idx(na);
    for (std::size_t a = na; a-- > 0;) {
      idx[a] = flat % ext[a];
      flat /= ext[a];
    }
    return idx;
  };
  auto kept_index = [&](const std::vector<Index>& idx) {
    Index r = 0;
    for (std::size_t a = 0; a < na; ++a)
      if (!traced[a]) r = r * ext[a] + idx[a];
    return r;
  };
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      auto ir = split(r), ic = split(c);
      bool same = true;
      for (std::size_t a = 0; a < na; ++a)
        if (traced[a] && ir[a] != ic[a]) same = false;
      if (same) out(kept_index(ir), kept_index(ic)) += m(r, c);
    }
  return out / static_cast<double>(nt);
}

}  // namespace gsntk::oracle

#endif  // GSNTK_ORACLES_HPP
