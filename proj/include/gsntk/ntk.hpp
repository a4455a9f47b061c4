#ifndef GSNTK_NTK_HPP
#define GSNTK_NTK_HPP

// Global-state NTK assembly: P, K, the Kronecker core, P_core, reduced views,
// adjoint states and the alignment / rank diagnostics built on them.

#include "linop.hpp"
#include "models/common.hpp"
#include "rnla.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gsntk {

/// Causal propagator P = (I - D_h f T)^-1 on S, by forward substitution in time.
template <class M>
LinOp propagator(const M& model, const typename M::State& s) {
  if constexpr (!M::kRecurrent) {
    throw UnsupportedError("propagator: model is not recurrent");
  } else {
    const Index n_x = s.n_x, n_t = s.n_t, n = s.n_h;
    auto shape = model.state_shape(s);
    // The closures keep their own copies so the operator outlives the caller's objects.
    auto mp = std::make_shared<const M>(model);
    auto sp = std::make_shared<const typename M::State>(s);
    auto fwd = [mp, sp, n_x, n_t, n](const Matrix& q) {
      Matrix u = q;
      Matrix prev = gather_time(u, n_x, n_t, n, 0);
      for (Index t = 1; t < n_t; ++t) {
        Matrix cur = gather_time(u, n_x, n_t, n, t) + mp->state_jvp_slice(*sp, t, prev);
        scatter_time(u, n_x, n_t, n, t, cur);
        prev = std::move(cur);
      }
      return u;
    };
    auto adj = [mp, sp, n_x, n_t, n](const Matrix& v) {
      Matrix w = v;
      Matrix next = gather_time(w, n_x, n_t, n, n_t - 1);
      for (Index t = n_t - 2; t >= 0; --t) {
        Matrix cur = gather_time(w, n_x, n_t, n, t) + mp->state_vjp_slice(*sp, t + 1, next);
        scatter_time(w, n_x, n_t, n, t, cur);
        next = std::move(cur);
      }
      return w;
    };
    return LinOp(shape, shape, fwd, adj);
  }
}

/// Immediate parameter Jacobian D_theta f as an operator from flat trainable parameters to S.
template <class M>
LinOp param_jacobian(const M& model, const typename M::State& s) {
  const Index p = model.num_params();
  if (p == 0) throw std::invalid_argument("param_jacobian: no trainable parameters");
  auto mp = std::make_shared<const M>(model);
  auto sp = std::make_shared<const typename M::State>(s);
  return LinOp(
      DomainShape::flat(p), model.state_shape(s), [mp, sp](const Matrix& th) { return mp->jvp_params(*sp, th); },
      [mp, sp](const Matrix& u) { return mp->vjp_params(*sp, u); });
}

/// K = (D_theta f)(D_theta f)*.
template <class M>
LinOp param_kernel(const M& model, const typename M::State& s) {
  auto j = param_jacobian(model, s);
  return with_psd(compose(j, adjoint(j)));
}

/// Sum over channels of (V_c V_c^T) ⊗ I_width, on the site space of the model.
inline LinOp kron_core(const WeightSites& w, Index n_x, Index n_t) {
  if (w.channels.empty()) throw std::invalid_argument("kron_core: no trainable weight sites");
  if (!w.V.allFinite()) throw std::invalid_argument("kron_core: V has non-finite entries");
  const DomainShape bt{{Axis::batch, n_x}, {Axis::time, n_t}};
  if (w.V.rows() != bt.size()) throw ShapeError("kron_core: V rows must equal n_x * n_t");
  std::vector<LinOp> blocks;
  bool uniform = true;
  Index total = 0;
  for (const auto& c : w.channels) {
    Matrix vc = w.channel_block(c);
    blocks.push_back(tensor_product(dense_wrap(vc * vc.transpose(), bt, bt, true),
                                    identity(DomainShape{{Axis::site, c.width}})));
    uniform = uniform && c.width == w.channels.front().width;
    total += blocks.back().cols();
  }
  if (blocks.size() == 1) return blocks.front();
  DomainShape shape = uniform ? DomainShape{{Axis::flat, static_cast<Index>(blocks.size())},
                                            {Axis::batch, n_x},
                                            {Axis::time, n_t},
                                            {Axis::site, w.channels.front().width}}
                              : DomainShape::flat(total);
  return block_diagonal(blocks, shape, shape);
}

/// G: per-site weight-product perturbations -> one-step state corrections.
template <class M>
LinOp site_map(const M& model, const typename M::State& s) {
  if constexpr (!M::kRecurrent) {
    throw UnsupportedError("site_map: site Jacobians are not available for this model");
  } else {
    auto mp = std::make_shared<const M>(model);
    auto sp = std::make_shared<const typename M::State>(s);
    return LinOp(
        model.site_shape(s), model.state_shape(s), [mp, sp](const Matrix& q) { return mp->site_jvp(*sp, q); },
        [mp, sp](const Matrix& u) { return mp->site_vjp(*sp, u); });
  }
}

/// P_core = P ∘ G.
template <class M>
LinOp propagator_core(const M& model, const typename M::State& s) {
  if constexpr (!M::kRecurrent) {
    throw UnsupportedError("propagator_core: lifted propagator is not available for attention models");
  } else {
    return compose(propagator(model, s), site_map(model, s));
  }
}

enum class NtkMode { direct, lifted };

struct NtkBundle {
  LinOp P;
  LinOp K;
  LinOp ntk;
  LinOp core;
  std::optional<LinOp> P_core;
  WeightSites sites;
  NtkMode mode = NtkMode::direct;
};

/// NTK_S = P K P* (direct) or P_core (V V^T ⊗ I) P_core* (lifted).
/// Attention models have no recurrence: P = I and K is the total-Jacobian Gram.
template <class M>
NtkBundle global_ntk(const M& model, const typename M::State& s, NtkMode mode = NtkMode::direct) {
  auto sites = model.weight_sites(s);
  auto core = kron_core(sites, s.n_x, s.n_t);
  auto K = param_kernel(model, s);
  if constexpr (!M::kRecurrent) {
    if (mode == NtkMode::lifted)
      throw UnsupportedError("global_ntk: lifted mode is not available for attention models");
    auto P = identity(model.state_shape(s));
    return NtkBundle{P, K, with_psd(K), core, std::nullopt, sites, mode};
  } else {
    auto P = propagator(model, s);
    auto Pc = propagator_core(model, s);
    LinOp ntk = mode == NtkMode::direct ? with_psd(compose(P, K, adjoint(P)))
                                        : with_psd(compose(Pc, core, adjoint(Pc)));
    return NtkBundle{P, K, ntk, core, Pc, sites, mode};
  }
}

/// NTK_temp: partial average over the feature axis (k x k).
inline LinOp temporal_view(const LinOp& ntk) { return partial_average(ntk, {ntk.domain().rank() - 1}); }

/// NTK_space: partial average over batch and time (n x n).
inline LinOp spatial_view(const LinOp& ntk) {
  std::set<std::size_t> axes;
  for (std::size_t a = 0; a + 1 < ntk.domain().rank(); ++a) axes.insert(a);
  return partial_average(ntk, axes);
}

/// Total state-parameter Jacobian P ∘ D_theta f, materialized (dim x p); NTK = F Fᵀ.
template <class M>
Matrix state_jacobian(const M& model, const typename M::State& s, Index cap = kDefaultMaterializeCap) {
  auto j = param_jacobian(model, s);
  if constexpr (M::kRecurrent) return materialize(compose(propagator(model, s), j), cap);
  else return materialize(j, cap);
}

namespace detail {
inline void check_factor(const Matrix& f, Index n) {
  if (n < 1 || f.rows() % n != 0) throw ShapeError("factor rows must be a multiple of the feature width");
}
}  // namespace detail

/// Temporal view of F Fᵀ without forming it: (1/n) Σ_f F_f F_fᵀ, F_f the rows of feature f.
inline Matrix temporal_gram(const Matrix& f, Index n) {
  detail::check_factor(f, n);
  const Index k = f.rows() / n;
  Matrix t = Matrix::Zero(k, k);
  for (Index i = 0; i < n; ++i) {
    Eigen::Map<const Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>> fi(
        f.data() + i, k, f.cols(), Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(f.rows(), n));
    t.selfadjointView<Eigen::Lower>().rankUpdate(Matrix(fi));
  }
  t = t.selfadjointView<Eigen::Lower>();
  return t / static_cast<double>(n);
}

/// Spatial view of F Fᵀ: (1/k) Σ_site F_site F_siteᵀ.
inline Matrix spatial_gram(const Matrix& f, Index n) {
  detail::check_factor(f, n);
  const Index k = f.rows() / n;
  Matrix s = Matrix::Zero(n, n);
  for (Index i = 0; i < k; ++i) s.noalias() += f.middleRows(i * n, n) * f.middleRows(i * n, n).transpose();
  return s / static_cast<double>(k);
}

struct ReducedViews {
  Matrix temporal;  // k x k
  Matrix spatial;   // n x n
};

/// Reduced views of F F* for an operator F into S, streaming `chunk`
/// columns of F at a time; both views are sums over columns.
inline ReducedViews factor_views(const LinOp& f, Index chunk = 256) {
  if (chunk < 1) throw std::invalid_argument("factor_views: chunk must be positive");
  const auto& d = f.codomain();
  if (d.rank() < 2) throw ShapeError("factor_views: codomain needs a trailing feature axis");
  const Index n = d.axis(d.rank() - 1).extent, k = d.size() / n, p = f.cols();
  ReducedViews v{Matrix::Zero(k, k), Matrix::Zero(n, n)};
  for (Index c0 = 0; c0 < p; c0 += chunk) {
    const Index c = std::min(chunk, p - c0);
    Matrix e = Matrix::Zero(p, c);
    for (Index i = 0; i < c; ++i) e(c0 + i, i) = 1.0;
    Matrix fc = f.apply(e);
    v.temporal += temporal_gram(fc, n);
    v.spatial += spatial_gram(fc, n);
  }
  return v;
}

/// Both reduced views of the NTK from its factor P ∘ D_theta f.
template <class M>
ReducedViews reduced_views(const M& model, const typename M::State& s, Index chunk = 256) {
  LinOp op = param_jacobian(model, s);
  if constexpr (M::kRecurrent) op = compose(propagator(model, s), op);
  return factor_views(op, chunk);
}

/// Temporal view of the weight-site Gram V V^T on (batch, time).
inline LinOp core_temporal(const WeightSites& w, Index n_x, Index n_t) {
  const DomainShape bt{{Axis::batch, n_x}, {Axis::time, n_t}};
  return dense_wrap(w.gram(), bt, bt, true);
}

/// adj = P* err.
inline Vector adjoint_state(const LinOp& P, const Vector& err) {
  if (err.size() != P.rows()) throw ShapeError("adjoint_state: error signal does not match the state space");
  if (!err.allFinite()) throw std::invalid_argument("adjoint_state: non-finite error signal");
  return P.rmatvec(err);
}

/// <NTK err, err>.
inline double quadratic_form(const LinOp& ntk, const Vector& err) {
  Matrix e = err;
  return inner(ntk.apply(e), e);
}

/// Σ_c ‖V_c^T A_c‖_F^2 where A_c is the channel-c block of the lifted
/// adjoint P_core* err reshaped (k x width).
inline double core_filter_norm(const WeightSites& w, const Vector& lifted_adj) {
  Index o = 0;
  CompensatedSum total;
  for (const auto& c : w.channels) {
    const Index k = w.V.rows(), blk = k * c.width;
    if (o + blk > lifted_adj.size()) throw ShapeError("core_filter_norm: lifted adjoint too short");
    // Row-major (k x width) block is column-major (width x k).
    Eigen::Map<const Matrix> a(lifted_adj.data() + o, c.width, k);
    Matrix f = a * w.channel_block(c);  // width x m_c = (V_c^T A_c)^T
    total.add(f.squaredNorm());
    o += blk;
  }
  if (o != lifted_adj.size()) throw ShapeError("core_filter_norm: lifted adjoint size mismatch");
  return total.value();
}

/// ‖a - b‖_F / ‖b‖_F, probe-estimated.
inline double verify_core(const LinOp& a, const LinOp& b, const ProbeConfig& cfg = {}) {
  const double nb = frobenius_norm(b, cfg);
  if (nb == 0.0) throw std::domain_error("verify_core: reference operator has zero norm");
  return frobenius_norm(sum(a, scale(-1.0, b)), cfg) / nb;
}

/// Kernel-target alignment <u, A u> / ‖A‖_F of a temporal view with a unit temporal mode.
inline double ntk_target_alignment(const LinOp& ntk_temporal, const Vector& mode, const ProbeConfig& cfg = {}) {
  if (std::abs(mode.norm() - 1.0) > 1e-8) throw std::invalid_argument("ntk_target_alignment: mode must be unit norm");
  const double nf = frobenius_norm(ntk_temporal, cfg);
  if (nf == 0.0) throw std::domain_error("ntk_target_alignment: operator has zero norm");
  return mode.dot(ntk_temporal.matvec(mode)) / nf;
}

/// Same metric for an already materialized view.
inline double ntk_target_alignment(const Matrix& ntk_temporal, const Vector& mode) {
  if (std::abs(mode.norm() - 1.0) > 1e-8) throw std::invalid_argument("ntk_target_alignment: mode must be unit norm");
  const double nf = ntk_temporal.norm();
  if (nf == 0.0) throw std::domain_error("ntk_target_alignment: operator has zero norm");
  return mode.dot(ntk_temporal * mode) / nf;
}

struct RankCheck {
  Index rank_dh = 0;
  Index rank_temporal = 0;
  Index rank_spatial = 0;
  bool holds() const { return rank_dh <= std::min(rank_temporal, rank_spatial); }
};

inline Index psd_rank(const Matrix& m, double rel_tol = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  const auto& ev = es.eigenvalues();
  if (ev.size() == 0) return 0;
  const double top = ev.maxCoeff();
  if (top <= 0.0) return 0;
  Index r = 0;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > rel_tol * top) ++r;
  return r;
}

/// rank(NTK err as k x n) against the ranks of the two reduced views.
inline RankCheck delta_h_rank_check(const LinOp& ntk, const Vector& err, double rel_tol = 1e-8) {
  const auto& d = ntk.domain();
  if (d.rank() < 2) throw ShapeError("delta_h_rank_check: need a (..., feature) domain");
  const Index n = d.axis(d.rank() - 1).extent, k = d.size() / n;
  Vector dh = ntk.matvec(err);
  RankCheck r;
  r.rank_dh = numerical_rank(Eigen::Map<const RowMatrix>(dh.data(), k, n), rel_tol);
  r.rank_temporal = psd_rank(materialize(temporal_view(ntk)), rel_tol);
  r.rank_spatial = psd_rank(materialize(spatial_view(ntk)), rel_tol);
  return r;
}

}  // namespace gsntk

#endif  // GSNTK_NTK_HPP
