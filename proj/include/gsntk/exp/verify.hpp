#ifndef GSNTK_EXP_VERIFY_HPP
#define GSNTK_EXP_VERIFY_HPP

// The oracle suite behind `gsntk verify`: every identity and estimator claim
// checked against an independent route at materializable sizes.

#include "../models/fd_check.hpp"
#include "../ntk.hpp"
#include "../oracles.hpp"
#include "../tasks/fourier.hpp"
#include "../tasks/ntfp.hpp"
#include "../tasks/student_teacher.hpp"
#include "../tasks/train.hpp"
#include "results.hpp"

#include <chrono>
#include <functional>
#include <string>
#include <vector>

namespace gsntk {

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.pass()) return false;
    return true;
  }
  const CheckResult& at(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw std::out_of_range("verify: no check named " + name);
  }
};

namespace verify_detail {

inline TaskBatch random_batch(Index n_x, Index n_t, Index n_in, std::uint64_t seed) {
  Rng rng = make_rng(seed, kTask);
  return TaskBatch::from_inputs(n_x, n_t, gaussian_matrix(n_x * n_t, n_in, rng));
}

inline Rnn rnn(std::uint64_t seed, Index n_in = 2, Index n_h = 4, double gain = 1.2) {
  Rng rng = make_rng(seed, kInit);
  return Rnn::xavier(n_in, n_h, 1, gain, rng);
}

inline Gru gru(std::uint64_t seed, Index n_in = 2, Index n_h = 4, double gain = 1.5) {
  Rng rng = make_rng(seed, kInit);
  return Gru::xavier(n_in, n_h, 2, gain, rng);
}

inline AttnMlp attn(std::uint64_t seed, Index n_in = 3) {
  Rng rng = make_rng(seed, kInit);
  return AttnMlp::xavier(AttnConfig{n_in, 4, 5, 2, 3}, 1.0, rng);
}

inline double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

inline Vector randv(Index n, std::uint64_t seed) { return gaussian_matrix(n, 1, seed, kProbeVectors); }

template <class M>
double lifted_vs_direct(const M& m, const TaskBatch& b) {
  auto s = m.forward(b);
  return rel(materialize(global_ntk(m, s, NtkMode::lifted).ntk), materialize(global_ntk(m, s, NtkMode::direct).ntk));
}

/// Max over probe errors of the NTK action against J Jᵀ e for a given J.
template <class M>
double gram_action_error(const M& m, const typename M::State& s, const Matrix& J, std::uint64_t seed) {
  auto ntk = global_ntk(m, s).ntk;
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    Vector e = randv(s.dim(), seed + i);
    worst = std::max(worst, rel(ntk.matvec(e), J * (J.transpose() * e)));
  }
  return worst;
}

template <class M>
double adjoint_filter_error(const M& m, const TaskBatch& b, std::uint64_t seed) {
  auto s = m.forward(b);
  auto bundle = global_ntk(m, s);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Vector e = randv(s.dim(), seed + i);
    const double lhs = quadratic_form(bundle.ntk, e);
    const double rhs = core_filter_norm(bundle.sites, bundle.P_core->rmatvec(e));
    worst = std::max(worst, std::abs(lhs - rhs) / std::abs(lhs));
  }
  return worst;
}

template <class M>
Vector flat_state(const M& m, const typename M::State& s) {
  if constexpr (M::kRecurrent) {
    return s.flat();
  } else {
    Matrix g = m.global_state(s);
    return Eigen::Map<const Vector>(g.data(), g.size());
  }
}

/// Total VJP against a central difference of <u, S(theta)> along random directions.
template <class M>
double vjp_fd_error(const M& m, const TaskBatch& b, std::uint64_t seed, double eps = 1e-6) {
  auto s = m.forward(b);
  const auto& names = [&]() -> const std::vector<std::string>& {
    if constexpr (M::kRecurrent) return M::kDynamics;
    else return m.family_order();
  }();
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    Vector u = randv(s.dim(), seed + i);
    Matrix adj = u;
    if constexpr (M::kRecurrent) adj = propagator(m, s).apply_adjoint(adj);
    Vector g = m.vjp_params(s, adj);
    Rng rng = make_rng(seed + 100 + i, kProbeVectors);
    Vector d = gaussian_matrix(g.size(), 1, rng);
    M plus = m, minus = m;
    Vector th = plus.params.flatten(names);
    plus.params.unflatten(names, th + eps * d);
    minus.params.unflatten(names, th - eps * d);
    const double fd = u.dot(flat_state(plus, plus.forward(b)) - flat_state(minus, minus.forward(b))) / (2 * eps);
    const double an = g.dot(d);
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}));
  }
  return worst;
}

inline Matrix random_psd(Index n, Index rank, std::uint64_t seed) {
  Matrix g = gaussian_matrix(n, rank, seed, kSweep);
  return g * g.transpose() / static_cast<double>(rank);
}

}  // namespace verify_detail

/// Runs the suite; instances are drawn from `seed`, tolerances are fixed.
inline VerifyReport run_verify(std::uint64_t seed = 0, const std::function<void(const CheckResult&)>& on_check = {}) {
  using namespace verify_detail;
  VerifyReport rep;
  const std::uint64_t base = derive_seed(seed, kSweep);
  auto sd = [&](std::uint64_t i) { return base + 1000 * i; };
  auto run = [&](std::string name, double threshold, bool at_most, const std::function<double()>& f) {
    auto t0 = std::chrono::steady_clock::now();
    CheckResult c{std::move(name), f(), threshold, at_most, 0.0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.checks.push_back(c);
    if (on_check) on_check(c);
  };

  // Direct P K P* against lifted P_core (V Vᵀ ⊗ I) P_core*.
  run("lifted_assembly_rnn", 1e-8, true, [&] { return lifted_vs_direct(rnn(sd(1)), random_batch(3, 5, 2, sd(1) + 1)); });
  run("lifted_assembly_gru", 1e-8, true, [&] { return lifted_vs_direct(gru(sd(2)), random_batch(3, 5, 2, sd(2) + 1)); });

  // NTK action against Gram matrices of independently assembled Jacobians.
  auto jac = [&](auto m, const TaskBatch& b, std::uint64_t s0, bool fd) {
    auto s = m.forward(b);
    Matrix J = fd ? oracle::fd_param_jacobian(m, b, 1e-6) : oracle::total_param_jacobian(m, s);
    return gram_action_error(m, s, J, s0);
  };
  run("jacobian_gram_rnn", 1e-8, true, [&] { return jac(rnn(sd(3)), random_batch(3, 5, 2, sd(3) + 1), sd(3) + 2, false); });
  run("jacobian_gram_gru", 1e-8, true, [&] { return jac(gru(sd(4)), random_batch(3, 5, 2, sd(4) + 1), sd(4) + 2, false); });
  run("jacobian_gram_fd_rnn", 1e-4, true, [&] { return jac(rnn(sd(3)), random_batch(3, 5, 2, sd(3) + 1), sd(3) + 2, true); });
  run("jacobian_gram_fd_gru", 1e-4, true, [&] { return jac(gru(sd(4)), random_batch(3, 5, 2, sd(4) + 1), sd(4) + 2, true); });

  // <NTK e, e> = ‖(Vᵀ ⊗ I) P_core* e‖².
  run("adjoint_filter_rnn", 1e-8, true, [&] { return adjoint_filter_error(rnn(sd(5)), random_batch(3, 5, 2, sd(5) + 1), sd(5) + 2); });
  run("adjoint_filter_gru", 1e-8, true, [&] { return adjoint_filter_error(gru(sd(6)), random_batch(3, 5, 2, sd(6) + 1), sd(6) + 2); });

  // rank(δh) <= min(temporal rank, spatial rank), counted violations.
  run("rank_bottleneck_violations", 0.0, true, [&] {
    int bad = 0;
    for (int i = 0; i < 100; ++i) {
      Rng rng = make_rng(sd(7) + i, kSweep);
      std::uniform_int_distribution<int> dn(1, 5), dt(1, 6), dx(1, 3), dm(0, 2);
      const Index n_h = dn(rng), n_t = dt(rng), n_x = dx(rng), n_in = dx(rng);
      const int mask = dm(rng);
      auto one = [&](auto m) {
        if (mask == 1) m.params.set_trainable("rec", false);
        if (mask == 2) m.params.set_trainable("in", false);
        auto s = m.forward(random_batch(n_x, n_t, n_in, sd(7) + 200 + i));
        return delta_h_rank_check(global_ntk(m, s).ntk, randv(s.dim(), sd(7) + 400 + i)).holds();
      };
      const double gain = 0.5 + 0.02 * i;
      bad += !(i % 2 == 0 ? one(rnn(sd(7) + 600 + i, n_in, n_h, gain)) : one(gru(sd(7) + 600 + i, n_in, n_h, gain)));
    }
    return static_cast<double>(bad);
  });

  // Analytic derivatives against central differences.
  run("fd_jvp_rnn", 1e-6, true, [&] { return fd_check(rnn(sd(8)), random_batch(3, 5, 2, sd(8) + 1), 1e-6, sd(8)).max(); });
  run("fd_jvp_gru", 1e-6, true, [&] { return fd_check(gru(sd(9), 3, 6), random_batch(3, 6, 3, sd(9) + 1), 1e-6, sd(9)).max(); });
  run("fd_jvp_attention", 1e-6, true, [&] {
    auto m = attn(sd(10));
    m.params.set_trainable("W3", true);
    m.params.set_trainable("b1", true);
    return fd_check_attention(m, random_batch(2, 5, 3, sd(10) + 1), 1e-6, sd(10)).max();
  });
  run("fd_vjp_rnn", 1e-6, true, [&] { return vjp_fd_error(rnn(sd(11)), random_batch(3, 5, 2, sd(11) + 1), sd(11)); });
  run("fd_vjp_gru", 1e-6, true, [&] { return vjp_fd_error(gru(sd(12)), random_batch(3, 5, 2, sd(12) + 1), sd(12)); });
  run("fd_vjp_attention", 1e-6, true, [&] { return vjp_fd_error(attn(sd(13)), random_batch(2, 5, 3, sd(13) + 1), sd(13)); });
  run("fd_loss_gradient_gru", 1e-6, true, [&] {
    auto m = gru(sd(14));
    auto b = random_batch(2, 4, 2, sd(14) + 1);
    b.y = gaussian_matrix(b.k(), 2, sd(14) + 2, kTask);
    auto [loss, g] = loss_and_gradient(m, b);
    Vector gf = m.params.flatten(Gru::kDynamics);
    Vector d = randv(gf.size(), sd(14) + 3);
    Vector an(gf.size());
    Index o = 0;
    for (const auto& f : Gru::kDynamics) {
      an.segment(o, g[f].size()) = Eigen::Map<const Vector>(g[f].data(), g[f].size());
      o += g[f].size();
    }
    const double eps = 1e-6;
    Gru p = m, q = m;
    p.params.unflatten(Gru::kDynamics, gf + eps * d);
    q.params.unflatten(Gru::kDynamics, gf - eps * d);
    const double fd = (mse(p.outputs(p.forward(b)), b.y).loss - mse(q.outputs(q.forward(b)), b.y).loss) / (2 * eps);
    return std::abs(an.dot(d) - fd) / std::max(std::abs(fd), 1e-8);
  });

  // Estimators.
  run("hutchpp_low_rank_exact", 1e-9, true, [&] {
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 10; ++i) {
      Matrix w = gaussian_matrix(200, 10, sd(15) + i, kSweep);
      auto o = dense_wrap(w * w.transpose(), true);
      const double t = w.squaredNorm();
      worst = std::max(worst, std::abs(hutchpp_trace(o, ProbeConfig{16, 4, sd(15) + i}) - t) / t);
    }
    return worst;
  });
  run("hutchpp_psd500_within_2pct", 18.0, false, [&] {
    Matrix m = random_psd(500, 500, sd(16));
    auto op = dense_wrap(m, true);
    const double exact = m.trace();
    int ok = 0;
    for (std::uint64_t i = 0; i < 20; ++i)
      ok += std::abs(hutchpp_trace(op, ProbeConfig{32, 32, sd(16) + i}) - exact) / exact <= 0.02;
    return static_cast<double>(ok);
  });
  run("partial_average_dense", 1e-10, true, [&] {
    double worst = 0.0;
    const std::vector<Index> ext{2, 3, 4};
    Matrix g = gaussian_matrix(24, 24, sd(17), kSweep);
    auto s = DomainShape::state(2, 3, 4);
    auto op = dense_wrap(g * g.transpose(), s, s, true);
    for (const std::vector<bool>& tr : {std::vector<bool>{false, false, true}, {true, true, false}, {true, false, true}}) {
      std::set<std::size_t> axes;
      for (std::size_t a = 0; a < tr.size(); ++a)
        if (tr[a]) axes.insert(a);
      worst = std::max(worst, rel(materialize(partial_average(op, axes)), oracle::partial_average(g * g.transpose(), ext, tr)));
    }
    return worst;
  });
  run("topk_vs_dense", 1e-6, true, [&] {
    Matrix q = orthonormal_columns(gaussian_matrix(300, 300, sd(18), kSweep));
    Vector lam(300);
    for (Index i = 0; i < 300; ++i) lam(i) = std::pow(0.8, static_cast<double>(i));
    Matrix m = q * lam.asDiagonal() * q.transpose();
    auto r = topk_eigs(dense_wrap(m, true), 6, ProbeConfig{64, 64, sd(18)});
    auto d = dense_spectrum(dense_wrap(m, true), 300);
    double worst = 0.0;
    for (int i = 0; i < 6; ++i)
      worst = std::max(worst, std::abs(r.summary.eigenvalues[i] - d.summary.eigenvalues[i]) / d.summary.eigenvalues[i]);
    return worst;
  });
  run("reduced_views_vs_partial_average", 1e-10, true, [&] {
    auto m = gru(sd(19), 2, 5);
    auto s = m.forward(random_batch(2, 6, 2, sd(19) + 1));
    auto ntk = global_ntk(m, s).ntk;
    auto v = reduced_views(m, s, 7);
    return std::max(rel(v.temporal, materialize(temporal_view(ntk))), rel(v.spatial, materialize(spatial_view(ntk))));
  });

  // Task-level oracles.
  run("ntfp_fixed_point_residual", 1e-10, true, [&] {
    Rng rng = make_rng(sd(20), kInit);
    auto pts = coordinate_points(64, 5, 2.0);
    Matrix W = ntfp_weights(64, pts, 1.0, rng);
    double worst = 0.0;
    for (const auto& h : pts) worst = std::max(worst, (W * h.array().tanh().matrix() - h).norm());
    return worst;
  });
  run("fourier_rank_monotone_violations", 0.0, true, [&] {
    RowMatrix x = gaussian_matrix(200, 1, sd(21), kTask);
    Index prev = 0, bad = 0;
    for (Index f = 1; f <= 8; ++f) {
      const Index r = numerical_rank(fourier_embed(x, f));
      bad += r < prev;
      prev = r;
    }
    return static_cast<double>(bad);
  });
  run("kfp_large_damping_cosine", 1.0 - 1e-6, false, [&] {
    Matrix g = gaussian_matrix(6, 4, sd(22), kSweep);
    KfpState k(1e6);
    Matrix step = k.precondition("W", g);
    return step.cwiseProduct(g).sum() / (step.norm() * g.norm());
  });
  run("student_teacher_monotone_violations", 0.0, true, [&] {
    StudentTeacherConfig c;
    c.n_in = 4, c.n_h = 8, c.n_t = 10, c.n_x = 8, c.seed = sd(23);
    auto st = student_teacher(c);
    st.student.params["rec"] = st.teacher.params["rec"] + 0.05 * gaussian_matrix(8, 8, sd(23) + 1, kInit);
    TrainConfig tc;
    tc.lr = 0.02;
    tc.iterations = 50;
    auto log = train(st.student, st.batch, tc);
    Index bad = 0;
    for (std::size_t i = 1; i < log.loss.size(); ++i) bad += log.loss[i] >= log.loss[i - 1];
    return static_cast<double>(bad);
  });
  return rep;
}

}  // namespace gsntk

#endif  // GSNTK_EXP_VERIFY_HPP
