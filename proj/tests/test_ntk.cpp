#include <gsntk/models/gru.hpp>
#include <gsntk/models/rnn.hpp>
#include <gsntk/models/attention.hpp>
#include <gsntk/ntk.hpp>
#include <gsntk/oracles.hpp>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace gsntk;

namespace {

TaskBatch random_batch(Index n_x, Index n_t, Index n_in, std::uint64_t seed, double sd = 1.0) {
  Rng rng = make_rng(seed, kTask);
  return TaskBatch::from_inputs(n_x, n_t, gaussian_matrix(n_x * n_t, n_in, rng, sd));
}

Rnn small_rnn(std::uint64_t seed, Index n_in = 2, Index n_h = 4, double gain = 1.2,
              Nonlinearity phi = Nonlinearity::tanh) {
  Rng rng = make_rng(seed, kInit);
  return Rnn::xavier(n_in, n_h, 1, gain, rng, phi);
}

Gru small_gru(std::uint64_t seed, Index n_in = 2, Index n_h = 4, double gain = 1.5) {
  Rng rng = make_rng(seed, kInit);
  return Gru::xavier(n_in, n_h, 2, gain, rng);
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

double min_eig(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (m + m.transpose())).eigenvalues().minCoeff();
}

Vector randv(Index n, std::uint64_t seed) { return gaussian_matrix(n, 1, seed, kProbeVectors); }

template <class M>
double lifted_vs_direct(const M& m, const TaskBatch& b) {
  auto s = m.forward(b);
  Matrix direct = materialize(global_ntk(m, s, NtkMode::direct).ntk);
  Matrix lifted = materialize(global_ntk(m, s, NtkMode::lifted).ntk);
  return rel(lifted, direct);
}

}  // namespace

// ---- propagator ----

TEST(Propagator, IdentityWithoutRecurrence) {
  auto m = small_rnn(1);
  m.params["rec"].setZero();
  auto s = m.forward(random_batch(2, 4, 2, 2));
  Matrix p = materialize(propagator(m, s));
  EXPECT_LE((p - Matrix::Identity(p.rows(), p.cols())).norm(), 1e-14);
}

TEST(Propagator, InvertsStateShift) {
  auto m = small_rnn(3, 2, 5);
  auto s = m.forward(random_batch(3, 6, 2, 4));
  Matrix p = materialize(propagator(m, s));
  Matrix L = oracle::state_shift_matrix(m, s);
  EXPECT_LE((p * L - Matrix::Identity(p.rows(), p.cols())).norm(), 1e-10);
}

TEST(Propagator, GruInvertsStateShift) {
  auto m = small_gru(5, 2, 3);
  auto s = m.forward(random_batch(2, 5, 2, 6));
  Matrix p = materialize(propagator(m, s));
  Matrix L = oracle::state_shift_matrix(m, s);
  EXPECT_LE((p * L - Matrix::Identity(p.rows(), p.cols())).norm(), 1e-10);
}

TEST(Propagator, Causal) {
  auto m = small_rnn(7);
  const Index n_x = 2, n_t = 6, n = 4;
  auto s = m.forward(random_batch(n_x, n_t, 2, 8));
  auto P = propagator(m, s);
  Vector q = Vector::Zero(n_x * n_t * n);
  for (Index j = 0; j < n_x; ++j) q.segment((j * n_t + 3) * n, n) = randv(n, 9 + j);
  Vector u = P.matvec(q);
  for (Index j = 0; j < n_x; ++j)
    for (Index t = 0; t < 3; ++t) EXPECT_EQ(u.segment((j * n_t + t) * n, n).norm(), 0.0);
  EXPECT_GT(u.segment((0 * n_t + 5) * n, n).norm(), 0.0);
}

TEST(Propagator, RejectsAttention) {
  Rng rng = make_rng(1, kInit);
  auto m = AttnMlp::xavier(AttnConfig{2, 4, 4, 1, 3}, 1.0, rng);
  auto s = m.forward(random_batch(2, 3, 2, 1));
  EXPECT_THROW(propagator(m, s), UnsupportedError);
  EXPECT_THROW(propagator_core(m, s), UnsupportedError);
  EXPECT_THROW(global_ntk(m, s, NtkMode::lifted), UnsupportedError);
}

// ---- K ----

TEST(ParamKernel, SingleScalarIsRankOne) {
  Rnn m(1, 1, 1);
  m.params["rec"](0, 0) = 0.5;
  m.params["in"](0, 0) = 0.8;
  m.params.set_trainable("rec", false);
  auto s = m.forward(random_batch(2, 3, 1, 3));
  ASSERT_EQ(m.num_params(), 1);
  Matrix K = materialize(param_kernel(m, s));
  Vector g = materialize(param_jacobian(m, s));
  EXPECT_LE(rel(K, g * g.transpose()), 1e-14);
  EXPECT_EQ(psd_rank(K), 1);
}

TEST(ParamKernel, MatchesImmediateJacobianGram) {
  auto m = small_rnn(11);
  auto s = m.forward(random_batch(3, 5, 2, 12));
  // Immediate Jacobian column by column from single-site step derivatives.
  const Index p = m.num_params(), n = m.n_h();
  Matrix J(s.dim(), p);
  for (Index i = 0; i < p; ++i) {
    Vector e = Vector::Zero(p);
    e(i) = 1.0;
    auto d = direction_from_flat(m.params, Rnn::kDynamics, e);
    for (Index j = 0; j < s.n_x; ++j)
      for (Index t = 0; t < s.n_t; ++t) J.block((j * s.n_t + t) * n, i, n, 1) = m.step_jvp_params(s, j, t, d);
  }
  EXPECT_LE(rel(materialize(param_kernel(m, s)), J * J.transpose()), 1e-12);
}

TEST(ParamKernel, FreezingShrinksInPsdOrder) {
  auto m = small_rnn(13);
  auto b = random_batch(3, 4, 2, 14);
  auto s = m.forward(b);
  Matrix full = materialize(param_kernel(m, s));
  m.params.set_trainable("in", false);
  Matrix part = materialize(param_kernel(m, s));
  EXPECT_GE(min_eig(full - part), -1e-10);
  EXPECT_GT((full - part).norm(), 1e-6);
}

TEST(ParamKernel, EmptyMaskRejected) {
  auto m = small_rnn(1);
  m.params.set_trainable("rec", false);
  m.params.set_trainable("in", false);
  auto s = m.forward(random_batch(2, 2, 2, 1));
  EXPECT_THROW(param_kernel(m, s), std::invalid_argument);
}

// ---- Kronecker core ----

TEST(KronCore, OneHotHasRankReplication) {
  WeightSites w;
  w.V = Matrix::Zero(6, 1);
  w.V(0, 0) = 1.0;
  w.replication = 3;
  w.channels.push_back({"pre", 3, {"rec"}, {0, 1}});
  Matrix c = materialize(kron_core(w, 2, 3));
  EXPECT_EQ(psd_rank(c), 3);
  EXPECT_EQ(c.rows(), 18);
}

TEST(KronCore, RankBoundedBySiteCount) {
  const Index k = 40, m = 5;
  WeightSites w;
  w.V = gaussian_matrix(k, m, 21, 1);
  w.replication = 1;
  w.channels.push_back({"pre", 1, {"rec"}, {0, m}});
  auto res = topk_eigs(kron_core(w, 4, 10), m + 1);
  const auto& ev = res.summary.eigenvalues;
  EXPECT_LE(ev[m], 1e-8 * ev[0]);
  Eigen::JacobiSVD<Matrix> svd(w.V);
  for (Index i = 0; i < m; ++i) EXPECT_NEAR(ev[i], svd.singularValues()(i) * svd.singularValues()(i), 1e-8 * ev[0]);
}

TEST(KronCore, GruReplication) {
  auto m = small_gru(3, 2, 5);
  auto s = m.forward(random_batch(2, 3, 2, 4));
  auto w = m.weight_sites(s);
  EXPECT_EQ(w.replication, 15);
  auto core = kron_core(w, s.n_x, s.n_t);
  EXPECT_EQ(core.rows(), 2 * s.k() * 15);
}

TEST(KronCore, RejectsNonFinite) {
  WeightSites w;
  w.V = Matrix::Ones(4, 1);
  w.V(2, 0) = std::nan("");
  w.channels.push_back({"pre", 1, {"rec"}, {0, 1}});
  EXPECT_THROW(kron_core(w, 2, 2), std::invalid_argument);
}

// ---- P_core ----

TEST(PropagatorCore, LinearNoRecurrenceIsIdentity) {
  auto m = small_rnn(5, 2, 3, 1.0, Nonlinearity::identity);
  m.params["rec"].setZero();
  auto s = m.forward(random_batch(2, 4, 2, 6));
  Matrix pc = materialize(propagator_core(m, s));
  EXPECT_LE((pc - Matrix::Identity(pc.rows(), pc.cols())).norm(), 1e-14);
}

TEST(PropagatorCore, AdjointPairing) {
  auto check = [](const LinOp& op, std::uint64_t seed) {
    for (int i = 0; i < 5; ++i) {
      Vector x = randv(op.cols(), seed + 2 * i), y = randv(op.rows(), seed + 2 * i + 1);
      const double lhs = y.dot(op.matvec(x)), rhs = op.rmatvec(y).dot(x);
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
    }
  };
  auto r = small_rnn(7);
  check(propagator_core(r, r.forward(random_batch(3, 5, 2, 8))), 100);
  auto g = small_gru(7);
  check(propagator_core(g, g.forward(random_batch(3, 5, 2, 8))), 200);
}

// ---- direct vs lifted assembly ----

TEST(LiftedAssembly, Rnn) { EXPECT_LE(lifted_vs_direct(small_rnn(31), random_batch(3, 5, 2, 32)), 1e-8); }

TEST(LiftedAssembly, Gru) { EXPECT_LE(lifted_vs_direct(small_gru(33), random_batch(3, 5, 2, 34)), 1e-8); }

TEST(LiftedAssembly, PartialMasks) {
  for (const char* frozen : {"rec", "in"}) {
    auto r = small_rnn(35);
    r.params.set_trainable(frozen, false);
    EXPECT_LE(lifted_vs_direct(r, random_batch(3, 4, 2, 36)), 1e-8) << "rnn, frozen " << frozen;
    auto g = small_gru(37);
    g.params.set_trainable(frozen, false);
    EXPECT_LE(lifted_vs_direct(g, random_batch(3, 4, 2, 38)), 1e-8) << "gru, frozen " << frozen;
  }
}

TEST(LiftedAssembly, NonzeroInitialState) {
  auto m = small_gru(39, 2, 3);
  auto b = random_batch(2, 4, 2, 40);
  Matrix h0 = gaussian_matrix(3, 2, 41, 1);
  auto s = m.forward(b, &h0);
  Matrix direct = materialize(global_ntk(m, s, NtkMode::direct).ntk);
  Matrix lifted = materialize(global_ntk(m, s, NtkMode::lifted).ntk);
  EXPECT_LE(rel(lifted, direct), 1e-8);
}

TEST(LiftedAssembly, ProbeEstimateAtLargerScale) {
  auto m = small_gru(43, 3, 12);
  auto s = m.forward(random_batch(3, 20, 3, 44));
  EXPECT_LE(verify_core(global_ntk(m, s, NtkMode::lifted).ntk, global_ntk(m, s, NtkMode::direct).ntk), 1e-6);
}

template <class M>
void brute_force_gram(const M& m, const TaskBatch& b) {
  auto s = m.forward(b);
  Matrix J = oracle::total_param_jacobian(m, s);
  Matrix fd = oracle::fd_param_jacobian(m, b, 1e-6);
  EXPECT_LE(rel(J, fd), 1e-6);
  auto ntk = global_ntk(m, s).ntk;
  for (int i = 0; i < 3; ++i) {
    Vector e = randv(s.dim(), 50 + i);
    Vector want = J * (J.transpose() * e);
    EXPECT_LE(rel(ntk.matvec(e), want), 1e-8);
  }
}

TEST(LiftedAssembly, BruteForceJacobianGramRnn) { brute_force_gram(small_rnn(45), random_batch(3, 5, 2, 46)); }
TEST(LiftedAssembly, BruteForceJacobianGramGru) { brute_force_gram(small_gru(47), random_batch(2, 4, 2, 48)); }

TEST(GlobalNtk, DeadNetworkIsZero) {
  auto m = small_rnn(49);
  m.params.set_trainable("in", false);
  TaskBatch b = TaskBatch::from_inputs(2, 3, RowMatrix::Zero(6, 2));
  auto s = m.forward(b);
  auto bundle = global_ntk(m, s);
  Vector e = randv(s.dim(), 1);
  EXPECT_EQ(bundle.ntk.matvec(e).norm(), 0.0);
  EXPECT_EQ(bundle.sites.V.norm(), 0.0);
}

TEST(GlobalNtk, PsdOnRandomProbes) {
  auto m = small_gru(51, 2, 6);
  auto s = m.forward(random_batch(3, 8, 2, 52));
  auto ntk = global_ntk(m, s).ntk;
  EXPECT_TRUE(ntk.psd_hint());
  for (int i = 0; i < 10; ++i) {
    Vector u = randv(s.dim(), 60 + i);
    EXPECT_GE(u.dot(ntk.matvec(u)), -1e-10 * u.squaredNorm());
  }
}

TEST(GlobalNtk, AttentionIsParameterGram) {
  Rng rng = make_rng(2, kInit);
  auto m = AttnMlp::xavier(AttnConfig{2, 3, 3, 1, 3}, 1.0, rng);
  auto s = m.forward(random_batch(2, 3, 2, 3));
  auto bundle = global_ntk(m, s);
  Matrix J = materialize(param_jacobian(m, s));
  EXPECT_LE(rel(materialize(bundle.ntk), J * J.transpose()), 1e-12);
  EXPECT_FALSE(bundle.P_core.has_value());
}

// ---- reduced views ----

TEST(Views, KroneckerWithIdentity) {
  const Index k = 6, n = 3;
  Matrix g = gaussian_matrix(k, k, 71, 1);
  Matrix A = g * g.transpose();
  const DomainShape bt{{Axis::batch, 2}, {Axis::time, 3}};
  auto ntk = tensor_product(dense_wrap(A, bt, bt, true), identity(DomainShape{{Axis::feature, n}}));
  EXPECT_LE(rel(materialize(temporal_view(ntk)), A), 1e-14);
  Matrix sp = materialize(spatial_view(ntk));
  EXPECT_LE(rel(sp, (A.trace() / k) * Matrix::Identity(n, n)), 1e-14);
}

TEST(Views, GruMatchesDensePartialTrace) {
  auto m = small_gru(73, 2, 4);
  auto s = m.forward(random_batch(2, 4, 2, 74));
  auto ntk = global_ntk(m, s).ntk;
  Matrix full = materialize(ntk);
  std::vector<Index> ext{2, 4, 4};
  Matrix t = materialize(temporal_view(ntk)), sp = materialize(spatial_view(ntk));
  EXPECT_LE(rel(t, oracle::partial_average(full, ext, {false, false, true})), 1e-12);
  EXPECT_LE(rel(sp, oracle::partial_average(full, ext, {true, true, false})), 1e-12);
  EXPECT_GE(min_eig(t), -1e-10 * t.norm());
  EXPECT_GE(min_eig(sp), -1e-10 * sp.norm());
}

TEST(Views, FactoredMatchesDensePartialTrace) {
  auto check = [](const auto& m, const TaskBatch& b) {
    auto s = m.forward(b);
    auto ntk = global_ntk(m, s).ntk;
    Matrix full = materialize(ntk);
    const auto& d = ntk.domain();
    std::vector<Index> ext{d.axis(0).extent, d.axis(1).extent, d.axis(2).extent};
    for (Index chunk : {1, 7, 1000}) {
      auto v = reduced_views(m, s, chunk);
      EXPECT_LE(rel(v.temporal, oracle::partial_average(full, ext, {false, false, true})), 1e-12);
      EXPECT_LE(rel(v.spatial, oracle::partial_average(full, ext, {true, true, false})), 1e-12);
    }
  };
  check(small_rnn(91), random_batch(2, 4, 2, 92));
  check(small_gru(93), random_batch(3, 3, 2, 94));
  Rng rng = make_rng(95, kInit);
  check(AttnMlp::xavier(AttnConfig{2, 3, 3, 1, 2}, 1.0, rng), random_batch(2, 4, 2, 96));
  EXPECT_THROW(factor_views(identity(5)), ShapeError);
}

TEST(Views, CosineInvariantUnderKroneckerWithIdentity) {
  const Index k = 8, n = 4;
  const DomainShape bt{{Axis::batch, 2}, {Axis::time, 4}};
  Matrix ga = gaussian_matrix(k, 3, 81, 1), gb = gaussian_matrix(k, 5, 82, 1);
  Matrix A = ga * ga.transpose(), B = gb * gb.transpose();
  auto I = identity(DomainShape{{Axis::feature, n}});
  auto a = tensor_product(dense_wrap(A, bt, bt, true), I), b = tensor_product(dense_wrap(B, bt, bt, true), I);
  const double want = A.cwiseProduct(B).sum() / (A.norm() * B.norm());
  ProbeConfig cfg;
  cfg.sketch_size = 64;
  EXPECT_NEAR(op_cosine(a, b, cfg), want, 1e-10);
  EXPECT_NEAR(op_cosine(dense_wrap(A, bt, bt, true), dense_wrap(B, bt, bt, true), cfg), want, 1e-10);
}

// ---- adjoint states and the core filter identity ----

TEST(AdjointState, IdentityPropagator) {
  auto I = identity(DomainShape::state(2, 3, 2));
  Vector e = randv(12, 1);
  EXPECT_EQ(adjoint_state(I, e), e);
}

TEST(AdjointState, AntiCausal) {
  auto m = small_rnn(91);
  const Index n_t = 5, n = 4;
  auto s = m.forward(random_batch(2, n_t, 2, 92));
  Vector e = Vector::Zero(s.dim());
  for (Index j = 0; j < 2; ++j) e.segment(j * n_t * n, n) = randv(n, 93 + j);
  Vector adj = adjoint_state(propagator(m, s), e);
  for (Index j = 0; j < 2; ++j)
    for (Index t = 1; t < n_t; ++t) EXPECT_EQ(adj.segment((j * n_t + t) * n, n).norm(), 0.0);
}

TEST(AdjointState, MatchesDenseTranspose) {
  auto m = small_rnn(95);
  auto s = m.forward(random_batch(3, 5, 2, 96));
  auto P = propagator(m, s);
  Vector e = randv(s.dim(), 97);
  EXPECT_LE(rel(adjoint_state(P, e), materialize(P).transpose() * e), 1e-13);
}

TEST(AdjointState, RejectsBadInput) {
  auto I = identity(DomainShape::state(2, 3, 2));
  EXPECT_THROW(adjoint_state(I, Vector::Zero(5)), ShapeError);
  Vector e = Vector::Zero(12);
  e(3) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adjoint_state(I, e), std::invalid_argument);
}

template <class M>
void adjoint_filter_identity(const M& m, const TaskBatch& b, std::uint64_t seed) {
  auto s = m.forward(b);
  auto bundle = global_ntk(m, s);
  for (int i = 0; i < 20; ++i) {
    Vector e = randv(s.dim(), seed + i);
    const double lhs = quadratic_form(bundle.ntk, e);
    const double rhs = core_filter_norm(bundle.sites, bundle.P_core->rmatvec(e));
    EXPECT_NEAR(lhs, rhs, 1e-8 * std::abs(lhs));
  }
  Vector z = Vector::Zero(s.dim());
  EXPECT_EQ(quadratic_form(bundle.ntk, z), 0.0);
  EXPECT_EQ(core_filter_norm(bundle.sites, bundle.P_core->rmatvec(z)), 0.0);
}

TEST(AdjointFilter, Rnn) { adjoint_filter_identity(small_rnn(101), random_batch(3, 5, 2, 102), 1000); }
TEST(AdjointFilter, Gru) { adjoint_filter_identity(small_gru(103), random_batch(3, 5, 2, 104), 2000); }
TEST(AdjointFilter, GruRecurrentOnly) {
  auto m = small_gru(105);
  m.params.set_trainable("in", false);
  adjoint_filter_identity(m, random_batch(2, 6, 2, 106), 3000);
}

TEST(AdjointFilter, DeadCore) {
  auto m = small_rnn(107);
  m.params.set_trainable("in", false);
  auto s = m.forward(TaskBatch::from_inputs(2, 3, RowMatrix::Zero(6, 2)));
  auto bundle = global_ntk(m, s);
  Vector e = randv(s.dim(), 1);
  EXPECT_EQ(quadratic_form(bundle.ntk, e), 0.0);
  EXPECT_EQ(core_filter_norm(bundle.sites, bundle.P_core->rmatvec(e)), 0.0);
}

// ---- verify_core and alignment ----

TEST(VerifyCore, KnownRatios) {
  Matrix g = gaussian_matrix(30, 30, 111, 1);
  auto A = dense_wrap(g * g.transpose(), true);
  EXPECT_LE(verify_core(A, A), 1e-10);
  EXPECT_NEAR(verify_core(A, scale(2.0, A)), 0.5, 1e-10);
  EXPECT_THROW(verify_core(A, scale(0.0, A)), std::domain_error);
}

TEST(Alignment, RankOneAndOrthogonal) {
  Vector u = randv(10, 121).normalized();
  Matrix uu = u * u.transpose();
  EXPECT_NEAR(ntk_target_alignment(dense_wrap(uu, true), u), 1.0, 1e-12);
  EXPECT_NEAR(ntk_target_alignment(uu, u), 1.0, 1e-12);
  Vector w = randv(10, 122);
  w -= u * u.dot(w);
  w.normalize();
  EXPECT_NEAR(ntk_target_alignment(dense_wrap(uu, true), w), 0.0, 1e-12);
  EXPECT_THROW(ntk_target_alignment(uu, 2.0 * u), std::invalid_argument);
  EXPECT_THROW(ntk_target_alignment(Matrix::Zero(10, 10), u), std::domain_error);
}

// ---- space-time rank bottleneck ----

TEST(RankBottleneck, RankOneTemporalFactor) {
  const DomainShape bt{{Axis::batch, 2}, {Axis::time, 5}};
  Vector u = randv(10, 131);
  auto ntk = tensor_product(dense_wrap(u * u.transpose(), bt, bt, true), identity(DomainShape{{Axis::feature, 4}}));
  for (int i = 0; i < 10; ++i) {
    auto r = delta_h_rank_check(ntk, randv(40, 140 + i));
    EXPECT_LE(r.rank_dh, 1);
    EXPECT_TRUE(r.holds());
  }
}

TEST(RankBottleneck, ZeroError) {
  auto m = small_rnn(151);
  auto s = m.forward(random_batch(2, 3, 2, 152));
  auto r = delta_h_rank_check(global_ntk(m, s).ntk, Vector::Zero(s.dim()));
  EXPECT_EQ(r.rank_dh, 0);
  EXPECT_TRUE(r.holds());
}

TEST(RankBottleneck, HundredRandomInstances) {
  int held = 0;
  for (int i = 0; i < 100; ++i) {
    Rng rng = make_rng(160 + i, kSweep);
    std::uniform_int_distribution<int> dn(1, 5), dt(1, 6), dx(1, 3), dm(0, 2);
    const Index n_h = dn(rng), n_t = dt(rng), n_x = dx(rng), n_in = dx(rng);
    const int mask = dm(rng);
    Vector e;
    RankCheck r;
    if (i % 2 == 0) {
      auto m = small_rnn(1000 + i, n_in, n_h, 0.5 + 0.02 * i);
      if (mask == 1) m.params.set_trainable("rec", false);
      if (mask == 2) m.params.set_trainable("in", false);
      auto s = m.forward(random_batch(n_x, n_t, n_in, 2000 + i));
      r = delta_h_rank_check(global_ntk(m, s).ntk, randv(s.dim(), 3000 + i));
    } else {
      auto m = small_gru(1000 + i, n_in, n_h, 0.5 + 0.02 * i);
      if (mask == 1) m.params.set_trainable("rec", false);
      if (mask == 2) m.params.set_trainable("in", false);
      auto s = m.forward(random_batch(n_x, n_t, n_in, 2000 + i));
      r = delta_h_rank_check(global_ntk(m, s).ntk, randv(s.dim(), 3000 + i));
    }
    held += r.holds();
    EXPECT_TRUE(r.holds()) << "instance " << i << ": rank dh " << r.rank_dh << ", temporal " << r.rank_temporal
                           << ", spatial " << r.rank_spatial;
  }
  EXPECT_EQ(held, 100);
}
