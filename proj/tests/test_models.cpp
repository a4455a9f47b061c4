#include <gsntk/models/attention.hpp>
#include <gsntk/models/fd_check.hpp>
#include <gsntk/models/gru.hpp>
#include <gsntk/models/rnn.hpp>
#include <gsntk/models/serialize.hpp>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <sstream>

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

AttnMlp small_attn(std::uint64_t seed, Index n_in = 3) {
  Rng rng = make_rng(seed, kInit);
  return AttnMlp::xavier(AttnConfig{n_in, 4, 5, 2, 3}, 1.0, rng);
}

double inner(const ParamDirection& a, const ParamDirection& b) {
  double s = 0;
  for (const auto& [k, v] : a) s += v.cwiseProduct(b.at(k)).sum();
  return s;
}

// Straight-line RNN forward with scalar loops.
std::vector<double> rnn_oracle(const Matrix& w, const Matrix& u, const RowMatrix& x, Index n_x, Index n_t) {
  const Index n = w.rows(), ni = u.cols();
  std::vector<double> out(n_x * n_t * n, 0.0);
  for (Index j = 0; j < n_x; ++j) {
    std::vector<double> h(n, 0.0);
    for (Index t = 0; t < n_t; ++t) {
      std::vector<double> nh(n);
      for (Index i = 0; i < n; ++i) {
        double a = 0;
        for (Index m = 0; m < n; ++m) a += w(i, m) * h[m];
        for (Index m = 0; m < ni; ++m) a += u(i, m) * x(j * n_t + t, m);
        nh[i] = std::tanh(a);
      }
      h = nh;
      for (Index i = 0; i < n; ++i) out[(j * n_t + t) * n + i] = h[i];
    }
  }
  return out;
}

// Independent GRU backprop-through-time for L = Σ_{j,t} <c_j(t), h_j(t)>.
std::pair<Matrix, Matrix> gru_bptt_oracle(const Matrix& W, const Matrix& U, const RowMatrix& x, Index n_x, Index n_t,
                                          const RowMatrix& c) {
  const Index n = W.cols(), ni = U.cols();
  Matrix gW = Matrix::Zero(3 * n, n), gU = Matrix::Zero(3 * n, ni);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (Index j = 0; j < n_x; ++j) {
    std::vector<Vector> H(n_t + 1, Vector::Zero(n)), R(n_t), Z(n_t), L(n_t), QL(n_t), X(n_t);
    for (Index t = 0; t < n_t; ++t) {
      X[t] = x.row(j * n_t + t).transpose();
      Vector q = W * H[t], p = U * X[t];
      R[t] = Vector(n);
      Z[t] = Vector(n);
      L[t] = Vector(n);
      QL[t] = q.tail(n);
      for (Index i = 0; i < n; ++i) {
        R[t](i) = sig(q(i) + p(i));
        Z[t](i) = sig(q(n + i) + p(n + i));
        L[t](i) = std::tanh(p(2 * n + i) + R[t](i) * q(2 * n + i));
        H[t + 1](i) = (1 - Z[t](i)) * L[t](i) + Z[t](i) * H[t](i);
      }
    }
    Vector dh = Vector::Zero(n);
    for (Index t = n_t - 1; t >= 0; --t) {
      dh += c.row(j * n_t + t).transpose();
      Vector dq(3 * n), dp(3 * n), dprev(n);
      for (Index i = 0; i < n; ++i) {
        const double dz = dh(i) * (H[t](i) - L[t](i));
        const double dl = dh(i) * (1 - Z[t](i));
        const double dc = dl * (1 - L[t](i) * L[t](i));
        const double dr = dc * QL[t](i);
        const double dar = dr * R[t](i) * (1 - R[t](i));
        const double daz = dz * Z[t](i) * (1 - Z[t](i));
        dq(i) = dar;
        dp(i) = dar;
        dq(n + i) = daz;
        dp(n + i) = daz;
        dq(2 * n + i) = dc * R[t](i);
        dp(2 * n + i) = dc;
        dprev(i) = dh(i) * Z[t](i);
      }
      gW += dq * H[t].transpose();
      gU += dp * X[t].transpose();
      dh = dprev + W.transpose() * dq;
    }
  }
  return {gW, gU};
}

}  // namespace

TEST(RnnForward, NoRecurrenceIsPointwiseTanh) {
  Rnn m(3, 3, 1);
  m.params["in"] = Matrix::Identity(3, 3);
  auto b = random_batch(2, 4, 3, 1);
  auto s = m.forward(b);
  EXPECT_LE((s.states() - RowMatrix(b.x.array().tanh())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RnnForward, MatchesStraightLineOracle) {
  auto m = small_rnn(3);
  auto b = random_batch(3, 5, 2, 4);
  auto s = m.forward(b);
  auto ref = rnn_oracle(m.params["rec"], m.params["in"], b.x, 3, 5);
  Vector v = s.flat();
  for (Index i = 0; i < v.size(); ++i) EXPECT_NEAR(v(i), ref[i], 1e-14);
}

TEST(RnnForward, RerunIsBitIdentical) {
  auto m = small_rnn(3);
  auto b = random_batch(3, 5, 2, 4);
  EXPECT_EQ(m.forward(b).h, m.forward(b).h);
}

TEST(RnnForward, OverflowReportsFirstSite) {
  Rnn m(1, 1, 1, Nonlinearity::identity);
  m.params["rec"](0, 0) = 1e300;
  m.params["in"](0, 0) = 1.0;
  RowMatrix x = RowMatrix::Zero(2 * 4, 1);
  x(1 * 4 + 0, 0) = 1.0;
  try {
    m.forward(TaskBatch::from_inputs(2, 4, x));
    FAIL();
  } catch (const ForwardError& e) {
    EXPECT_EQ(e.batch, 1);
    EXPECT_EQ(e.time, 2);
  }
}

TEST(GruForward, ZeroWeightsStayAtZero) {
  Gru m(2, 3, 1);
  auto s = m.forward(random_batch(2, 6, 2, 5));
  EXPECT_EQ(s.h.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE((s.z.array() == 0.5).all());
  Matrix h0 = Matrix::Ones(3, 2);
  auto s2 = m.forward(random_batch(2, 3, 2, 5), &h0);
  EXPECT_NEAR(s2.h(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s2.h(0, 1), 0.25, 1e-15);
}

TEST(GruForward, StaysInGatingEnvelope) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = small_gru(seed, 3, 6, 3.0);
    auto b = random_batch(4, 30, 3, seed, 3.0);
    Matrix h0 = gaussian_matrix(6, 4, seed, 1, 2.0);
    auto s = m.forward(b, &h0);
    for (Index c = 0; c < s.k(); ++c) {
      const double prev = s.h_prev.col(c).cwiseAbs().maxCoeff();
      EXPECT_LE(s.h.col(c).cwiseAbs().maxCoeff(), std::max(prev, 1.0) + 1e-15);
    }
  }
}

TEST(FdCheck, Rnn) {
  auto rep = fd_check(small_rnn(1), random_batch(3, 5, 2, 2));
  EXPECT_LE(rep.max("state_jvp"), 1e-6);
  EXPECT_LE(rep.max("param_jvp"), 1e-6);
  EXPECT_LE(rep.max("site_jvp"), 1e-6);
}

TEST(FdCheck, LinearModelIsExact) {
  // Differences of a linear map carry no truncation error, so a wide step keeps round-off out of the way.
  auto rep = fd_check(small_rnn(1, 2, 4, 0.8, Nonlinearity::identity), random_batch(3, 5, 2, 2), 1e-2);
  EXPECT_LE(rep.max(), 1e-10);
}

TEST(FdCheck, Gru) {
  auto rep = fd_check(small_gru(2, 3, 6), random_batch(3, 6, 3, 3));
  EXPECT_LE(rep.max("state_jvp"), 1e-6);
  EXPECT_LE(rep.max("param_jvp"), 1e-6);
  EXPECT_LE(rep.max("site_jvp"), 1e-6);
}

TEST(FdCheck, AttentionIncludingSoftmax) {
  auto m = small_attn(4);
  m.params.set_trainable("W3", true);
  m.params.set_trainable("b1", true);
  auto rep = fd_check_attention(m, random_batch(2, 5, 3, 5));
  for (const auto& [k, v] : rep.per_site) EXPECT_LE(rep.max(k), 1e-6) << k;
  EXPECT_GT(rep.per_site.count("param_jvp:Q"), 0u);
  EXPECT_GT(rep.per_site.count("param_jvp:K"), 0u);
}

TEST(StepDerivatives, ZeroDirections) {
  auto m = small_gru(1);
  auto s = m.forward(random_batch(2, 3, 2, 1));
  EXPECT_EQ(m.step_jvp_state(s, 1, 2, Vector::Zero(4)).norm(), 0.0);
  EXPECT_EQ(m.step_jvp_params(s, 1, 2, {}).norm(), 0.0);
  auto r = small_rnn(1);
  auto sr = r.forward(random_batch(2, 3, 2, 1));
  EXPECT_EQ(r.step_jvp_params(sr, 0, 0, {}).norm(), 0.0);
}

TEST(StepDerivatives, RnnStateJvpFormula) {
  auto m = small_rnn(5);
  auto s = m.forward(random_batch(2, 4, 2, 6));
  Vector dh = gaussian_matrix(4, 1, 1, 2);
  Vector expect = (1.0 - s.h.col(1 * 4 + 2).array().square()).matrix().cwiseProduct(m.params["rec"] * dh);
  EXPECT_LE((m.step_jvp_state(s, 1, 2, dh) - expect).norm(), 1e-15);
  Vector dq = gaussian_matrix(4, 1, 1, 3);
  EXPECT_LE((m.site_jvp(s, 1, 2, dq) - s.d.col(6).cwiseProduct(dq)).norm(), 1e-15);
}

TEST(StepDerivatives, FrozenFamilyRejected) {
  auto m = small_rnn(5);
  m.params.set_trainable("in", false);
  auto s = m.forward(random_batch(2, 4, 2, 6));
  ParamDirection d{{"in", Matrix::Ones(4, 2)}};
  EXPECT_THROW(m.step_jvp_params(s, 0, 0, d), FrozenFamilyError);
  ParamDirection zero{{"in", Matrix::Zero(4, 2)}};
  EXPECT_NO_THROW(m.step_jvp_params(s, 0, 0, zero));
}

template <class M>
void check_pairings(const M& m, const TaskBatch& b, std::uint64_t seed) {
  auto s = m.forward(b);
  const Index n = m.n_h();
  Rng rng = make_rng(seed, kProbeVectors);
  for (Index j = 0; j < s.n_x; ++j)
    for (Index t = 0; t < s.n_t; ++t) {
      Vector u = gaussian_matrix(n, 1, rng), v = gaussian_matrix(n, 1, rng);
      const double a = m.step_jvp_state(s, j, t, u).dot(v), bb = u.dot(m.step_vjp_state(s, j, t, v));
      EXPECT_NEAR(a, bb, 1e-12 * std::max(1.0, std::abs(a)));
      auto d = detail::random_direction(m.params, M::kDynamics, rng);
      const double c = m.step_jvp_params(s, j, t, d).dot(v), e = inner(d, m.step_vjp_params(s, j, t, v));
      EXPECT_NEAR(c, e, 1e-12 * std::max(1.0, std::abs(c)));
    }
  // batched against single-site
  Matrix dh = gaussian_matrix(n, s.n_x * 2, rng);
  for (Index t = 0; t < s.n_t; ++t) {
    Matrix jv = m.state_jvp_slice(s, t, dh), vj = m.state_vjp_slice(s, t, dh);
    for (Index c = 0; c < dh.cols(); ++c) {
      const Index j = c % s.n_x;
      EXPECT_LE((jv.col(c) - m.step_jvp_state(s, j, t, dh.col(c))).norm(), 1e-13);
      EXPECT_LE((vj.col(c) - m.step_vjp_state(s, j, t, dh.col(c))).norm(), 1e-13);
    }
  }
  Matrix th = gaussian_matrix(m.num_params(), 3, rng), uu = gaussian_matrix(s.dim(), 3, rng);
  const double lhs = (m.jvp_params(s, th).transpose() * uu).trace();
  const double rhs = (th.transpose() * m.vjp_params(s, uu)).trace();
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs));
  Matrix q = gaussian_matrix(m.site_shape(s).size(), 3, rng);
  const double sl = (m.site_jvp(s, q).transpose() * uu).trace();
  const double sr = (q.transpose() * m.site_vjp(s, uu)).trace();
  EXPECT_NEAR(sl, sr, 1e-12 * std::abs(sl));
}

TEST(AdjointPairing, Rnn) { check_pairings(small_rnn(7), random_batch(3, 5, 2, 8), 1); }
TEST(AdjointPairing, Gru) { check_pairings(small_gru(7), random_batch(3, 5, 2, 8), 2); }
TEST(AdjointPairing, GruInputOnly) {
  auto m = small_gru(7);
  m.params.set_trainable("rec", false);
  check_pairings(m, random_batch(3, 5, 2, 8), 3);
}

TEST(AdjointPairing, Attention) {
  auto m = small_attn(9);
  auto s = m.forward(random_batch(3, 6, 3, 10));
  Matrix th = gaussian_matrix(m.num_params(), 4, 1, 1), u = gaussian_matrix(s.dim(), 4, 1, 2);
  const double lhs = (m.jvp_params(s, th).transpose() * u).trace();
  const double rhs = (th.transpose() * m.vjp_params(s, u)).trace();
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs));
}

TEST(Gru, VjpParamsMatchesBpttOracle) {
  auto m = small_gru(11, 3, 5);
  auto b = random_batch(3, 7, 3, 12);
  auto s = m.forward(b);
  RowMatrix c = gaussian_matrix(s.k(), 5, 1, 3);
  // adjoint recursion with the model's own step VJPs, then per-site parameter VJPs
  Matrix adj(5, s.k());
  for (Index j = 0; j < s.n_x; ++j) {
    Vector carry = Vector::Zero(5);
    for (Index t = s.n_t - 1; t >= 0; --t) {
      Vector a = c.row(j * s.n_t + t).transpose() + carry;
      adj.col(j * s.n_t + t) = a;
      carry = m.step_vjp_state(s, j, t, a);
    }
  }
  Matrix gw = Matrix::Zero(15, 5), gu = Matrix::Zero(15, 3);
  for (Index j = 0; j < s.n_x; ++j)
    for (Index t = 0; t < s.n_t; ++t) {
      auto g = m.step_vjp_params(s, j, t, adj.col(j * s.n_t + t));
      gw += g["rec"];
      gu += g["in"];
    }
  auto [ow, ou] = gru_bptt_oracle(m.params["rec"], m.params["in"], b.x, 3, 7, c);
  EXPECT_LE((gw - ow).norm() / ow.norm(), 1e-10);
  EXPECT_LE((gu - ou).norm() / ou.norm(), 1e-10);
}

TEST(Attention, SoftmaxRowsSumToOne) {
  auto m = small_attn(1);
  auto s = m.forward(random_batch(3, 7, 3, 2, 5.0));
  for (const auto& p : s.p)
    for (Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
}

TEST(Attention, SiteJacobiansUnsupported) {
  auto m = small_attn(1);
  auto s = m.forward(random_batch(2, 3, 3, 2));
  EXPECT_THROW(m.site_jvp(s, Matrix::Zero(1, 1)), UnsupportedError);
}

TEST(WeightSites, RnnGramMatchesDoubleLoop) {
  auto m = small_rnn(2);
  auto b = random_batch(3, 4, 2, 3);
  auto s = m.forward(b);
  auto w = m.weight_sites(s);
  Matrix g = w.gram();
  for (Index j = 0; j < 3; ++j)
    for (Index t = 0; t < 4; ++t)
      for (Index jj = 0; jj < 3; ++jj)
        for (Index tt = 0; tt < 4; ++tt) {
          const Vector hp1 = t > 0 ? Vector(s.h.col(j * 4 + t - 1)) : Vector::Zero(4);
          const Vector hp2 = tt > 0 ? Vector(s.h.col(jj * 4 + tt - 1)) : Vector::Zero(4);
          const double expect = hp1.dot(hp2) + b.x.row(j * 4 + t).dot(b.x.row(jj * 4 + tt));
          EXPECT_NEAR(g(j * 4 + t, jj * 4 + tt), expect, 1e-14);
        }
  EXPECT_EQ(w.replication, 4);
}

TEST(WeightSites, DeadNetwork) {
  auto m = small_rnn(2);
  m.params.set_trainable("in", false);
  auto s = m.forward(TaskBatch::from_inputs(2, 3, RowMatrix::Zero(6, 2)));
  EXPECT_EQ(m.weight_sites(s).gram().cwiseAbs().maxCoeff(), 0.0);
}

TEST(WeightSites, FreezingShrinksGram) {
  auto m = small_gru(3);
  auto b = random_batch(3, 4, 2, 3);
  auto full = m.weight_sites(m.forward(b));
  m.params.set_trainable("in", false);
  auto frozen = m.weight_sites(m.forward(b));
  EXPECT_EQ(full.V.cols() - frozen.V.cols(), 2);
  EXPECT_EQ(frozen.V, full.V.leftCols(4));
  Eigen::SelfAdjointEigenSolver<Matrix> es(full.gram() - frozen.gram());
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  EXPECT_EQ(full.replication, 12);
}

TEST(WeightSites, AttentionColumnCount) {
  AttnConfig c{3, 4, 5, 1, 3};
  Rng rng = make_rng(1, kInit);
  auto m = AttnMlp::xavier(c, 1.0, rng);
  auto w = m.weight_sites(m.forward(random_batch(2, 4, 3, 1)));
  EXPECT_EQ(w.V.cols(), 3 * c.n_in + c.n_attn + (c.layers - 1) * c.n_mlp);
}

TEST(Serialize, RoundTripIsBitExact) {
  auto m = small_gru(3);
  m.params.set_trainable("in", false);
  m.params["rec"](0, 0) = 1.0 / 3.0;
  m.params["rec"](1, 0) = -0.0;
  m.params["rec"](2, 0) = 5e-324;
  std::stringstream ss;
  write_params(ss, m.params);
  auto back = read_params(ss);
  EXPECT_TRUE(back == m.params);
  EXPECT_FALSE(back.trainable("in"));
  EXPECT_TRUE(std::signbit(back["rec"](1, 0)));
}

TEST(Serialize, RejectsGarbage) {
  std::stringstream ss("not-a-container 1");
  EXPECT_THROW(read_params(ss), std::runtime_error);
  std::stringstream trunc("gsntk-arrays 1\n1\nW 2 2 1\n0x1p+0 0x1p+0\n");
  EXPECT_THROW(read_params(trunc), std::runtime_error);
}
