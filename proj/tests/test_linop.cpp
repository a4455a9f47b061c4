#include <gsntk/linop.hpp>
#include <gsntk/random.hpp>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace gsntk;

namespace {

Matrix randm(Index r, Index c, std::uint64_t seed) { return gaussian_matrix(r, c, seed, 7); }

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

// Kronecker product by an explicit double loop.
Matrix kron_loop(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      for (Index p = 0; p < b.rows(); ++p)
        for (Index q = 0; q < b.cols(); ++q) k(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return k;
}

// Partial trace of a materialized operator over the axes in `traced`,
// divided by the traced extent, by explicit index enumeration.
Matrix dense_partial_average(const Matrix& m, const std::vector<Index>& ext, const std::vector<bool>& traced) {
  const auto na = ext.size();
  Index nk = 1, nt = 1;
  for (std::size_t a = 0; a < na; ++a) (traced[a] ? nt : nk) *= ext[a];
  Matrix out = Matrix::Zero(nk, nk);
  const Index full = m.rows();
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
  for (Index r = 0; r < full; ++r)
    for (Index c = 0; c < full; ++c) {
      auto ir = split(r), ic = split(c);
      bool same = true;
      for (std::size_t a = 0; a < na; ++a)
        if (traced[a] && ir[a] != ic[a]) same = false;
      if (same) out(kept_index(ir), kept_index(ic)) += m(r, c);
    }
  return out / static_cast<double>(nt);
}

void expect_adjoint_pairing(const LinOp& op, int pairs = 10, std::uint64_t seed = 1) {
  for (int i = 0; i < pairs; ++i) {
    Vector u = randm(op.cols(), 1, seed + 2 * i);
    Vector v = randm(op.rows(), 1, seed + 2 * i + 1);
    const double lhs = op.matvec(u).dot(v);
    const double rhs = u.dot(op.rmatvec(v));
    EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

}  // namespace

TEST(DomainShape, SizeAndCompatibility) {
  auto s = DomainShape::state(2, 3, 4);
  EXPECT_EQ(s.size(), 24);
  EXPECT_EQ(DomainShape().size(), 1);
  EXPECT_TRUE(compatible(s, DomainShape::state(2, 3, 4)));
  EXPECT_FALSE(compatible(s, DomainShape::flat(24)));
  EXPECT_FALSE(compatible(s, DomainShape::state(2, 4, 4)));
  EXPECT_THROW(DomainShape::flat(0), ShapeError);
  EXPECT_EQ(s.stride(0), 12);
  EXPECT_EQ(s.stride(1), 4);
  EXPECT_EQ(s.stride(2), 1);
}

TEST(Identity, ActsTrivially) {
  auto id = identity(3);
  Vector v(3);
  v << 1, 2, 3;
  EXPECT_EQ(id.matvec(v), v);
  EXPECT_EQ(id.rmatvec(v), v);
  EXPECT_TRUE(id.psd_hint());
  EXPECT_EQ(materialize(identity(4)), Matrix::Identity(4, 4));
  EXPECT_DOUBLE_EQ(materialize(identity(100)).trace(), 100.0);
  Matrix a = randm(5, 5, 3);
  EXPECT_EQ(materialize(compose(identity(5), dense_wrap(a))), a);
  EXPECT_EQ(materialize(adjoint(identity(5))), Matrix::Identity(5, 5));
}

TEST(DenseWrap, PermutationAndRoundTrip) {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  Vector v(2);
  v << 1, 0;
  Vector expected(2);
  expected << 0, 1;
  EXPECT_EQ(dense_wrap(m).matvec(v), expected);
  Matrix a = randm(4, 6, 5);
  EXPECT_EQ(materialize(dense_wrap(a)), a);
}

TEST(DenseWrap, RejectsNonFinite) {
  Matrix m = Matrix::Zero(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(dense_wrap(m), std::invalid_argument);
  m(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(dense_wrap(m), std::invalid_argument);
}

TEST(DenseWrap, GramIsPsdOnRandomVectors) {
  Matrix v = randm(8, 3, 11);
  auto op = dense_wrap(v * v.transpose(), true);
  EXPECT_TRUE(op.psd_hint());
  for (int i = 0; i < 100; ++i) {
    Vector u = randm(8, 1, 100 + i);
    EXPECT_GE(u.dot(op.matvec(u)), -1e-10 * u.squaredNorm());
  }
}

TEST(Compose, MatchesDenseProduct) {
  Matrix a = randm(5, 5, 1), b = randm(5, 5, 2);
  auto ab = compose(dense_wrap(a), dense_wrap(b));
  EXPECT_LE(rel(materialize(ab), a * b), 1e-14);
  expect_adjoint_pairing(ab);
  Matrix c = randm(5, 3, 9);
  auto abc = compose(dense_wrap(a), dense_wrap(b), dense_wrap(c));
  EXPECT_LE(rel(materialize(abc), a * b * c), 1e-14);
}

TEST(Compose, ShapeMismatchNamesBothShapes) {
  auto a = dense_wrap(Matrix::Identity(3, 3));
  auto b = dense_wrap(Matrix::Identity(4, 4));
  try {
    compose(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("flat 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("flat 3"), std::string::npos) << msg;
  }
}

TEST(Adjoint, TransposeAndInvolution) {
  Matrix a = randm(4, 7, 3);
  EXPECT_EQ(materialize(adjoint(dense_wrap(a))), a.transpose());
  EXPECT_EQ(materialize(adjoint(adjoint(dense_wrap(a)))), a);
}

TEST(SumScale, Homomorphism) {
  Matrix a = randm(6, 6, 21), b = randm(6, 6, 22);
  EXPECT_LE(rel(materialize(sum(dense_wrap(a), dense_wrap(b))), a + b), 1e-15);
  EXPECT_LE(rel(materialize(scale(-2.5, dense_wrap(a))), -2.5 * a), 1e-15);
  expect_adjoint_pairing(sum(dense_wrap(a), scale(3.0, dense_wrap(b))));
}

TEST(TensorProduct, ScalarTimesIdentity) {
  Matrix two(1, 1);
  two << 2;
  EXPECT_EQ(materialize(tensor_product(dense_wrap(two), identity(3))), 2.0 * Matrix::Identity(3, 3));
}

TEST(TensorProduct, MatchesKroneckerLoop) {
  Matrix a = randm(3, 3, 31), b = randm(2, 2, 32);
  auto t = tensor_product(dense_wrap(a), dense_wrap(b));
  EXPECT_LE(rel(materialize(t), kron_loop(a, b)), 1e-15);
  expect_adjoint_pairing(t);
  // rectangular factors
  Matrix c = randm(2, 4, 33), d = randm(3, 5, 34);
  auto t2 = tensor_product(dense_wrap(c), dense_wrap(d));
  EXPECT_LE(rel(materialize(t2), kron_loop(c, d)), 1e-15);
  EXPECT_LE(rel(materialize(adjoint(t2)), kron_loop(c, d).transpose()), 1e-15);
  expect_adjoint_pairing(t2);
}

TEST(TensorProduct, RankOneFactorization) {
  Matrix a = randm(3, 3, 41), b = randm(4, 4, 42);
  Vector u = randm(3, 1, 43), v = randm(4, 1, 44);
  Vector uv = kron_loop(u, v);
  Vector lhs = tensor_product(dense_wrap(a), dense_wrap(b)).matvec(uv);
  Vector rhs = kron_loop(a * u, b * v);
  EXPECT_LE((lhs - rhs).norm() / rhs.norm(), 1e-12);
}

TEST(TensorProduct, LikeVariant) {
  auto like = identity(DomainShape::state(2, 3, 4));
  auto t = tensor_product_like(dense_wrap(randm(6, 6, 1)), identity(4), like);
  EXPECT_EQ(t.domain(), like.domain());
  EXPECT_THROW(tensor_product_like(dense_wrap(randm(5, 5, 1)), identity(4), like), ShapeError);
}

TEST(PartialAverage, KroneckerIdentity) {
  Matrix a = randm(3, 3, 51), b = randm(4, 4, 52);
  auto t = reshape(tensor_product(dense_wrap(a), dense_wrap(b)),
                   DomainShape{{Axis::time, 3}, {Axis::feature, 4}},
                   DomainShape{{Axis::time, 3}, {Axis::feature, 4}});
  Matrix red = materialize(partial_average(t, {1}));
  EXPECT_LE(rel(red, a * (b.trace() / 4.0)), 1e-14);
  Matrix red0 = materialize(partial_average(t, {0}));
  EXPECT_LE(rel(red0, b * (a.trace() / 3.0)), 1e-14);
}

TEST(PartialAverage, IdentityReducesToIdentity) {
  auto s = DomainShape::state(2, 3, 5);
  auto red = partial_average(identity(s), {2});
  EXPECT_EQ(red.domain(), (DomainShape{{Axis::batch, 2}, {Axis::time, 3}}));
  EXPECT_LE(rel(materialize(red), Matrix::Identity(6, 6)), 1e-15);
}

TEST(PartialAverage, MatchesMaterializedPartialTrace) {
  auto s = DomainShape::state(2, 3, 2);
  Matrix g = randm(12, 12, 61);
  Matrix m = g * g.transpose();
  auto op = dense_wrap(m, s, s, true);
  const std::vector<Index> ext{2, 3, 2};
  EXPECT_LE((materialize(partial_average(op, {2})) - dense_partial_average(m, ext, {false, false, true})).norm(),
            1e-10);
  EXPECT_LE((materialize(partial_average(op, {0, 1})) - dense_partial_average(m, ext, {true, true, false})).norm(),
            1e-10);
  EXPECT_LE((materialize(partial_average(op, {1})) - dense_partial_average(m, ext, {false, true, false})).norm(),
            1e-10);
  expect_adjoint_pairing(partial_average(op, {0, 2}));
}

TEST(PartialAverage, PreservesPsd) {
  auto s = DomainShape::state(3, 2, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Matrix g = randm(18, 4, 70 + seed);
    auto op = dense_wrap(g * g.transpose(), s, s, true);
    for (std::set<std::size_t> axes : {std::set<std::size_t>{2}, {0, 1}, {0}, {1, 2}}) {
      auto red = partial_average(op, axes);
      EXPECT_TRUE(red.psd_hint());
      Matrix r = materialize(red);
      Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (r + r.transpose()));
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(PartialAverage, AllAxesGivesNormalizedTrace) {
  auto s = DomainShape::state(2, 2, 3);
  Matrix m = randm(12, 12, 81);
  auto red = partial_average(dense_wrap(m, s, s), {0, 1, 2});
  EXPECT_EQ(red.cols(), 1);
  EXPECT_NEAR(materialize(red)(0, 0), m.trace() / 12.0, 1e-14);
}

TEST(PartialAverage, RejectsNonSquare) {
  EXPECT_THROW(partial_average(dense_wrap(randm(3, 4, 1)), {0}), ShapeError);
}

TEST(Materialize, CapIsEnforced) {
  try {
    materialize(identity(5000));
    FAIL();
  } catch (const std::length_error& e) {
    EXPECT_NE(std::string(e.what()).find("4096"), std::string::npos);
  }
  EXPECT_NO_THROW(materialize(identity(5000), 5000));
}

TEST(Materialize, CompositionHomomorphism) {
  Matrix a = randm(4, 6, 91), b = randm(6, 3, 92);
  EXPECT_LE(rel(materialize(compose(dense_wrap(a), dense_wrap(b))),
                materialize(dense_wrap(a)) * materialize(dense_wrap(b))),
            1e-15);
}
