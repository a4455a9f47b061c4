#ifndef GSNTK_RNLA_HPP
#define GSNTK_RNLA_HPP

// Randomized estimators over LinOp: Hutch++ trace, Frobenius norm, operator
// cosine, subspace-iteration eigensolver and effective-rank summaries.

#include "linop.hpp"
#include "random.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsntk {

struct ProbeConfig {
  Index sketch_size = 64;
  Index residual_probes = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (sketch_size < 1 || residual_probes < 1)
      throw std::invalid_argument("ProbeConfig: sketch_size and residual_probes must be >= 1");
  }
};

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      c_ += (sum_ - t) + x;
    else
      c_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

inline double compensated_dot(const double* a, const double* b, Index n) {
  CompensatedSum s;
  for (Index i = 0; i < n; ++i) s.add(a[i] * b[i]);
  return s.value();
}

inline double inner(const Matrix& a, const Matrix& b) {
  if (a.size() != b.size()) throw ShapeError("inner: size mismatch");
  return compensated_dot(a.data(), b.data(), a.size());
}

/// Orthonormal basis of the column span (Householder, full column count).
inline Matrix orthonormal_columns(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
}

/// Σ_c ⟨x_c, y_c⟩ with compensated accumulation.
inline double trace_of_pairing(const Matrix& x, const Matrix& y) { return inner(x, y); }

inline double hutchpp_trace(const LinOp& op, const ProbeConfig& cfg = {}) {
  cfg.validate();
  if (!op.square())
    throw ShapeError("hutchpp_trace: operator must be square, got " + op.domain().to_string() + " -> " +
                     op.codomain().to_string());
  const Index n = op.cols();
  const Index s = std::min(cfg.sketch_size, n);
  Matrix sketch = gaussian_matrix(n, s, cfg.seed, kSketch);
  Matrix q = orthonormal_columns(op.apply(sketch));
  const double t1 = trace_of_pairing(q, op.apply(q));
  if (s >= n) return t1;  // Q spans the whole space.
  Matrix g = rademacher_matrix(n, cfg.residual_probes, cfg.seed, kResidual);
  g -= q * (q.transpose() * g);
  const double t2 = trace_of_pairing(g, op.apply(g)) / static_cast<double>(cfg.residual_probes);
  return t1 + t2;
}

namespace detail {
inline LinOp gram_small_side(const LinOp& op) {
  return op.rows() <= op.cols() ? with_psd(compose(op, adjoint(op))) : with_psd(compose(adjoint(op), op));
}
}  // namespace detail

inline double frobenius_norm(const LinOp& op, const ProbeConfig& cfg = {}) {
  return std::sqrt(std::max(0.0, hutchpp_trace(detail::gram_small_side(op), cfg)));
}

/// tr(a b*) / (‖a‖_F ‖b‖_F), estimated with the same probes for all three traces.
inline double op_cosine(const LinOp& a, const LinOp& b, const ProbeConfig& cfg = {}) {
  if (!compatible(a.domain(), b.domain()) || !compatible(a.codomain(), b.codomain()))
    throw ShapeError("op_cosine: operands map " + a.domain().to_string() + " -> " + a.codomain().to_string() +
                     " and " + b.domain().to_string() + " -> " + b.codomain().to_string());
  const bool left = a.rows() <= a.cols();
  auto cross = [&](const LinOp& x, const LinOp& y) {
    return left ? compose(x, adjoint(y)) : compose(adjoint(y), x);
  };
  // Symmetrized cross term; its trace equals tr(a b*).
  auto ab = scale(0.5, sum(cross(a, b), cross(b, a)));
  const double na = std::sqrt(std::max(0.0, hutchpp_trace(cross(a, a), cfg)));
  const double nb = std::sqrt(std::max(0.0, hutchpp_trace(cross(b, b), cfg)));
  if (na == 0.0 || nb == 0.0) throw std::domain_error("op_cosine: operand has zero Frobenius norm");
  return std::clamp(hutchpp_trace(ab, cfg) / (na * nb), -1.0, 1.0);
}

struct SpectrumSummary {
  std::vector<double> eigenvalues;  // descending
  std::vector<double> cumulative_variance;
  double effective_rank_pr = 0.0;
  Index effective_rank_95 = 0;
};

struct EigResult {
  SpectrumSummary summary;
  Matrix eigenvectors;  // dim x k, orthonormal columns
  Index iterations = 0;
};

enum class RankMethod { participation_ratio, variance_95 };

inline double effective_rank(const std::vector<double>& eigs, RankMethod method) {
  CompensatedSum total, sq;
  for (double l : eigs) {
    if (l < 0.0) throw std::invalid_argument("effective_rank: negative eigenvalue " + std::to_string(l));
    total.add(l);
    sq.add(l * l);
  }
  if (total.value() == 0.0) return 0.0;
  if (method == RankMethod::participation_ratio) return total.value() * total.value() / sq.value();
  std::vector<double> sorted = eigs;
  std::sort(sorted.rbegin(), sorted.rend());
  CompensatedSum run;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    run.add(sorted[i]);
    if (run.value() >= 0.95 * total.value()) return static_cast<double>(i + 1);
  }
  return static_cast<double>(sorted.size());
}

/// Builds the summary from a spectrum; tiny negative round-off is clipped to 0.
inline SpectrumSummary summarize_spectrum(std::vector<double> eigs) {
  std::sort(eigs.rbegin(), eigs.rend());
  SpectrumSummary s;
  for (double& l : eigs) l = std::max(l, 0.0);
  s.eigenvalues = eigs;
  CompensatedSum total;
  for (double l : eigs) total.add(l);
  CompensatedSum run;
  for (double l : eigs) {
    run.add(l);
    s.cumulative_variance.push_back(total.value() > 0.0 ? std::min(1.0, run.value() / total.value()) : 0.0);
  }
  if (total.value() > 0.0 && !s.cumulative_variance.empty()) s.cumulative_variance.back() = 1.0;
  s.effective_rank_pr = effective_rank(eigs, RankMethod::participation_ratio);
  s.effective_rank_95 = static_cast<Index>(effective_rank(eigs, RankMethod::variance_95));
  return s;
}

class NotPsdError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

inline void check_psd_spectrum(const Eigen::VectorXd& vals, const char* where) {
  const double top = vals.cwiseAbs().maxCoeff();
  const double lo = vals.minCoeff();
  if (lo < -1e-8 * top)
    throw NotPsdError(std::string(where) + ": operator is not PSD (eigenvalue " + std::to_string(lo) +
                      " vs largest magnitude " + std::to_string(top) + ")");
}

/// Top-k eigenpairs of a symmetric PSD operator by subspace iteration with
/// Rayleigh-Ritz. The summary covers the k returned eigenvalues only.
inline EigResult topk_eigs(const LinOp& op, Index k, const ProbeConfig& cfg = {}, Index max_iter = 300,
                           double rel_tol = 1e-6) {
  if (!op.square()) throw ShapeError("topk_eigs: operator must be square, got " + op.domain().to_string());
  if (!op.psd_hint()) throw std::invalid_argument("topk_eigs: operator is not flagged PSD");
  const Index n = op.cols();
  if (k < 1 || k > n) throw std::invalid_argument("topk_eigs: k must be in [1, " + std::to_string(n) + "]");
  const Index b = std::min(n, 2 * k + 10);
  Matrix x = orthonormal_columns(gaussian_matrix(n, b, cfg.seed, kEigStart));
  for (Index it = 1; it <= max_iter; ++it) {
    Matrix y = op.apply(x);
    Matrix h = x.transpose() * y;
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    // descending order
    Eigen::VectorXd vals = es.eigenvalues().reverse();
    Matrix w = es.eigenvectors().rowwise().reverse();
    check_psd_spectrum(vals, "topk_eigs");
    Matrix v = x * w;
    Matrix av = y * w;
    const double lam1 = std::max(vals(0), 0.0);
    bool converged = true;
    for (Index i = 0; i < k && converged; ++i)
      if ((av.col(i) - vals(i) * v.col(i)).norm() > rel_tol * lam1) converged = false;
    if (converged || b == n) {
      EigResult r;
      std::vector<double> top(vals.data(), vals.data() + k);
      r.summary = summarize_spectrum(top);
      r.eigenvectors = v.leftCols(k);
      r.iterations = it;
      return r;
    }
    x = orthonormal_columns(av);
  }
  throw ConvergenceError("topk_eigs: no convergence within " + std::to_string(max_iter) + " iterations (k=" +
                         std::to_string(k) + ", dim=" + std::to_string(n) + ")");
}

struct DenseSpectrum {
  SpectrumSummary summary;
  Matrix eigenvectors;  // columns in descending eigenvalue order
};

/// Full spectrum of a small symmetric operator via materialization.
inline DenseSpectrum dense_spectrum(const LinOp& op, Index cap = kDefaultMaterializeCap) {
  if (!op.square()) throw ShapeError("dense_spectrum: operator must be square");
  Matrix m = materialize(op, cap);
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  Eigen::VectorXd vals = es.eigenvalues().reverse();
  if (op.psd_hint() && vals.size() > 0) check_psd_spectrum(vals, "dense_spectrum");
  DenseSpectrum d;
  d.summary = summarize_spectrum(std::vector<double>(vals.data(), vals.data() + vals.size()));
  d.eigenvectors = es.eigenvectors().rowwise().reverse();
  return d;
}

/// Numerical rank with threshold rel_tol * largest singular value.
inline Index numerical_rank(const Matrix& m, double rel_tol = 1e-8) {
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

}  // namespace gsntk

#endif  // GSNTK_RNLA_HPP
