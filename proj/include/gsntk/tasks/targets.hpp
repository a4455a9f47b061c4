#ifndef GSNTK_TASKS_TARGETS_HPP
#define GSNTK_TASKS_TARGETS_HPP

// Temporal target modes: left singular vectors of the target reshaped k x n_out.

#include "../linop.hpp"

#include <Eigen/SVD>

namespace gsntk {

struct TargetModes {
  Matrix U;       // k x r, orthonormal columns
  Vector sigma;   // singular values, descending
  Matrix V;       // n_out x r
};

/// Modes with singular value above rel_tol * σ₁.
inline TargetModes target_modes(const RowMatrix& y, double rel_tol = 1e-10) {
  if (y.size() == 0 || y.norm() == 0.0) throw std::invalid_argument("target_modes: target is zero");
  if (!y.allFinite()) throw std::invalid_argument("target_modes: target has non-finite entries");
  Eigen::BDCSVD<Matrix> svd(Matrix(y), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Index r = 0;
  while (r < s.size() && s(r) > rel_tol * s(0)) ++r;
  TargetModes m{svd.matrixU().leftCols(r), s.head(r), svd.matrixV().leftCols(r)};
  // Sign convention: the largest-magnitude entry of each mode is positive.
  for (Index i = 0; i < r; ++i) {
    Index arg;
    m.U.col(i).cwiseAbs().maxCoeff(&arg);
    if (m.U(arg, i) < 0) {
      m.U.col(i) *= -1.0;
      m.V.col(i) *= -1.0;
    }
  }
  return m;
}

/// ⟨u_mᵀ Y, u_mᵀ Y*⟩ / ‖u_mᵀ Y*‖²: how much of target mode m the outputs carry.
inline double mode_alignment(const RowMatrix& outputs, const RowMatrix& target, const Vector& mode) {
  if (outputs.rows() != target.rows() || outputs.cols() != target.cols())
    throw ShapeError("mode_alignment: outputs and target differ in shape");
  const Vector py = outputs.transpose() * mode, pt = target.transpose() * mode;
  const double d = pt.squaredNorm();
  if (d == 0.0) throw std::domain_error("mode_alignment: target has no energy in this mode");
  return py.dot(pt) / d;
}

}  // namespace gsntk

#endif  // GSNTK_TASKS_TARGETS_HPP
