#ifndef GSNTK_LINOP_HPP
#define GSNTK_LINOP_HPP

// Matrix-free linear operators over labeled tensor domains.
//
// A tensor is stored flattened, row-major over its axes: for a domain
// (batch n_x, time n_t, feature n) the entry (j, t, f) lives at
// (j * n_t + t) * n + f. Operators act on column blocks, one flattened
// tensor per column, so that composite operators can push whole probe
// blocks through BLAS-3 kernels.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gsntk {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Axis { batch, time, feature, site, flat };

inline std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::batch: return "batch";
    case Axis::time: return "time";
    case Axis::feature: return "feature";
    case Axis::site: return "site";
    case Axis::flat: return "flat";
  }
  return "?";
}

struct AxisExtent {
  Axis label = Axis::flat;
  Index extent = 1;
  friend bool operator==(const AxisExtent&, const AxisExtent&) = default;
};

/// Ordered list of labeled axes. An empty list is the scalar domain (size 1).
class DomainShape {
 public:
  DomainShape() = default;
  DomainShape(std::initializer_list<AxisExtent> axes) : DomainShape(std::vector<AxisExtent>(axes)) {}
  explicit DomainShape(std::vector<AxisExtent> axes) : axes_(std::move(axes)) {
    for (const auto& a : axes_)
      if (a.extent < 1) throw ShapeError("DomainShape: axis extent must be >= 1, got " + std::to_string(a.extent));
  }

  static DomainShape flat(Index n) { return DomainShape{{Axis::flat, n}}; }
  static DomainShape state(Index n_x, Index n_t, Index n) {
    return DomainShape{{Axis::batch, n_x}, {Axis::time, n_t}, {Axis::feature, n}};
  }

  Index size() const {
    Index s = 1;
    for (const auto& a : axes_) s *= a.extent;
    return s;
  }
  std::size_t rank() const { return axes_.size(); }
  const std::vector<AxisExtent>& axes() const { return axes_; }
  const AxisExtent& axis(std::size_t i) const { return axes_.at(i); }

  /// Flat-index stride of axis i.
  Index stride(std::size_t i) const {
    Index s = 1;
    for (std::size_t a = i + 1; a < axes_.size(); ++a) s *= axes_[a].extent;
    return s;
  }

  DomainShape concat(const DomainShape& other) const {
    auto axes = axes_;
    axes.insert(axes.end(), other.axes_.begin(), other.axes_.end());
    return DomainShape(std::move(axes));
  }

  DomainShape keep(const std::vector<std::size_t>& which) const {
    std::vector<AxisExtent> axes;
    for (auto i : which) axes.push_back(axes_.at(i));
    return DomainShape(std::move(axes));
  }

  std::string to_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < axes_.size(); ++i) {
      if (i) os << ", ";
      os << axis_name(axes_[i].label) << ' ' << axes_[i].extent;
    }
    os << ')';
    return os.str();
  }

  friend bool operator==(const DomainShape&, const DomainShape&) = default;

 private:
  std::vector<AxisExtent> axes_;
};

/// Shapes compose iff their axis label sequences and flattened sizes agree.
inline bool compatible(const DomainShape& a, const DomainShape& b) {
  if (a.size() != b.size() || a.rank() != b.rank()) return false;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (a.axis(i).label != b.axis(i).label) return false;
  return true;
}

/// Immutable handle to a matrix-free operator. Copies share the same closures.
class LinOp {
 public:
  using BlockFn = std::function<Matrix(const Matrix&)>;

  LinOp(DomainShape domain, DomainShape codomain, BlockFn forward, BlockFn adjoint, bool psd = false)
      : impl_(std::make_shared<const Impl>(
            Impl{std::move(domain), std::move(codomain), std::move(forward), std::move(adjoint), psd})) {}

  const DomainShape& domain() const { return impl_->domain; }
  const DomainShape& codomain() const { return impl_->codomain; }
  Index rows() const { return impl_->codomain.size(); }
  Index cols() const { return impl_->domain.size(); }
  bool psd_hint() const { return impl_->psd; }
  bool square() const { return impl_->domain == impl_->codomain; }

  Matrix apply(const Matrix& block) const {
    if (block.rows() != cols())
      throw ShapeError("apply: expected " + std::to_string(cols()) + " rows for domain " +
                       domain().to_string() + ", got " + std::to_string(block.rows()));
    return impl_->forward(block);
  }
  Matrix apply_adjoint(const Matrix& block) const {
    if (block.rows() != rows())
      throw ShapeError("apply_adjoint: expected " + std::to_string(rows()) + " rows for codomain " +
                       codomain().to_string() + ", got " + std::to_string(block.rows()));
    return impl_->adjoint(block);
  }
  Vector matvec(const Vector& v) const { return apply(Matrix(v)).col(0); }
  Vector rmatvec(const Vector& v) const { return apply_adjoint(Matrix(v)).col(0); }

  const BlockFn& forward_fn() const { return impl_->forward; }
  const BlockFn& adjoint_fn() const { return impl_->adjoint; }

 private:
  struct Impl {
    DomainShape domain;
    DomainShape codomain;
    BlockFn forward;
    BlockFn adjoint;
    bool psd;
  };
  std::shared_ptr<const Impl> impl_;
};

inline LinOp with_psd(const LinOp& op, bool psd = true) {
  return LinOp(op.domain(), op.codomain(), op.forward_fn(), op.adjoint_fn(), psd);
}

/// Same action, relabeled domain/codomain of equal flattened size.
inline LinOp reshape(const LinOp& op, DomainShape domain, DomainShape codomain) {
  if (domain.size() != op.domain().size() || codomain.size() != op.codomain().size())
    throw ShapeError("reshape: " + op.domain().to_string() + " -> " + op.codomain().to_string() +
                     " cannot be viewed as " + domain.to_string() + " -> " + codomain.to_string());
  return LinOp(std::move(domain), std::move(codomain), op.forward_fn(), op.adjoint_fn(), op.psd_hint());
}

inline LinOp identity(const DomainShape& shape) {
  auto id = [](const Matrix& x) { return x; };
  return LinOp(shape, shape, id, id, true);
}
inline LinOp identity(Index n) { return identity(DomainShape::flat(n)); }

inline LinOp dense_wrap(Matrix m, DomainShape domain, DomainShape codomain, bool psd = false) {
  if (!m.allFinite()) throw std::invalid_argument("dense_wrap: matrix has non-finite entries");
  if (m.rows() != codomain.size() || m.cols() != domain.size())
    throw ShapeError("dense_wrap: matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     " but shapes are " + domain.to_string() + " -> " + codomain.to_string());
  auto mat = std::make_shared<const Matrix>(std::move(m));
  return LinOp(
      std::move(domain), std::move(codomain), [mat](const Matrix& x) -> Matrix { return (*mat) * x; },
      [mat](const Matrix& y) -> Matrix { return mat->transpose() * y; }, psd);
}

inline LinOp dense_wrap(Matrix m, bool psd = false) {
  auto dom = DomainShape::flat(m.cols());
  auto cod = DomainShape::flat(m.rows());
  return dense_wrap(std::move(m), dom, cod, psd);
}

inline LinOp compose(const LinOp& a, const LinOp& b) {
  if (!compatible(a.domain(), b.codomain()))
    throw ShapeError("compose: codomain " + b.codomain().to_string() + " of right operand does not match domain " +
                     a.domain().to_string() + " of left operand");
  return LinOp(
      b.domain(), a.codomain(), [a, b](const Matrix& x) { return a.apply(b.apply(x)); },
      [a, b](const Matrix& y) { return b.apply_adjoint(a.apply_adjoint(y)); });
}

template <class... Rest>
LinOp compose(const LinOp& a, const LinOp& b, const LinOp& c, const Rest&... rest) {
  return compose(a, compose(b, c, rest...));
}

inline LinOp adjoint(const LinOp& a) {
  return LinOp(a.codomain(), a.domain(), a.adjoint_fn(), a.forward_fn(), a.psd_hint());
}

inline LinOp sum(const LinOp& a, const LinOp& b) {
  if (!compatible(a.domain(), b.domain()) || !compatible(a.codomain(), b.codomain()))
    throw ShapeError("sum: operands map " + a.domain().to_string() + " -> " + a.codomain().to_string() + " and " +
                     b.domain().to_string() + " -> " + b.codomain().to_string());
  return LinOp(
      a.domain(), a.codomain(), [a, b](const Matrix& x) -> Matrix { return a.apply(x) + b.apply(x); },
      [a, b](const Matrix& y) -> Matrix { return a.apply_adjoint(y) + b.apply_adjoint(y); },
      a.psd_hint() && b.psd_hint());
}

inline LinOp scale(double alpha, const LinOp& a) {
  return LinOp(
      a.domain(), a.codomain(), [a, alpha](const Matrix& x) -> Matrix { return alpha * a.apply(x); },
      [a, alpha](const Matrix& y) -> Matrix { return alpha * a.apply_adjoint(y); }, a.psd_hint() && alpha >= 0.0);
}

namespace detail {

// (A ⊗ B) on a row-major (a_in x b_in) tensor X is A X Bᵀ. Each column of
// `x` is one such tensor; all columns are pushed through A and then B in
// single blocks.
inline Matrix kron_apply(const LinOp::BlockFn& fa, const LinOp::BlockFn& fb, Index a_in, Index b_in, Index a_out,
                         Index b_out, const Matrix& x) {
  const Index nb = x.cols();
  // Column-major view of a row-major (a_in x b_in) tensor is its transpose.
  Matrix xa(a_in, b_in * nb);
  for (Index c = 0; c < nb; ++c)
    xa.middleCols(c * b_in, b_in) = Eigen::Map<const Matrix>(x.col(c).data(), b_in, a_in).transpose();
  Matrix ya = fa(xa);  // a_out x (b_in * nb)
  Matrix xb(b_in, a_out * nb);
  for (Index c = 0; c < nb; ++c) xb.middleCols(c * a_out, a_out) = ya.middleCols(c * b_in, b_in).transpose();
  Matrix yb = fb(xb);  // b_out x (a_out * nb), column-major == row-major (a_out x b_out)
  Matrix out(a_out * b_out, nb);
  for (Index c = 0; c < nb; ++c)
    out.col(c) = Eigen::Map<const Vector>(yb.middleCols(c * a_out, a_out).eval().data(), a_out * b_out);
  return out;
}

}  // namespace detail

/// A ⊗ B acting on the concatenated tensor domain.
inline LinOp tensor_product(const LinOp& a, const LinOp& b) {
  const Index ai = a.cols(), ao = a.rows(), bi = b.cols(), bo = b.rows();
  auto fa = a.forward_fn(), fb = b.forward_fn(), ga = a.adjoint_fn(), gb = b.adjoint_fn();
  return LinOp(
      a.domain().concat(b.domain()), a.codomain().concat(b.codomain()),
      [=](const Matrix& x) { return detail::kron_apply(fa, fb, ai, bi, ao, bo, x); },
      [=](const Matrix& y) { return detail::kron_apply(ga, gb, ao, bo, ai, bi, y); },
      a.psd_hint() && b.psd_hint() && a.square() && b.square());
}

/// Tensor product reshaped onto the domain/codomain layout of `like`.
inline LinOp tensor_product_like(const LinOp& a, const LinOp& b, const LinOp& like) {
  auto t = tensor_product(a, b);
  if (t.domain().size() != like.domain().size() || t.codomain().size() != like.codomain().size())
    throw ShapeError("tensor_product_like: product maps " + t.domain().to_string() + " -> " +
                     t.codomain().to_string() + " but reference maps " + like.domain().to_string() + " -> " +
                     like.codomain().to_string());
  return reshape(t, like.domain(), like.codomain());
}

/// Block-diagonal operator on the concatenation of the blocks' flattened domains.
inline LinOp block_diagonal(const std::vector<LinOp>& blocks, DomainShape domain, DomainShape codomain) {
  Index din = 0, dout = 0;
  bool psd = true;
  for (const auto& b : blocks) {
    din += b.cols();
    dout += b.rows();
    psd = psd && b.psd_hint() && b.square();
  }
  if (blocks.empty() || din != domain.size() || dout != codomain.size())
    throw ShapeError("block_diagonal: blocks do not tile " + domain.to_string() + " -> " + codomain.to_string());
  auto run = [blocks](const Matrix& x, bool adj) {
    Index rows_out = 0;
    for (const auto& b : blocks) rows_out += adj ? b.cols() : b.rows();
    Matrix out(rows_out, x.cols());
    Index i = 0, o = 0;
    for (const auto& b : blocks) {
      const Index ni = adj ? b.rows() : b.cols(), no = adj ? b.cols() : b.rows();
      out.middleRows(o, no) = adj ? b.apply_adjoint(x.middleRows(i, ni)) : b.apply(x.middleRows(i, ni));
      i += ni;
      o += no;
    }
    return out;
  };
  return LinOp(
      std::move(domain), std::move(codomain), [run](const Matrix& x) { return run(x, false); },
      [run](const Matrix& y) { return run(y, true); }, psd);
}

namespace detail {

// Flat offsets of every multi-index over `axes` of `shape`, enumerated in
// row-major order of the selected axes.
inline std::vector<Index> axis_offsets(const DomainShape& shape, const std::vector<std::size_t>& axes) {
  std::vector<Index> offsets{0};
  for (auto ax : axes) {
    const Index ext = shape.axis(ax).extent, stride = shape.stride(ax);
    std::vector<Index> next;
    next.reserve(offsets.size() * static_cast<std::size_t>(ext));
    for (auto o : offsets)
      for (Index i = 0; i < ext; ++i) next.push_back(o + i * stride);
    offsets = std::move(next);
  }
  return offsets;
}

// reduced(x)_r = (1/N) Σ_τ [op(x ⊗ e_τ)]_(r, τ)
inline Matrix partial_average_apply(const LinOp::BlockFn& f, Index full, const std::vector<Index>& keep_off,
                                    const std::vector<Index>& trace_off, const Matrix& x) {
  const auto nk = static_cast<Index>(keep_off.size());
  const auto nt = static_cast<Index>(trace_off.size());
  // Keep each expanded block under ~64 MB.
  const Index budget = std::max<Index>(1, (Index{1} << 23) / std::max<Index>(1, full * nt));
  Matrix out = Matrix::Zero(nk, x.cols());
  for (Index c0 = 0; c0 < x.cols(); c0 += budget) {
    const Index nc = std::min(budget, x.cols() - c0);
    Matrix e = Matrix::Zero(full, nc * nt);
    for (Index c = 0; c < nc; ++c)
      for (Index tau = 0; tau < nt; ++tau)
        for (Index r = 0; r < nk; ++r) e(keep_off[r] + trace_off[tau], c * nt + tau) = x(r, c0 + c);
    Matrix y = f(e);
    for (Index c = 0; c < nc; ++c)
      for (Index tau = 0; tau < nt; ++tau)
        for (Index r = 0; r < nk; ++r) out(r, c0 + c) += y(keep_off[r] + trace_off[tau], c * nt + tau);
  }
  out /= static_cast<double>(nt);
  return out;
}

}  // namespace detail

/// Partial trace over `axes`, divided by the traced extent. Tracing every
/// axis leaves the scalar trace(op) / dim(op).
inline LinOp partial_average(const LinOp& op, const std::set<std::size_t>& axes) {
  if (!op.square())
    throw ShapeError("partial_average: operator must be square, got " + op.domain().to_string() + " -> " +
                     op.codomain().to_string());
  const auto& shape = op.domain();
  std::vector<std::size_t> keep, traced;
  for (std::size_t i = 0; i < shape.rank(); ++i) (axes.count(i) ? traced : keep).push_back(i);
  for (auto a : axes)
    if (a >= shape.rank())
      throw ShapeError("partial_average: axis " + std::to_string(a) + " out of range for " + shape.to_string());
  auto keep_off = detail::axis_offsets(shape, keep);
  auto trace_off = detail::axis_offsets(shape, traced);
  const Index full = shape.size();
  auto reduced = shape.keep(keep);
  auto f = op.forward_fn(), g = op.adjoint_fn();
  return LinOp(
      reduced, reduced,
      [=](const Matrix& x) { return detail::partial_average_apply(f, full, keep_off, trace_off, x); },
      [=](const Matrix& y) { return detail::partial_average_apply(g, full, keep_off, trace_off, y); },
      op.psd_hint());
}

inline constexpr Index kDefaultMaterializeCap = 4096;

/// Dense matrix whose column j is op(e_j).
inline Matrix materialize(const LinOp& op, Index cap = kDefaultMaterializeCap) {
  if (op.cols() > cap || op.rows() > cap)
    throw std::length_error("materialize: operator is " + std::to_string(op.rows()) + "x" +
                             std::to_string(op.cols()) + ", above the materialization cap of " +
                             std::to_string(cap));
  const Index n = op.cols();
  Matrix out(op.rows(), n);
  const Index chunk = 256;
  for (Index c0 = 0; c0 < n; c0 += chunk) {
    const Index nc = std::min(chunk, n - c0);
    Matrix e = Matrix::Zero(n, nc);
    for (Index c = 0; c < nc; ++c) e(c0 + c, c) = 1.0;
    out.middleCols(c0, nc) = op.apply(e);
  }
  return out;
}

}  // namespace gsntk

#endif  // GSNTK_LINOP_HPP
