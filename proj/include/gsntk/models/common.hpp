#ifndef GSNTK_MODELS_COMMON_HPP
#define GSNTK_MODELS_COMMON_HPP

#include "../linop.hpp"
#include "../random.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gsntk {

/// Overflow or NaN during a forward pass; carries the first offending site.
class ForwardError : public Error {
 public:
  ForwardError(const std::string& what, Index batch, Index time)
      : Error(what + " at (batch " + std::to_string(batch) + ", t " + std::to_string(time) + ")"),
        batch(batch),
        time(time) {}
  Index batch;
  Index time;
};

class FrozenFamilyError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

enum class Phase { stimulus, memory, response, none };

/// Inputs and targets with rows indexed by site (j, t) -> j * n_t + t.
struct TaskBatch {
  Index n_x = 0;
  Index n_t = 0;
  RowMatrix x;  // k x n_in
  RowMatrix y;  // k x n_out, may be empty
  std::vector<Phase> phase;  // per timestep, may be empty

  Index k() const { return n_x * n_t; }
  Index n_in() const { return x.cols(); }

  static TaskBatch from_inputs(Index n_x, Index n_t, RowMatrix x) {
    if (x.rows() != n_x * n_t)
      throw ShapeError("TaskBatch: input has " + std::to_string(x.rows()) + " rows, expected n_x*n_t = " +
                       std::to_string(n_x * n_t));
    TaskBatch b;
    b.n_x = n_x;
    b.n_t = n_t;
    b.x = std::move(x);
    return b;
  }
};

struct ParamFamily {
  std::string name;
  Matrix value;
  bool trainable = true;
};

/// Ordered named weight matrices with a per-family trainable flag.
class ParamSet {
 public:
  void add(std::string name, Matrix value, bool trainable = true) {
    if (find(name)) throw std::invalid_argument("ParamSet: duplicate family " + name);
    fams_.push_back({std::move(name), std::move(value), trainable});
  }

  const Matrix& operator[](const std::string& name) const { return get(name).value; }
  Matrix& operator[](const std::string& name) { return get(name).value; }
  bool trainable(const std::string& name) const { return get(name).trainable; }
  void set_trainable(const std::string& name, bool on) { get(name).trainable = on; }
  bool has(const std::string& name) const { return find(name) != nullptr; }
  const std::vector<ParamFamily>& families() const { return fams_; }

  /// Number of trainable entries among `names`, in that order.
  Index flat_size(const std::vector<std::string>& names) const {
    Index n = 0;
    for (const auto& nm : names)
      if (trainable(nm)) n += (*this)[nm].size();
    return n;
  }

  Vector flatten(const std::vector<std::string>& names) const {
    Vector v(flat_size(names));
    Index o = 0;
    for (const auto& nm : names) {
      if (!trainable(nm)) continue;
      const auto& m = (*this)[nm];
      v.segment(o, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      o += m.size();
    }
    return v;
  }

  void unflatten(const std::vector<std::string>& names, const Vector& v) {
    if (v.size() != flat_size(names)) throw ShapeError("ParamSet::unflatten: size mismatch");
    Index o = 0;
    for (const auto& nm : names) {
      if (!trainable(nm)) continue;
      auto& m = (*this)[nm];
      Eigen::Map<Vector>(m.data(), m.size()) = v.segment(o, m.size());
      o += m.size();
    }
  }

  bool all_finite() const {
    for (const auto& f : fams_)
      if (!f.value.allFinite()) return false;
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.fams_.size() != b.fams_.size()) return false;
    for (std::size_t i = 0; i < a.fams_.size(); ++i) {
      const auto &x = a.fams_[i], &y = b.fams_[i];
      if (x.name != y.name || x.trainable != y.trainable || x.value.rows() != y.value.rows() ||
          x.value.cols() != y.value.cols() || x.value != y.value)
        return false;
    }
    return true;
  }

 private:
  const ParamFamily* find(const std::string& name) const {
    for (const auto& f : fams_)
      if (f.name == name) return &f;
    return nullptr;
  }
  const ParamFamily& get(const std::string& name) const {
    if (auto* f = find(name)) return *f;
    throw std::out_of_range("ParamSet: no family named " + name);
  }
  ParamFamily& get(const std::string& name) { return const_cast<ParamFamily&>(std::as_const(*this).get(name)); }

  std::vector<ParamFamily> fams_;
};

/// Per-family perturbation used by the single-site parameter derivatives.
using ParamDirection = std::map<std::string, Matrix>;

/// Rejects perturbations of frozen families and fills missing trainable ones with zeros.
inline ParamDirection checked_direction(const ParamSet& ps, const std::vector<std::string>& names,
                                        const ParamDirection& d) {
  ParamDirection out;
  for (const auto& [nm, m] : d) {
    bool known = false;
    for (const auto& n : names) known = known || n == nm;
    if (!known) throw std::invalid_argument("parameter direction names unknown family " + nm);
    const auto& ref = ps[nm];
    if (m.rows() != ref.rows() || m.cols() != ref.cols())
      throw ShapeError("parameter direction for " + nm + " has wrong shape");
    if (!ps.trainable(nm) && m.cwiseAbs().maxCoeff() > 0.0)
      throw FrozenFamilyError("parameter direction touches frozen family " + nm);
  }
  for (const auto& nm : names) {
    if (!ps.trainable(nm)) continue;
    auto it = d.find(nm);
    out[nm] = it == d.end() ? Matrix::Zero(ps[nm].rows(), ps[nm].cols()) : it->second;
  }
  return out;
}

/// Splits a flat trainable-parameter vector into per-family matrices.
inline ParamDirection direction_from_flat(const ParamSet& ps, const std::vector<std::string>& names, const Vector& v) {
  if (v.size() != ps.flat_size(names)) throw ShapeError("direction_from_flat: size mismatch");
  ParamDirection d;
  Index o = 0;
  for (const auto& nm : names) {
    if (!ps.trainable(nm)) continue;
    const auto& ref = ps[nm];
    d[nm] = Eigen::Map<const Matrix>(v.data() + o, ref.rows(), ref.cols());
    o += ref.size();
  }
  return d;
}

/// Xavier-normal, std = gain * sqrt(2 / (fan_in + fan_out)).
inline Matrix xavier_normal(Index fan_out, Index fan_in, double gain, Rng& rng) {
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return gaussian_matrix(fan_out, fan_in, rng, sd);
}

/// One group of weight-site columns that share a site Jacobian.
struct SiteChannel {
  std::string name;
  Index width = 0;                      // replication factor of this channel
  std::vector<std::string> families;    // trainable families feeding it
  std::pair<Index, Index> cols{0, 0};   // [begin, end) columns of V
};

/// V (k x m) and the bookkeeping needed for the Kronecker core.
struct WeightSites {
  Matrix V;
  Index replication = 0;
  std::map<std::string, std::pair<Index, Index>> family_slices;
  std::vector<SiteChannel> channels;

  Matrix channel_block(const SiteChannel& c) const { return V.middleCols(c.cols.first, c.cols.second - c.cols.first); }
  Matrix gram() const { return V * V.transpose(); }
};

// Time-slice access on a block of flattened state tensors (dim x B). The
// slice at time t is returned as n x (n_x * B) with column b * n_x + j.
inline Matrix gather_time(const Matrix& x, Index n_x, Index n_t, Index n, Index t) {
  const Index B = x.cols();
  Matrix out(n, n_x * B);
  for (Index b = 0; b < B; ++b)
    for (Index j = 0; j < n_x; ++j) out.col(b * n_x + j) = x.col(b).segment((j * n_t + t) * n, n);
  return out;
}

inline void scatter_time(Matrix& x, Index n_x, Index n_t, Index n, Index t, const Matrix& slice) {
  const Index B = x.cols();
  for (Index b = 0; b < B; ++b)
    for (Index j = 0; j < n_x; ++j) x.col(b).segment((j * n_t + t) * n, n) = slice.col(b * n_x + j);
}

/// Column-major n x k view of one flattened state tensor (column = site).
inline Eigen::Map<const Matrix> as_sites(const Matrix& block, Index b, Index n) {
  return {block.col(b).data(), n, block.rows() / n};
}
inline Eigen::Map<Matrix> as_sites(Matrix& block, Index b, Index n) {
  return {block.col(b).data(), n, block.rows() / n};
}

/// Columns of a site-major cache (n x k) at time t, one per batch element.
inline Matrix time_columns(const Matrix& cache, Index n_x, Index n_t, Index t) {
  return cache(Eigen::all, Eigen::seqN(t, n_x, n_t));
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace gsntk

#endif  // GSNTK_MODELS_COMMON_HPP
