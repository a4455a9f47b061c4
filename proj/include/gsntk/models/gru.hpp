#ifndef GSNTK_MODELS_GRU_HPP
#define GSNTK_MODELS_GRU_HPP

// Bias-free GRU with gate blocks stacked as (r, z, l):
//   q = W h_prev, p = W_in x
//   r = sig(p_r + q_r), z = sig(p_z + q_z), l = tanh(p_l + r * q_l)
//   h = (1 - z) * l + z * h_prev

#include "common.hpp"

namespace gsntk {

struct GruState {
  Index n_x = 0, n_t = 0, n_h = 0;
  // Site-major caches, column j * n_t + t.
  Matrix h, h_prev, r, z, l;  // n_h x k
  Matrix q, p;                // 3 n_h x k
  Matrix x;                   // n_in x k

  Index k() const { return n_x * n_t; }
  Index dim() const { return k() * n_h; }
  Vector flat() const { return Eigen::Map<const Vector>(h.data(), h.size()); }
  RowMatrix states() const { return h.transpose(); }
};

class Gru {
 public:
  using State = GruState;
  static constexpr bool kRecurrent = true;
  inline static const std::vector<std::string> kDynamics{"rec", "in"};

  Gru(Index n_in, Index n_h, Index n_out) : n_in_(n_in), n_h_(n_h), n_out_(n_out) {
    params.add("rec", Matrix::Zero(3 * n_h, n_h));
    params.add("in", Matrix::Zero(3 * n_h, n_in));
    params.add("out", Matrix::Zero(n_out, n_h));
  }

  /// Xavier-normal per gate block; `gain` scales the hidden-to-hidden blocks.
  static Gru xavier(Index n_in, Index n_h, Index n_out, double gain, Rng& rng) {
    Gru m(n_in, n_h, n_out);
    for (Index g = 0; g < 3; ++g) {
      m.params["rec"].middleRows(g * n_h, n_h) = xavier_normal(n_h, n_h, gain, rng);
      m.params["in"].middleRows(g * n_h, n_h) = xavier_normal(n_h, n_in, 1.0, rng);
    }
    m.params["out"] = xavier_normal(n_out, n_h, 1.0, rng);
    return m;
  }

  Index n_in() const { return n_in_; }
  Index n_h() const { return n_h_; }
  Index n_out() const { return n_out_; }
  Index num_params() const { return params.flat_size(kDynamics); }

  State forward(const TaskBatch& batch, const Matrix* h0 = nullptr) const {
    if (batch.n_in() != n_in_) throw ShapeError("Gru::forward: input width mismatch");
    const Index n = n_h_, k = batch.k();
    State s;
    s.n_x = batch.n_x;
    s.n_t = batch.n_t;
    s.n_h = n;
    s.x = batch.x.transpose();
    for (Matrix* m : {&s.h, &s.h_prev, &s.r, &s.z, &s.l}) m->resize(n, k);
    s.q.resize(3 * n, k);
    s.p.resize(3 * n, k);
    Matrix prev = h0 ? *h0 : Matrix::Zero(n, batch.n_x);
    if (prev.rows() != n || prev.cols() != batch.n_x) throw ShapeError("Gru::forward: h0 must be n_h x n_x");
    const auto& w = params["rec"];
    const auto& u = params["in"];
    for (Index t = 0; t < s.n_t; ++t) {
      auto cols = Eigen::seqN(t, s.n_x, s.n_t);
      Matrix q = w * prev;
      Matrix p = u * Matrix(s.x(Eigen::all, cols));
      Matrix r = (p.topRows(n) + q.topRows(n)).unaryExpr(&sigmoid);
      Matrix z = (p.middleRows(n, n) + q.middleRows(n, n)).unaryExpr(&sigmoid);
      Matrix l = (p.bottomRows(n).array() + r.array() * q.bottomRows(n).array()).tanh().matrix();
      Matrix h = ((1.0 - z.array()) * l.array() + z.array() * prev.array()).matrix();
      for (Index j = 0; j < s.n_x; ++j)
        if (!h.col(j).allFinite()) throw ForwardError("Gru::forward: non-finite state", j, t);
      s.h_prev(Eigen::all, cols) = prev;
      s.q(Eigen::all, cols) = q;
      s.p(Eigen::all, cols) = p;
      s.r(Eigen::all, cols) = r;
      s.z(Eigen::all, cols) = z;
      s.l(Eigen::all, cols) = l;
      s.h(Eigen::all, cols) = h;
      prev = std::move(h);
    }
    return s;
  }

  /// One update from explicit inputs, used by finite-difference checks.
  Vector step(const Vector& h_prev, const Vector& x) const {
    return phi_step(h_prev, params["rec"] * h_prev, params["in"] * x);
  }
  /// Site map: state update as a function of the weight-site products q, p.
  Vector phi_step(const Vector& h_prev, const Vector& q, const Vector& p) const {
    const Index n = n_h_;
    Vector r = (p.head(n) + q.head(n)).unaryExpr(&sigmoid);
    Vector z = (p.segment(n, n) + q.segment(n, n)).unaryExpr(&sigmoid);
    Vector l = (p.tail(n).array() + r.array() * q.tail(n).array()).tanh().matrix();
    return ((1.0 - z.array()) * l.array() + z.array() * h_prev.array()).matrix();
  }

  RowMatrix outputs(const State& s) const { return (params["out"] * s.h).transpose(); }

  DomainShape state_shape(const State& s) const { return DomainShape::state(s.n_x, s.n_t, n_h_); }

  // ---- local site map phi_step(q, p; h_prev) ----

  /// Elementwise caches for a set of sites, columns aligned with the perturbations.
  struct Local {
    Matrix h_prev, q_l, r, z, l;
  };

  Local local_all(const State& s) const { return {s.h_prev, s.q.bottomRows(n_h_), s.r, s.z, s.l}; }

  Local local_time(const State& s, Index t, Index reps) const {
    auto tc = [&](const Matrix& m) { return Matrix(time_columns(m, s.n_x, s.n_t, t).replicate(1, reps)); };
    return {tc(s.h_prev), tc(s.q.bottomRows(n_h_)), tc(s.r), tc(s.z), tc(s.l)};
  }

  Local local_site(const State& s, Index j, Index t) const {
    const Index c = site(s, j, t);
    return {s.h_prev.col(c), s.q.col(c).tail(n_h_), s.r.col(c), s.z.col(c), s.l.col(c)};
  }

  /// d h over (dq, dp); either may be empty (treated as zero). Excludes the z * dh_prev term.
  Matrix local_jvp(const Local& c, const Matrix& dq, const Matrix& dp) const {
    const Index n = n_h_;
    const Index N = dq.size() ? dq.cols() : dp.cols();
    Eigen::ArrayXXd pre_r = Eigen::ArrayXXd::Zero(n, N), pre_z = pre_r, dc = pre_r;
    if (dq.size()) {
      pre_r += dq.topRows(n).array();
      pre_z += dq.middleRows(n, n).array();
      dc += c.r.array() * dq.bottomRows(n).array();
    }
    if (dp.size()) {
      pre_r += dp.topRows(n).array();
      pre_z += dp.middleRows(n, n).array();
      dc += dp.bottomRows(n).array();
    }
    auto r = c.r.array(), z = c.z.array(), l = c.l.array();
    Eigen::ArrayXXd dr = r * (1.0 - r) * pre_r;
    Eigen::ArrayXXd dz = z * (1.0 - z) * pre_z;
    dc += dr * c.q_l.array();
    Eigen::ArrayXXd dl = (1.0 - l.square()) * dc;
    return (dz * (c.h_prev.array() - l) + (1.0 - z) * dl).matrix();
  }

  /// Adjoint of local_jvp: returns (g_q, g_p), each 3 n_h x N.
  std::pair<Matrix, Matrix> local_vjp(const Local& c, const Matrix& u) const {
    const Index n = n_h_, N = u.cols();
    auto r = c.r.array(), z = c.z.array(), l = c.l.array();
    Eigen::ArrayXXd uu = u.array();
    Eigen::ArrayXXd g_z = uu * (c.h_prev.array() - l);
    Eigen::ArrayXXd g_c = uu * (1.0 - z) * (1.0 - l.square());
    Eigen::ArrayXXd g_r = g_c * c.q_l.array();
    Eigen::ArrayXXd g_pre_r = g_r * r * (1.0 - r);
    Eigen::ArrayXXd g_pre_z = g_z * z * (1.0 - z);
    Matrix gq(3 * n, N), gp(3 * n, N);
    gq.topRows(n) = g_pre_r.matrix();
    gq.middleRows(n, n) = g_pre_z.matrix();
    gq.bottomRows(n) = (g_c * r).matrix();
    gp.topRows(n) = g_pre_r.matrix();
    gp.middleRows(n, n) = g_pre_z.matrix();
    gp.bottomRows(n) = g_c.matrix();
    return {gq, gp};
  }

  // ---- single-site derivatives ----

  Vector step_jvp_state(const State& s, Index j, Index t, const Vector& dh) const {
    auto c = local_site(s, j, t);
    return local_jvp(c, params["rec"] * dh, Matrix()).col(0) + c.z.col(0).cwiseProduct(dh);
  }
  Vector step_vjp_state(const State& s, Index j, Index t, const Vector& u) const {
    auto c = local_site(s, j, t);
    auto [gq, gp] = local_vjp(c, u);
    return params["rec"].transpose() * gq.col(0) + c.z.col(0).cwiseProduct(u);
  }
  Vector step_jvp_params(const State& s, Index j, Index t, const ParamDirection& dtheta) const {
    auto d = checked_direction(params, kDynamics, dtheta);
    const Index ci = site(s, j, t);
    Matrix dq = d.count("rec") ? Matrix(d["rec"] * s.h_prev.col(ci)) : Matrix();
    Matrix dp = d.count("in") ? Matrix(d["in"] * s.x.col(ci)) : Matrix();
    if (!dq.size() && !dp.size()) return Vector::Zero(n_h_);
    return local_jvp(local_site(s, j, t), dq, dp).col(0);
  }
  ParamDirection step_vjp_params(const State& s, Index j, Index t, const Vector& u) const {
    const Index ci = site(s, j, t);
    auto [gq, gp] = local_vjp(local_site(s, j, t), u);
    ParamDirection out;
    if (params.trainable("rec")) out["rec"] = gq * s.h_prev.col(ci).transpose();
    if (params.trainable("in")) out["in"] = gp * s.x.col(ci).transpose();
    return out;
  }

  // ---- batched derivatives ----

  Matrix state_jvp_slice(const State& s, Index t, const Matrix& dh) const {
    auto c = local_time(s, t, dh.cols() / s.n_x);
    return local_jvp(c, params["rec"] * dh, Matrix()) + c.z.cwiseProduct(dh);
  }
  Matrix state_vjp_slice(const State& s, Index t, const Matrix& u) const {
    auto c = local_time(s, t, u.cols() / s.n_x);
    auto [gq, gp] = local_vjp(c, u);
    return params["rec"].transpose() * gq + c.z.cwiseProduct(u);
  }

  Matrix jvp_params(const State& s, const Matrix& theta) const {
    if (theta.rows() != num_params()) throw ShapeError("Gru::jvp_params: expected " + std::to_string(num_params()));
    const Index n = n_h_;
    auto c = local_all(s);
    Matrix out(s.dim(), theta.cols());
    for (Index b = 0; b < theta.cols(); ++b) {
      Index o = 0;
      Matrix dq, dp;
      if (params.trainable("rec")) {
        dq = Eigen::Map<const Matrix>(theta.col(b).data() + o, 3 * n, n) * s.h_prev;
        o += 3 * n * n;
      }
      if (params.trainable("in")) dp = Eigen::Map<const Matrix>(theta.col(b).data() + o, 3 * n, n_in_) * s.x;
      as_sites(out, b, n) = local_jvp(c, dq, dp);
    }
    return out;
  }

  Matrix vjp_params(const State& s, const Matrix& u) const {
    if (u.rows() != s.dim()) throw ShapeError("Gru::vjp_params: expected state-sized input");
    const Index n = n_h_;
    auto c = local_all(s);
    Matrix out(num_params(), u.cols());
    for (Index b = 0; b < u.cols(); ++b) {
      auto [gq, gp] = local_vjp(c, as_sites(u, b, n));
      Index o = 0;
      if (params.trainable("rec")) {
        Eigen::Map<Matrix>(out.col(b).data() + o, 3 * n, n).noalias() = gq * s.h_prev.transpose();
        o += 3 * n * n;
      }
      if (params.trainable("in"))
        Eigen::Map<Matrix>(out.col(b).data() + o, 3 * n, n_in_).noalias() = gp * s.x.transpose();
    }
    return out;
  }

  // ---- weight sites ----
  // r multiplies only the hidden product inside the candidate gate, so the
  // hidden (q) and input (p) products enter phi_step differently. Each gets
  // its own channel of width 3 n_h; V = cat(H_-, X) across channels.

  WeightSites weight_sites(const State& s) const {
    WeightSites w;
    w.replication = 3 * n_h_;
    const Index m = (params.trainable("rec") ? n_h_ : 0) + (params.trainable("in") ? n_in_ : 0);
    w.V.resize(s.k(), m);
    Index o = 0;
    if (params.trainable("rec")) {
      w.V.middleCols(o, n_h_) = s.h_prev.transpose();
      w.family_slices["rec"] = {o, o + n_h_};
      w.channels.push_back({"q", 3 * n_h_, {"rec"}, {o, o + n_h_}});
      o += n_h_;
    }
    if (params.trainable("in")) {
      w.V.middleCols(o, n_in_) = s.x.transpose();
      w.family_slices["in"] = {o, o + n_in_};
      w.channels.push_back({"p", 3 * n_h_, {"in"}, {o, o + n_in_}});
    }
    return w;
  }

  Index num_channels() const { return (params.trainable("rec") ? 1 : 0) + (params.trainable("in") ? 1 : 0); }

  /// (channel, batch, time, site); the channel axis is dropped when only one family trains.
  DomainShape site_shape(const State& s) const {
    DomainShape bts{{Axis::batch, s.n_x}, {Axis::time, s.n_t}, {Axis::site, 3 * n_h_}};
    if (num_channels() == 1) return bts;
    return DomainShape{{Axis::flat, num_channels()}}.concat(bts);
  }

  /// G: per-channel site perturbations -> S. Channel blocks are laid out
  /// (batch, time, 3 n_h) in the order (q, p) of the trainable families.
  Matrix site_jvp(const State& s, const Matrix& dqp) const {
    const Index blk = s.k() * 3 * n_h_, nc = num_channels();
    if (nc == 0) throw Error("Gru::site_jvp: no trainable dynamics family");
    if (dqp.rows() != nc * blk) throw ShapeError("Gru::site_jvp: expected site-space input");
    const bool has_q = params.trainable("rec");
    const bool has_p = params.trainable("in");
    auto c = local_all(s);
    Matrix out(s.dim(), dqp.cols());
    for (Index b = 0; b < dqp.cols(); ++b) {
      Index o = 0;
      Matrix dq, dp;
      if (has_q) {
        dq = Eigen::Map<const Matrix>(dqp.col(b).data(), 3 * n_h_, s.k());
        o += blk;
      }
      if (has_p) dp = Eigen::Map<const Matrix>(dqp.col(b).data() + o, 3 * n_h_, s.k());
      as_sites(out, b, n_h_) = local_jvp(c, dq, dp);
    }
    return out;
  }

  Matrix site_vjp(const State& s, const Matrix& u) const {
    if (u.rows() != s.dim()) throw ShapeError("Gru::site_vjp: expected state-sized input");
    const Index blk = s.k() * 3 * n_h_, nc = num_channels();
    if (nc == 0) throw Error("Gru::site_vjp: no trainable dynamics family");
    auto c = local_all(s);
    Matrix out(nc * blk, u.cols());
    for (Index b = 0; b < u.cols(); ++b) {
      auto [gq, gp] = local_vjp(c, as_sites(u, b, n_h_));
      Index o = 0;
      if (params.trainable("rec")) {
        out.col(b).segment(o, blk) = Eigen::Map<const Vector>(gq.data(), blk);
        o += blk;
      }
      if (params.trainable("in")) out.col(b).segment(o, blk) = Eigen::Map<const Vector>(gp.data(), blk);
    }
    return out;
  }

  /// Single-site site map derivative: (dq, dp) each 3 n_h.
  Vector site_jvp(const State& s, Index j, Index t, const Vector& dq, const Vector& dp) const {
    return local_jvp(local_site(s, j, t), Matrix(dq), Matrix(dp)).col(0);
  }
  std::pair<Vector, Vector> site_vjp(const State& s, Index j, Index t, const Vector& u) const {
    auto [gq, gp] = local_vjp(local_site(s, j, t), Matrix(u));
    return {gq.col(0), gp.col(0)};
  }

  ParamSet params;

 private:
  static Index site(const State& s, Index j, Index t) {
    if (j < 0 || j >= s.n_x || t < 0 || t >= s.n_t) throw std::out_of_range("site index out of range");
    if (s.z.cols() != s.k()) throw Error("missing forward cache");
    return j * s.n_t + t;
  }

  Index n_in_, n_h_, n_out_;
};

}  // namespace gsntk

#endif  // GSNTK_MODELS_GRU_HPP
