#ifndef GSNTK_MODELS_RNN_HPP
#define GSNTK_MODELS_RNN_HPP

// Vanilla RNN, h_j(t) = phi(W_rec h_j(t-1) + W_in x_j(t)), h_j(-1) = h0_j.

#include "common.hpp"

namespace gsntk {

enum class Nonlinearity { tanh, identity };

struct RnnState {
  Index n_x = 0, n_t = 0, n_h = 0;
  // Site-major caches: column j * n_t + t.
  Matrix h;       // n_h x k
  Matrix h_prev;  // n_h x k
  Matrix a;       // pre-activation
  Matrix d;       // phi'(a)
  Matrix x;       // n_in x k

  Index k() const { return n_x * n_t; }
  Index dim() const { return k() * n_h; }
  /// States as a flat tensor (batch, time, feature).
  Vector flat() const { return Eigen::Map<const Vector>(h.data(), h.size()); }
  RowMatrix states() const { return h.transpose(); }
};

class Rnn {
 public:
  using State = RnnState;
  static constexpr bool kRecurrent = true;
  inline static const std::vector<std::string> kDynamics{"rec", "in"};

  Rnn(Index n_in, Index n_h, Index n_out, Nonlinearity phi = Nonlinearity::tanh)
      : n_in_(n_in), n_h_(n_h), n_out_(n_out), phi_(phi) {
    params.add("rec", Matrix::Zero(n_h, n_h));
    params.add("in", Matrix::Zero(n_h, n_in));
    params.add("out", Matrix::Zero(n_out, n_h));
  }

  /// Xavier-normal weights; `gain` scales the recurrent block only.
  static Rnn xavier(Index n_in, Index n_h, Index n_out, double gain, Rng& rng,
                    Nonlinearity phi = Nonlinearity::tanh) {
    Rnn m(n_in, n_h, n_out, phi);
    m.params["rec"] = xavier_normal(n_h, n_h, gain, rng);
    m.params["in"] = xavier_normal(n_h, n_in, 1.0, rng);
    m.params["out"] = xavier_normal(n_out, n_h, 1.0, rng);
    return m;
  }

  Index n_in() const { return n_in_; }
  Index n_h() const { return n_h_; }
  Index n_out() const { return n_out_; }
  Nonlinearity nonlinearity() const { return phi_; }
  Index num_params() const { return params.flat_size(kDynamics); }

  State forward(const TaskBatch& batch, const Matrix* h0 = nullptr) const {
    if (batch.n_in() != n_in_) throw ShapeError("Rnn::forward: input width mismatch");
    State s;
    s.n_x = batch.n_x;
    s.n_t = batch.n_t;
    s.n_h = n_h_;
    const Index k = batch.k();
    s.x = batch.x.transpose();
    s.h.resize(n_h_, k);
    s.h_prev.resize(n_h_, k);
    s.a.resize(n_h_, k);
    s.d.resize(n_h_, k);
    Matrix prev = h0 ? *h0 : Matrix::Zero(n_h_, batch.n_x);
    if (prev.rows() != n_h_ || prev.cols() != batch.n_x) throw ShapeError("Rnn::forward: h0 must be n_h x n_x");
    const auto& w = params["rec"];
    const auto& u = params["in"];
    for (Index t = 0; t < s.n_t; ++t) {
      auto cols = Eigen::seqN(t, s.n_x, s.n_t);
      Matrix a = w * prev + u * Matrix(s.x(Eigen::all, cols));
      Matrix h = a;
      Matrix d = Matrix::Ones(n_h_, s.n_x);
      if (phi_ == Nonlinearity::tanh) {
        h = a.array().tanh().matrix();
        d = (1.0 - h.array().square()).matrix();
      }
      for (Index j = 0; j < s.n_x; ++j)
        if (!h.col(j).allFinite()) throw ForwardError("Rnn::forward: non-finite state", j, t);
      s.h_prev(Eigen::all, cols) = prev;
      s.a(Eigen::all, cols) = a;
      s.d(Eigen::all, cols) = d;
      s.h(Eigen::all, cols) = h;
      prev = std::move(h);
    }
    return s;
  }

  /// One update from explicit inputs, used by finite-difference checks.
  Vector step(const Vector& h_prev, const Vector& x) const {
    return phi_step(params["rec"] * h_prev + params["in"] * x);
  }
  Vector phi_step(const Vector& a) const {
    return phi_ == Nonlinearity::tanh ? Vector(a.array().tanh().matrix()) : a;
  }

  /// Outputs W_out h, rows indexed by site.
  RowMatrix outputs(const State& s) const { return (params["out"] * s.h).transpose(); }

  DomainShape state_shape(const State& s) const { return DomainShape::state(s.n_x, s.n_t, n_h_); }

  // ---- single-site derivatives ----

  Vector step_jvp_state(const State& s, Index j, Index t, const Vector& dh) const {
    const Index c = site(s, j, t);
    return s.d.col(c).cwiseProduct(params["rec"] * dh);
  }
  Vector step_vjp_state(const State& s, Index j, Index t, const Vector& u) const {
    const Index c = site(s, j, t);
    return params["rec"].transpose() * s.d.col(c).cwiseProduct(u);
  }
  Vector step_jvp_params(const State& s, Index j, Index t, const ParamDirection& dtheta) const {
    auto d = checked_direction(params, kDynamics, dtheta);
    const Index c = site(s, j, t);
    Vector r = Vector::Zero(n_h_);
    if (d.count("rec")) r += d["rec"] * s.h_prev.col(c);
    if (d.count("in")) r += d["in"] * s.x.col(c);
    return s.d.col(c).cwiseProduct(r);
  }
  ParamDirection step_vjp_params(const State& s, Index j, Index t, const Vector& u) const {
    const Index c = site(s, j, t);
    Vector g = s.d.col(c).cwiseProduct(u);
    ParamDirection out;
    if (params.trainable("rec")) out["rec"] = g * s.h_prev.col(c).transpose();
    if (params.trainable("in")) out["in"] = g * s.x.col(c).transpose();
    return out;
  }

  // ---- batched derivatives ----

  /// J(t) applied to a time slice (n_h x n_x*B, column b*n_x + j).
  Matrix state_jvp_slice(const State& s, Index t, const Matrix& dh) const {
    return (params["rec"] * dh).cwiseProduct(time_columns(s.d, s.n_x, s.n_t, t).replicate(1, dh.cols() / s.n_x));
  }
  Matrix state_vjp_slice(const State& s, Index t, const Matrix& u) const {
    return params["rec"].transpose() *
           u.cwiseProduct(time_columns(s.d, s.n_x, s.n_t, t).replicate(1, u.cols() / s.n_x));
  }

  /// Immediate parameter Jacobian D_theta f on flat trainable directions (p x B) -> S.
  Matrix jvp_params(const State& s, const Matrix& theta) const {
    if (theta.rows() != num_params()) throw ShapeError("Rnn::jvp_params: expected " + std::to_string(num_params()));
    Matrix out(s.dim(), theta.cols());
    for (Index b = 0; b < theta.cols(); ++b) {
      Index o = 0;
      Matrix r = Matrix::Zero(n_h_, s.k());
      if (params.trainable("rec")) {
        r.noalias() += Eigen::Map<const Matrix>(theta.col(b).data() + o, n_h_, n_h_) * s.h_prev;
        o += n_h_ * n_h_;
      }
      if (params.trainable("in"))
        r.noalias() += Eigen::Map<const Matrix>(theta.col(b).data() + o, n_h_, n_in_) * s.x;
      as_sites(out, b, n_h_) = r.cwiseProduct(s.d);
    }
    return out;
  }

  Matrix vjp_params(const State& s, const Matrix& u) const {
    if (u.rows() != s.dim()) throw ShapeError("Rnn::vjp_params: expected state-sized input");
    Matrix out(num_params(), u.cols());
    for (Index b = 0; b < u.cols(); ++b) {
      Matrix g = as_sites(u, b, n_h_).cwiseProduct(s.d);
      Index o = 0;
      if (params.trainable("rec")) {
        Eigen::Map<Matrix>(out.col(b).data() + o, n_h_, n_h_).noalias() = g * s.h_prev.transpose();
        o += n_h_ * n_h_;
      }
      if (params.trainable("in"))
        Eigen::Map<Matrix>(out.col(b).data() + o, n_h_, n_in_).noalias() = g * s.x.transpose();
    }
    return out;
  }

  // ---- weight sites ----
  // Both families feed the same pre-activation, so they share one channel
  // of width n_h: V = cat(H_-, X).

  WeightSites weight_sites(const State& s) const {
    WeightSites w;
    w.replication = n_h_;
    std::vector<Matrix> blocks;
    SiteChannel ch{"pre", n_h_, {}, {0, 0}};
    Index m = 0;
    if (params.trainable("rec")) {
      blocks.push_back(s.h_prev.transpose());
      w.family_slices["rec"] = {m, m + n_h_};
      ch.families.push_back("rec");
      m += n_h_;
    }
    if (params.trainable("in")) {
      blocks.push_back(s.x.transpose());
      w.family_slices["in"] = {m, m + n_in_};
      ch.families.push_back("in");
      m += n_in_;
    }
    w.V.resize(s.k(), m);
    Index o = 0;
    for (auto& bl : blocks) {
      w.V.middleCols(o, bl.cols()) = bl;
      o += bl.cols();
    }
    ch.cols = {0, m};
    if (m > 0) w.channels.push_back(ch);
    return w;
  }

  DomainShape site_shape(const State& s) const {
    return DomainShape{{Axis::batch, s.n_x}, {Axis::time, s.n_t}, {Axis::site, n_h_}};
  }

  /// G: site perturbations (k x n_h per column) -> S.
  Matrix site_jvp(const State& s, const Matrix& dq) const {
    if (dq.rows() != s.dim()) throw ShapeError("Rnn::site_jvp: expected site-space input");
    Matrix out(dq.rows(), dq.cols());
    for (Index b = 0; b < dq.cols(); ++b) as_sites(out, b, n_h_) = as_sites(dq, b, n_h_).cwiseProduct(s.d);
    return out;
  }
  Matrix site_vjp(const State& s, const Matrix& u) const { return site_jvp(s, u); }

  Vector site_jvp(const State& s, Index j, Index t, const Vector& dq) const {
    return s.d.col(site(s, j, t)).cwiseProduct(dq);
  }
  Vector site_vjp(const State& s, Index j, Index t, const Vector& u) const { return site_jvp(s, j, t, u); }

  ParamSet params;

 private:
  static Index site(const State& s, Index j, Index t) {
    if (j < 0 || j >= s.n_x || t < 0 || t >= s.n_t) throw std::out_of_range("site index out of range");
    if (s.d.cols() != s.k()) throw Error("missing forward cache");
    return j * s.n_t + t;
  }

  Index n_in_, n_h_, n_out_;
  Nonlinearity phi_;
};

}  // namespace gsntk

#endif  // GSNTK_MODELS_RNN_HPP
