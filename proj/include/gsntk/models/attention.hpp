#ifndef GSNTK_MODELS_ATTENTION_HPP
#define GSNTK_MODELS_ATTENTION_HPP

// Single-head self-attention block followed by an MLP, applied per batch
// element over the time axis:
//   Q = X W_Q^T, K = X W_K^T, Z = X W_V^T
//   A = softmax(Q K^T / sqrt(n_attn)) Z            (row-wise over time)
//   H_1 = A W_O^T
//   H_{l+1} = tanh(H_l W_l^T + b_l),  l = 1..L-1
//   Y = H_L W_L^T + b_L                            (readout)
// The global state at each site is the concatenation [Q, K, Z, A, H_1..H_L, Y].

#include "common.hpp"

#include <Eigen/Dense>

namespace gsntk {

struct AttnConfig {
  Index n_in = 1;
  Index n_attn = 16;
  Index n_mlp = 16;
  Index n_out = 1;
  Index layers = 3;  // L
};

struct AttnState {
  Index n_x = 0, n_t = 0;
  Matrix x;                // n_in x k
  Matrix q, kk, z, a;      // n_attn x k
  std::vector<Matrix> h;   // h[0] = H_1 ... h[L-1] = H_L, each n_mlp x k
  Matrix y;                // n_out x k
  std::vector<Matrix> p;   // per batch element: softmax weights, n_t x n_t (row = query time)
  Index feat = 0;

  Index k() const { return n_x * n_t; }
  Index dim() const { return k() * feat; }
};

class AttnMlp {
 public:
  using State = AttnState;
  static constexpr bool kRecurrent = false;

  explicit AttnMlp(const AttnConfig& c) : cfg_(c) {
    if (c.layers < 1) throw std::invalid_argument("AttnMlp: need at least one MLP layer");
    params.add("Q", Matrix::Zero(c.n_attn, c.n_in));
    params.add("K", Matrix::Zero(c.n_attn, c.n_in));
    params.add("V", Matrix::Zero(c.n_attn, c.n_in));
    params.add("O", Matrix::Zero(c.n_mlp, c.n_attn));
    for (Index l = 1; l < c.layers; ++l) {
      params.add(wname(l), Matrix::Zero(c.n_mlp, c.n_mlp));
      params.add(bname(l), Matrix::Zero(c.n_mlp, 1), false);
    }
    params.add(wname(c.layers), Matrix::Zero(c.n_out, c.n_mlp), false);
    params.add(bname(c.layers), Matrix::Zero(c.n_out, 1), false);
    for (const auto& f : params.families()) order_.push_back(f.name);
  }

  static AttnMlp xavier(const AttnConfig& c, double gain, Rng& rng) {
    AttnMlp m(c);
    for (const auto& f : m.order_) {
      if (f[0] == 'b') continue;
      auto& w = m.params[f];
      w = xavier_normal(w.rows(), w.cols(), gain, rng);
    }
    return m;
  }

  const AttnConfig& config() const { return cfg_; }
  Index feature_dim() const { return 4 * cfg_.n_attn + cfg_.layers * cfg_.n_mlp + cfg_.n_out; }
  const std::vector<std::string>& family_order() const { return order_; }
  Index num_params() const { return params.flat_size(order_); }

  static std::string wname(Index l) { return "W" + std::to_string(l); }
  static std::string bname(Index l) { return "b" + std::to_string(l); }

  State forward(const TaskBatch& batch) const {
    if (batch.n_in() != cfg_.n_in) throw ShapeError("AttnMlp::forward: input width mismatch");
    State s;
    s.n_x = batch.n_x;
    s.n_t = batch.n_t;
    s.feat = feature_dim();
    s.x = batch.x.transpose();
    s.q = params["Q"] * s.x;
    s.kk = params["K"] * s.x;
    s.z = params["V"] * s.x;
    s.a.resize(cfg_.n_attn, s.k());
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.n_attn));
    for (Index j = 0; j < s.n_x; ++j) {
      const Index c0 = j * s.n_t, nt = s.n_t;
      Matrix logits = scale * s.q.middleCols(c0, nt).transpose() * s.kk.middleCols(c0, nt);
      Matrix pj = softmax_rows(logits);
      s.a.middleCols(c0, nt) = s.z.middleCols(c0, nt) * pj.transpose();
      s.p.push_back(std::move(pj));
    }
    s.h.push_back(params["O"] * s.a);
    for (Index l = 1; l < cfg_.layers; ++l) {
      Matrix pre = params[wname(l)] * s.h.back();
      pre.colwise() += params[bname(l)].col(0);
      s.h.push_back(pre.array().tanh().matrix());
    }
    s.y = params[wname(cfg_.layers)] * s.h.back();
    s.y.colwise() += params[bname(cfg_.layers)].col(0);
    for (Index j = 0; j < s.n_x; ++j)
      for (Index t = 0; t < s.n_t; ++t)
        if (!s.y.col(j * s.n_t + t).allFinite() || !s.h.back().col(j * s.n_t + t).allFinite())
          throw ForwardError("AttnMlp::forward: non-finite activation", j, t);
    return s;
  }

  static Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (Index r = 0; r < p.rows(); ++r) {
      const double mx = p.row(r).maxCoeff();
      p.row(r) = (p.row(r).array() - mx).exp().matrix();
      p.row(r) /= p.row(r).sum();
    }
    return p;
  }

  DomainShape state_shape(const State& s) const { return DomainShape::state(s.n_x, s.n_t, s.feat); }

  /// Stacked global state, feature x k.
  Matrix global_state(const State& s) const { return stack(s.q, s.kk, s.z, s.a, s.h, s.y); }

  RowMatrix outputs(const State& s) const { return s.y.transpose(); }

  /// Total derivative of the global state along flat trainable directions (p x B).
  Matrix jvp_params(const State& s, const Matrix& theta) const {
    if (theta.rows() != num_params()) throw ShapeError("AttnMlp::jvp_params: expected " + std::to_string(num_params()));
    Matrix out(s.dim(), theta.cols());
    for (Index b = 0; b < theta.cols(); ++b) {
      auto d = unpack(theta.col(b));
      as_sites(out, b, s.feat) = jvp_one(s, d);
    }
    return out;
  }

  Matrix vjp_params(const State& s, const Matrix& u) const {
    if (u.rows() != s.dim()) throw ShapeError("AttnMlp::vjp_params: expected state-sized input");
    Matrix out(num_params(), u.cols());
    for (Index b = 0; b < u.cols(); ++b) out.col(b) = pack(vjp_one(s, as_sites(u, b, s.feat)));
    return out;
  }

  /// Single direction as named matrices (frozen families must be zero).
  Matrix jvp(const State& s, const ParamDirection& dtheta) const {
    return jvp_one(s, checked_direction(params, order_, dtheta));
  }

  WeightSites weight_sites(const State& s) const {
    std::vector<std::pair<std::string, const Matrix*>> sites;
    for (const char* f : {"Q", "K", "V"}) sites.push_back({f, &s.x});
    sites.push_back({"O", &s.a});
    for (Index l = 1; l <= cfg_.layers; ++l) sites.push_back({wname(l), &s.h[l - 1]});
    Matrix ones = Matrix::Ones(1, s.k());
    for (Index l = 1; l <= cfg_.layers; ++l) sites.push_back({bname(l), &ones});
    WeightSites w;
    w.replication = cfg_.n_attn;
    Index m = 0;
    for (auto& [f, src] : sites)
      if (params.trainable(f)) m += src->rows();
    w.V.resize(s.k(), m);
    Index o = 0;
    for (auto& [f, src] : sites) {
      if (!params.trainable(f)) continue;
      w.V.middleCols(o, src->rows()) = src->transpose();
      w.family_slices[f] = {o, o + src->rows()};
      w.channels.push_back({f, params[f].rows(), {f}, {o, o + src->rows()}});
      o += src->rows();
    }
    return w;
  }

  [[noreturn]] Matrix site_jvp(const State&, const Matrix&) const {
    throw UnsupportedError("AttnMlp: site Jacobians (lifted propagator) are not available for attention");
  }
  [[noreturn]] Matrix site_vjp(const State&, const Matrix&) const {
    throw UnsupportedError("AttnMlp: site Jacobians (lifted propagator) are not available for attention");
  }

  ParamSet params;

 private:
  Matrix stack(const Matrix& q, const Matrix& k, const Matrix& z, const Matrix& a, const std::vector<Matrix>& h,
               const Matrix& y) const {
    Matrix g(feature_dim(), q.cols());
    Index o = 0;
    for (const Matrix* m : {&q, &k, &z, &a}) {
      g.middleRows(o, m->rows()) = *m;
      o += m->rows();
    }
    for (const auto& m : h) {
      g.middleRows(o, m.rows()) = m;
      o += m.rows();
    }
    g.middleRows(o, y.rows()) = y;
    return g;
  }

  ParamDirection unpack(const Eigen::Ref<const Vector>& v) const {
    ParamDirection d;
    Index o = 0;
    for (const auto& f : order_) {
      if (!params.trainable(f)) continue;
      const auto& ref = params[f];
      d[f] = Eigen::Map<const Matrix>(v.data() + o, ref.rows(), ref.cols());
      o += ref.size();
    }
    return d;
  }

  Vector pack(const ParamDirection& d) const {
    Vector v(num_params());
    Index o = 0;
    for (const auto& f : order_) {
      if (!params.trainable(f)) continue;
      const auto& m = d.at(f);
      v.segment(o, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      o += m.size();
    }
    return v;
  }

  Matrix dir(const ParamDirection& d, const std::string& f) const {
    auto it = d.find(f);
    return it == d.end() ? Matrix::Zero(params[f].rows(), params[f].cols()) : it->second;
  }

  Matrix jvp_one(const State& s, const ParamDirection& d) const {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.n_attn));
    Matrix dq = dir(d, "Q") * s.x, dk = dir(d, "K") * s.x, dz = dir(d, "V") * s.x;
    Matrix da(cfg_.n_attn, s.k());
    for (Index j = 0; j < s.n_x; ++j) {
      const Index c0 = j * s.n_t, nt = s.n_t;
      const Matrix& p = s.p[j];
      Matrix ds = scale * (Matrix(dq.middleCols(c0, nt)).transpose() * s.kk.middleCols(c0, nt) +
                           Matrix(s.q.middleCols(c0, nt)).transpose() * dk.middleCols(c0, nt));
      // softmax Jacobian per row: diag(p) - p p^T
      Matrix pds = p.cwiseProduct(ds);
      Matrix dp = pds - p.cwiseProduct(pds.rowwise().sum().replicate(1, s.n_t));
      da.middleCols(c0, nt) = dz.middleCols(c0, nt) * p.transpose() + s.z.middleCols(c0, nt) * dp.transpose();
    }
    std::vector<Matrix> dh;
    dh.push_back(params["O"] * da + dir(d, "O") * s.a);
    for (Index l = 1; l < cfg_.layers; ++l) {
      Matrix pre = params[wname(l)] * dh.back() + dir(d, wname(l)) * s.h[l - 1];
      pre.colwise() += dir(d, bname(l)).col(0);
      dh.push_back((1.0 - s.h[l].array().square()).matrix().cwiseProduct(pre));
    }
    const Index L = cfg_.layers;
    Matrix dy = params[wname(L)] * dh.back() + dir(d, wname(L)) * s.h[L - 1];
    dy.colwise() += dir(d, bname(L)).col(0);
    return stack(dq, dk, dz, da, dh, dy);
  }

  ParamDirection vjp_one(const State& s, const Eigen::Ref<const Matrix>& g) const {
    const Index na = cfg_.n_attn, L = cfg_.layers;
    const double scale = 1.0 / std::sqrt(static_cast<double>(na));
    Index o = 0;
    auto take = [&](Index rows) {
      Matrix m = g.middleRows(o, rows);
      o += rows;
      return m;
    };
    Matrix gq = take(na), gk = take(na), gz = take(na), ga = take(na);
    std::vector<Matrix> gh;
    for (Index l = 0; l < L; ++l) gh.push_back(take(cfg_.n_mlp));
    Matrix gy = take(cfg_.n_out);

    ParamDirection out;
    auto put = [&](const std::string& f, Matrix m) {
      if (params.trainable(f)) out[f] = std::move(m);
    };
    put(wname(L), gy * s.h[L - 1].transpose());
    put(bname(L), gy.rowwise().sum());
    Matrix back = gh[L - 1] + params[wname(L)].transpose() * gy;
    for (Index l = L - 1; l >= 1; --l) {
      Matrix gpre = back.cwiseProduct((1.0 - s.h[l].array().square()).matrix());
      put(wname(l), gpre * s.h[l - 1].transpose());
      put(bname(l), gpre.rowwise().sum());
      back = gh[l - 1] + params[wname(l)].transpose() * gpre;
    }
    put("O", back * s.a.transpose());
    ga += params["O"].transpose() * back;
    for (Index j = 0; j < s.n_x; ++j) {
      const Index c0 = j * s.n_t, nt = s.n_t;
      const Matrix& p = s.p[j];
      Matrix gaj = ga.middleCols(c0, nt);
      // A_j = Z_j P^T (site-major), so dP = (ga_j^T Z_j) and dZ_j += ga_j P
      Matrix gp = gaj.transpose() * s.z.middleCols(c0, nt);
      gz.middleCols(c0, nt) += gaj * p;
      Matrix pg = p.cwiseProduct(gp);
      Matrix gs = pg - p.cwiseProduct(pg.rowwise().sum().replicate(1, s.n_t));
      gq.middleCols(c0, nt) += scale * s.kk.middleCols(c0, nt) * gs.transpose();
      gk.middleCols(c0, nt) += scale * s.q.middleCols(c0, nt) * gs;
    }
    put("Q", gq * s.x.transpose());
    put("K", gk * s.x.transpose());
    put("V", gz * s.x.transpose());
    return out;
  }

  AttnConfig cfg_;
  std::vector<std::string> order_;
};

}  // namespace gsntk

#endif  // GSNTK_MODELS_ATTENTION_HPP
