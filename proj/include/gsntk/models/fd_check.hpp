#ifndef GSNTK_MODELS_FD_CHECK_HPP
#define GSNTK_MODELS_FD_CHECK_HPP

// Central finite-difference checks of the analytic derivatives.

#include "attention.hpp"
#include "gru.hpp"
#include "rnn.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

namespace gsntk {

struct FdReport {
  // derivative kind -> per-site max relative error, indexed j * n_t + t
  std::map<std::string, std::vector<double>> per_site;

  double max(const std::string& kind) const {
    const auto& v = per_site.at(kind);
    return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  }
  double max() const {
    double m = 0.0;
    for (const auto& [k, v] : per_site)
      for (double e : v) m = std::max(m, e);
    return m;
  }
};

/// ‖a - b‖ / max(‖a‖, ‖b‖, floor): relative error that degrades to absolute for near-zero derivatives.
inline double rel_error(const Vector& analytic, const Vector& fd, double floor = 1e-8) {
  return (analytic - fd).norm() / std::max({analytic.norm(), fd.norm(), floor});
}

namespace detail {

inline ParamDirection random_direction(const ParamSet& ps, const std::vector<std::string>& names, Rng& rng) {
  ParamDirection d;
  for (const auto& nm : names)
    if (ps.trainable(nm)) d[nm] = gaussian_matrix(ps[nm].rows(), ps[nm].cols(), rng);
  return d;
}

template <class M>
M perturbed(const M& model, const ParamDirection& d, double eps) {
  M m = model;
  for (const auto& [nm, v] : d) m.params[nm] += eps * v;
  return m;
}

}  // namespace detail

/// Per-site checks of state, parameter and site JVPs of a recurrent model.
template <class M>
FdReport fd_check(const M& model, const TaskBatch& batch, double eps = 1e-6, std::uint64_t seed = 0) {
  static_assert(M::kRecurrent, "fd_check: use fd_check_attention for the attention model");
  auto s = model.forward(batch);
  const Index n = model.n_h();
  Rng rng = make_rng(seed, kProbeVectors);
  FdReport rep;
  auto& st = rep.per_site["state_jvp"];
  auto& pa = rep.per_site["param_jvp"];
  auto& si = rep.per_site["site_jvp"];
  for (Index j = 0; j < s.n_x; ++j)
    for (Index t = 0; t < s.n_t; ++t) {
      const Index c = j * s.n_t + t;
      const Vector hp = s.h_prev.col(c), x = s.x.col(c);

      Vector dh = gaussian_matrix(n, 1, rng);
      Vector fd = (model.step(hp + eps * dh, x) - model.step(hp - eps * dh, x)) / (2 * eps);
      st.push_back(rel_error(model.step_jvp_state(s, j, t, dh), fd));

      auto dth = detail::random_direction(model.params, M::kDynamics, rng);
      auto mp = detail::perturbed(model, dth, eps), mm = detail::perturbed(model, dth, -eps);
      fd = (mp.step(hp, x) - mm.step(hp, x)) / (2 * eps);
      pa.push_back(rel_error(model.step_jvp_params(s, j, t, dth), fd));

      if constexpr (std::is_same_v<M, Gru>) {
        Vector dq = gaussian_matrix(3 * n, 1, rng), dp = gaussian_matrix(3 * n, 1, rng);
        const Vector q = s.q.col(c), p = s.p.col(c);
        fd = (model.phi_step(hp, q + eps * dq, p + eps * dp) - model.phi_step(hp, q - eps * dq, p - eps * dp)) /
             (2 * eps);
        si.push_back(rel_error(model.site_jvp(s, j, t, dq, dp), fd));
      } else {
        Vector dq = gaussian_matrix(n, 1, rng);
        const Vector a = s.a.col(c);
        fd = (model.phi_step(a + eps * dq) - model.phi_step(a - eps * dq)) / (2 * eps);
        si.push_back(rel_error(model.site_jvp(s, j, t, dq), fd));
      }
    }
  return rep;
}

/// Checks the attention model's total parameter JVP against differences of
/// the global state, one random direction per family plus a joint one.
inline FdReport fd_check_attention(const AttnMlp& model, const TaskBatch& batch, double eps = 1e-6,
                                   std::uint64_t seed = 0) {
  auto s = model.forward(batch);
  Rng rng = make_rng(seed, kProbeVectors);
  FdReport rep;
  std::vector<std::vector<std::string>> groups;
  for (const auto& f : model.family_order())
    if (model.params.trainable(f)) groups.push_back({f});
  groups.push_back(model.family_order());
  for (const auto& g : groups) {
    auto d = detail::random_direction(model.params, g, rng);
    Matrix an = model.jvp(s, d);
    auto sp = detail::perturbed(model, d, eps).forward(batch);
    auto sm = detail::perturbed(model, d, -eps).forward(batch);
    Matrix fd = (model.global_state(sp) - model.global_state(sm)) / (2 * eps);
    auto& v = rep.per_site[g.size() == 1 ? "param_jvp:" + g[0] : "param_jvp:all"];
    for (Index c = 0; c < s.k(); ++c) v.push_back(rel_error(an.col(c), fd.col(c)));
  }
  return rep;
}

}  // namespace gsntk

#endif  // GSNTK_MODELS_FD_CHECK_HPP
