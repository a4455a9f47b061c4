#ifndef GSNTK_EXP_NTFP_EXP_HPP
#define GSNTK_EXP_NTFP_EXP_HPP

// Long-run behaviour of h <- W tanh(h) with m added fixed points ±scale·e_i:
// endpoint clusters, fixed-point residuals and PCA projections.

#include "../tasks/ntfp.hpp"
#include "results.hpp"
#include "sweep.hpp"

#include <Eigen/SVD>

namespace gsntk {

struct NtfpExpConfig {
  Index n_h = 256;
  double scale = 10.0;
  std::vector<Index> points{0, 1, 2};
  std::vector<double> gains{1.0, 1.5, 2.0};
  Index starts = 50;
  Index steps = 4000;
  Index window = 2000;
  double start_sd = 1.0;
  double cluster_tol = 5.0;
  Index trajectory_starts = 10;
  Index record_every = 50;
  struct {
    double residual_max = 1e-10;
    double origin_max = 1e-6;
  } thresholds;

  static NtfpExpConfig from(Section s) {
    NtfpExpConfig c;
    c.n_h = s.get("n_h", c.n_h);
    c.scale = s.get("scale", c.scale);
    c.points = s.get("points", c.points);
    c.gains = s.get("gains", c.gains);
    c.starts = s.get("starts", c.starts);
    c.steps = s.get("steps", c.steps);
    c.window = s.get("window", c.window);
    c.start_sd = s.get("start_sd", c.start_sd);
    c.cluster_tol = s.get("cluster_tol", c.cluster_tol);
    c.trajectory_starts = s.get("trajectory_starts", c.trajectory_starts);
    c.record_every = s.get("record_every", c.record_every);
    auto t = s.sub("thresholds");
    c.thresholds.residual_max = t.get("residual_max", c.thresholds.residual_max);
    c.thresholds.origin_max = t.get("origin_max", c.thresholds.origin_max);
    t.finish();
    s.finish();
    c.validate();
    return c;
  }

  Json to_json() const {
    return {{"n_h", n_h},         {"scale", scale},
            {"points", points},   {"gains", gains},
            {"starts", starts},   {"steps", steps},
            {"window", window},   {"start_sd", start_sd},
            {"cluster_tol", cluster_tol}, {"trajectory_starts", trajectory_starts},
            {"record_every", record_every},
            {"thresholds", {{"residual_max", thresholds.residual_max}, {"origin_max", thresholds.origin_max}}}};
  }

  void validate() const {
    if (n_h < 1 || starts < 1 || steps < 1 || window < 1 || window > steps)
      throw ConfigError("ntfp: need n_h, starts, steps >= 1 and 1 <= window <= steps");
    for (Index m : points)
      if (m < 0 || m > n_h) throw ConfigError("ntfp: point counts must lie in [0, n_h]");
    if (gains.empty() || points.empty()) throw ConfigError("ntfp: empty sweep grid");
    if (!(cluster_tol > 0.0)) throw ConfigError("ntfp: cluster_tol must be positive");
    if (trajectory_starts < 0 || trajectory_starts > starts || record_every < 1)
      throw ConfigError("ntfp: need 0 <= trajectory_starts <= starts and record_every >= 1");
  }
};

namespace detail {

/// Top-2 principal directions of the columns of x (n x N), sign-fixed so the
/// largest-magnitude loading is positive.
inline Matrix pca_basis(const Matrix& x, Vector& mean) {
  mean = x.rowwise().mean();
  Matrix c = x.colwise() - mean;
  Eigen::BDCSVD<Matrix> svd(c, Eigen::ComputeThinU);
  Matrix u = svd.matrixU().leftCols(std::min<Index>(2, svd.matrixU().cols()));
  for (Index i = 0; i < u.cols(); ++i) {
    Index arg;
    u.col(i).cwiseAbs().maxCoeff(&arg);
    if (u(arg, i) < 0) u.col(i) *= -1.0;
  }
  return u;
}

}  // namespace detail

inline RunOutput run_ntfp(const NtfpExpConfig& cfg, std::uint64_t seed, int workers = 0) {
  cfg.validate();
  struct Point {
    Index m;
    double g;
  };
  std::vector<Point> grid;
  for (Index m : cfg.points)
    for (double g : cfg.gains) grid.push_back({m, g});
  std::vector<ResultTable> ends(grid.size(), ResultTable({"points", "gain", "start"}));
  std::vector<ResultTable> sums(grid.size(), ResultTable({"points", "gain"}));
  std::vector<ResultTable> trajs(grid.size(), ResultTable({"points", "gain", "start", "step"}));

  parallel_for(static_cast<Index>(grid.size()), workers, [&](Index i) {
    const auto [m, g] = grid[i];
    const std::string cm = coord(m), cg = coord(g);
    // The same base draw for every (m, g): only the added points and the gain differ.
    Rng rng = make_rng(seed, kInit);
    auto pts = coordinate_points(cfg.n_h, m, cfg.scale);
    Matrix W = ntfp_weights(cfg.n_h, pts, g, rng);
    double residual = 0.0;
    for (const auto& h : pts) residual = std::max(residual, (W * h.array().tanh().matrix() - h).norm());
    auto run = ntfp_simulate(W, cfg.starts, cfg.steps, cfg.window, cfg.start_sd, derive_seed(seed, kSweep, 1),
                             cfg.trajectory_starts > 0 ? cfg.record_every : 0);
    auto labels = cluster_points(run.endpoints, cfg.cluster_tol);
    const Index clusters = cluster_count(run.endpoints, cfg.cluster_tol);

    // PCA over endpoints and recorded trajectory samples together.
    Index ncols = run.endpoints.cols();
    for (Index s = 0; s < cfg.trajectory_starts; ++s) ncols += run.trajectories[s].cols();
    Matrix all(cfg.n_h, ncols);
    all.leftCols(run.endpoints.cols()) = run.endpoints;
    Index o = run.endpoints.cols();
    for (Index s = 0; s < cfg.trajectory_starts; ++s) {
      all.middleCols(o, run.trajectories[s].cols()) = run.trajectories[s];
      o += run.trajectories[s].cols();
    }
    Vector mean;
    Matrix basis = detail::pca_basis(all, mean);

    for (Index s = 0; s < cfg.starts; ++s) {
      const std::vector<std::string> c{cm, cg, coord(s)};
      Vector pc = basis.transpose() * (run.endpoints.col(s) - mean);
      ends[i].add(c, seed, "cluster", static_cast<double>(labels[s]));
      ends[i].add(c, seed, "norm", run.endpoints.col(s).norm());
      for (Index d = 0; d < pc.size(); ++d) ends[i].add(c, seed, "pc" + std::to_string(d + 1), pc(d));
    }
    for (Index s = 0; s < cfg.trajectory_starts; ++s)
      for (Index c = 0; c < run.trajectories[s].cols(); ++c) {
        Vector pc = basis.transpose() * (run.trajectories[s].col(c) - mean);
        const std::vector<std::string> co{cm, cg, coord(s), coord(c * cfg.record_every)};
        for (Index d = 0; d < pc.size(); ++d) trajs[i].add(co, seed, "pc" + std::to_string(d + 1), pc(d));
      }
    sums[i].add({cm, cg}, seed, "clusters", static_cast<double>(clusters));
    sums[i].add({cm, cg}, seed, "expected_clusters", std::ldexp(1.0, static_cast<int>(m)));
    sums[i].add({cm, cg}, seed, "fixed_point_residual", residual);
    sums[i].add({cm, cg}, seed, "max_endpoint_norm", run.endpoints.colwise().norm().maxCoeff());
  });

  RunOutput out;
  out.experiment = "ntfp";
  out.seed = seed;
  out.config = cfg.to_json();
  ResultTable e({"points", "gain", "start"}), sm({"points", "gain"}), tr({"points", "gain", "start", "step"});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    e.append(ends[i]);
    sm.append(sums[i]);
    tr.append(trajs[i]);
  }

  double residual = 0.0, mismatches = 0.0;
  for (const auto& [m, g] : grid) {
    const std::map<std::string, std::string> w{{"points", coord(m)}, {"gain", coord(g)}};
    residual = std::max(residual, sm.value("fixed_point_residual", w));
    mismatches += sm.value("clusters", w) != sm.value("expected_clusters", w);
  }
  out.checks.push_back({"fixed_point_residual", residual, cfg.thresholds.residual_max, true});
  out.checks.push_back({"cluster_count_mismatches", mismatches, 0.0, true});
  for (const auto& [m, g] : grid)
    if (m == 0 && g == 1.0)
      out.checks.push_back({"origin_collapse_m0_g1",
                            sm.value("max_endpoint_norm", {{"points", "0"}, {"gain", coord(1.0)}}),
                            cfg.thresholds.origin_max, true});
  out.tables.emplace("endpoints", std::move(e));
  out.tables.emplace("clusters", std::move(sm));
  out.tables.emplace("trajectories", std::move(tr));
  return out;
}

}  // namespace gsntk

#endif  // GSNTK_EXP_NTFP_EXP_HPP
