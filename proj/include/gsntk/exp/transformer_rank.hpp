#ifndef GSNTK_EXP_TRANSFORMER_RANK_HPP
#define GSNTK_EXP_TRANSFORMER_RANK_HPP

// Temporal rank of the attention+MLP NTK at initialization against the input
// dimension, a Fourier embedding of a scalar input, and the attention width.

#include "../models/attention.hpp"
#include "../ntk.hpp"
#include "../tasks/fourier.hpp"
#include "results.hpp"
#include "sweep.hpp"

#include <Eigen/Eigenvalues>

namespace gsntk {

struct TransformerRankConfig {
  Index n_t = 50;
  Index n_x = 10;
  std::vector<Index> n_x_grid{5, 10, 15};
  std::vector<Index> n_in_grid{1, 4, 16, 64};
  std::vector<Index> fourier_grid{0, 2, 4, 8};
  Index n_attn = 16;
  Index n_mlp = 16;
  Index layers = 3;
  double gain = 1.0;
  Index export_modes = 3;
  struct {
    std::vector<Index> n_attn_grid{4, 8, 16};
    Index n_in = 4;
    Index n_x = 5;
    Index n_t = 20;
  } width;
  struct {
    double dominant_ratio_max = 0.05;
  } thresholds;

  static TransformerRankConfig from(Section s) {
    TransformerRankConfig c;
    c.n_t = s.get("n_t", c.n_t);
    c.n_x = s.get("n_x", c.n_x);
    c.n_x_grid = s.get("n_x_grid", c.n_x_grid);
    c.n_in_grid = s.get("n_in_grid", c.n_in_grid);
    c.fourier_grid = s.get("fourier_grid", c.fourier_grid);
    c.n_attn = s.get("n_attn", c.n_attn);
    c.n_mlp = s.get("n_mlp", c.n_mlp);
    c.layers = s.get("layers", c.layers);
    c.gain = s.get("gain", c.gain);
    c.export_modes = s.get("export_modes", c.export_modes);
    auto w = s.sub("width");
    c.width.n_attn_grid = w.get("n_attn_grid", c.width.n_attn_grid);
    c.width.n_in = w.get("n_in", c.width.n_in);
    c.width.n_x = w.get("n_x", c.width.n_x);
    c.width.n_t = w.get("n_t", c.width.n_t);
    w.finish();
    auto t = s.sub("thresholds");
    c.thresholds.dominant_ratio_max = t.get("dominant_ratio_max", c.thresholds.dominant_ratio_max);
    t.finish();
    s.finish();
    c.validate();
    return c;
  }

  Json to_json() const {
    return {{"n_t", n_t},
            {"n_x", n_x},
            {"n_x_grid", n_x_grid},
            {"n_in_grid", n_in_grid},
            {"fourier_grid", fourier_grid},
            {"n_attn", n_attn},
            {"n_mlp", n_mlp},
            {"layers", layers},
            {"gain", gain},
            {"export_modes", export_modes},
            {"width", {{"n_attn_grid", width.n_attn_grid}, {"n_in", width.n_in}, {"n_x", width.n_x}, {"n_t", width.n_t}}},
            {"thresholds", {{"dominant_ratio_max", thresholds.dominant_ratio_max}}}};
  }

  void validate() const {
    auto pos = [](const std::vector<Index>& v) {
      return !v.empty() && std::all_of(v.begin(), v.end(), [](Index x) { return x >= 1; });
    };
    if (n_t < 1 || n_x < 1 || n_attn < 1 || n_mlp < 1 || layers < 1 || export_modes < 0)
      throw ConfigError("transformer-rank: sizes must be positive");
    if (!pos(n_x_grid) || !pos(n_in_grid) || fourier_grid.empty())
      throw ConfigError("transformer-rank: n_x_grid and n_in_grid need positive entries");
    if (std::any_of(fourier_grid.begin(), fourier_grid.end(), [](Index f) { return f < 0; }))
      throw ConfigError("transformer-rank: Fourier frequency counts must be >= 0");
    if (!width.n_attn_grid.empty() && (!pos(width.n_attn_grid) || width.n_in < 1 || width.n_x < 1 || width.n_t < 1))
      throw ConfigError("transformer-rank: width sweep sizes must be positive");
  }
};

namespace detail {

struct AttnPoint {
  AttnMlp model;
  AttnState state;
};

inline AttnPoint attention_point(const TransformerRankConfig& cfg, const RowMatrix& x, Index n_x, Index n_t,
                                 Index n_attn, std::uint64_t seed) {
  AttnConfig ac{x.cols(), n_attn, cfg.n_mlp, 1, cfg.layers};
  Rng rng = make_rng(seed, kInit);
  auto m = AttnMlp::xavier(ac, cfg.gain, rng);
  auto s = m.forward(TaskBatch::from_inputs(n_x, n_t, x));
  return {std::move(m), std::move(s)};
}

inline Eigen::SelfAdjointEigenSolver<Matrix> eig(const Matrix& m) { return Eigen::SelfAdjointEigenSolver<Matrix>(m); }

inline SpectrumSummary summary_of(const Eigen::SelfAdjointEigenSolver<Matrix>& es) {
  const Vector& e = es.eigenvalues();
  return summarize_spectrum(std::vector<double>(e.data(), e.data() + e.size()));
}

}  // namespace detail

inline RunOutput run_transformer_rank(const TransformerRankConfig& cfg, std::uint64_t seed, int workers = 0) {
  cfg.validate();
  // Input draws depend on (seed, n_x, n_in) only, so the same inputs appear
  // wherever a configuration recurs across sweeps.
  auto inputs = [&](Index n_x, Index n_t, Index n_in) {
    return RowMatrix(gaussian_matrix(n_x * n_t, n_in, derive_seed(seed, kTask, static_cast<std::uint64_t>(n_x * 1000 + n_in)),
                                     kTask));
  };
  struct Point {
    std::string sweep;
    Index n_x, n_in, fourier, n_attn, n_t;
  };
  std::vector<Point> grid;
  for (Index nx : cfg.n_x_grid)
    for (Index ni : cfg.n_in_grid) grid.push_back({"n_in", nx, ni, 0, cfg.n_attn, cfg.n_t});
  for (Index f : cfg.fourier_grid) grid.push_back({"fourier", cfg.n_x, 1, f, cfg.n_attn, cfg.n_t});
  for (Index na : cfg.width.n_attn_grid) grid.push_back({"width", cfg.width.n_x, cfg.width.n_in, 0, na, cfg.width.n_t});

  const std::vector<std::string> cols{"sweep", "n_x", "n_in", "fourier", "n_attn"};
  const std::vector<std::string> mcols{"n_x", "n_in", "mode", "j", "t"};
  std::vector<ResultTable> parts(grid.size(), ResultTable(cols)), modes(grid.size(), ResultTable(mcols));
  const Index lo = *std::min_element(cfg.n_in_grid.begin(), cfg.n_in_grid.end());
  const Index hi = *std::max_element(cfg.n_in_grid.begin(), cfg.n_in_grid.end());

  parallel_for(static_cast<Index>(grid.size()), workers, [&](Index i) {
    const auto& p = grid[i];
    RowMatrix x = inputs(p.n_x, p.n_t, 1);
    if (p.sweep != "fourier") x = inputs(p.n_x, p.n_t, p.n_in);
    else x = fourier_embed(x, p.fourier);
    auto pt = detail::attention_point(cfg, x, p.n_x, p.n_t, p.n_attn, seed);
    const std::vector<std::string> c{p.sweep, coord(p.n_x), coord(p.n_in), coord(p.fourier), coord(p.n_attn)};
    auto& t = parts[i];
    auto sites = pt.model.weight_sites(pt.state);
    const Index bound = 3 * x.cols() + p.n_attn + (cfg.layers - 1) * cfg.n_mlp;
    t.add(c, seed, "core_rank", static_cast<double>(psd_rank(sites.gram())));
    t.add(c, seed, "core_rank_bound", static_cast<double>(bound));
    t.add(c, seed, "core_temporal_pr", detail::summary_of(detail::eig(sites.gram())).effective_rank_pr);

    auto v = reduced_views(pt.model, pt.state);
    auto es = detail::eig(v.temporal);
    auto ts = detail::summary_of(es);
    t.add(c, seed, "temporal_pr", ts.effective_rank_pr);
    t.add(c, seed, "temporal_r95", static_cast<double>(ts.effective_rank_95));
    const auto& ev = ts.eigenvalues;
    if (ev.size() >= 2 && ev[0] > 0.0) t.add(c, seed, "dominant_ratio", ev[1] / ev[0]);
    if (p.sweep == "width") {
      auto ss = detail::summary_of(detail::eig(v.spatial));
      t.add(c, seed, "spatial_pr", ss.effective_rank_pr);
      t.add(c, seed, "spatial_r95", static_cast<double>(ss.effective_rank_95));
      // NTK = J Jᵀ with P = I, so its rank is the numerical rank of J.
      Matrix J = state_jacobian(pt.model, pt.state, std::numeric_limits<Index>::max());
      t.add(c, seed, "full_rank", static_cast<double>(numerical_rank(J)));
    }
    if (p.sweep == "n_in" && p.n_x == cfg.n_x && (p.n_in == lo || p.n_in == hi)) {
      const Index k = es.eigenvalues().size();
      for (Index m = 0; m < std::min(cfg.export_modes, k); ++m) {
        Vector u = es.eigenvectors().col(k - 1 - m);
        Index arg;
        u.cwiseAbs().maxCoeff(&arg);
        if (u(arg) < 0) u = -u;
        for (Index j = 0; j < p.n_x; ++j)
          for (Index tt = 0; tt < p.n_t; ++tt)
            modes[i].add({coord(p.n_x), coord(p.n_in), coord(m + 1), coord(j), coord(tt)}, seed, "temporal_mode",
                         u(j * p.n_t + tt));
      }
    }
  });

  RunOutput out;
  out.experiment = "transformer-rank";
  out.seed = seed;
  out.config = cfg.to_json();
  ResultTable t(cols), md(mcols);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    t.append(parts[i]);
    md.append(modes[i]);
  }

  double bound_violations = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    bound_violations += parts[i].value("core_rank") > parts[i].value("core_rank_bound");
  out.checks.push_back({"core_rank_bound_violations", bound_violations, 0.0, true});

  auto sorted = [](std::vector<Index> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  double n_in_increasing = 0;
  for (Index nx : cfg.n_x_grid) {
    std::vector<double> r;
    for (Index ni : sorted(cfg.n_in_grid))
      r.push_back(t.value("temporal_pr", {{"sweep", "n_in"}, {"n_x", coord(nx)}, {"n_in", coord(ni)}}));
    n_in_increasing += strictly_increasing(r);
  }
  out.checks.push_back(
      {"temporal_rank_increasing_in_n_in", n_in_increasing, static_cast<double>(cfg.n_x_grid.size()), false});
  std::vector<double> rf;
  for (Index f : sorted(cfg.fourier_grid))
    rf.push_back(t.value("temporal_pr", {{"sweep", "fourier"}, {"fourier", coord(f)}}));
  out.checks.push_back({"temporal_rank_increasing_in_fourier", strictly_increasing(rf) ? 1.0 : 0.0, 1.0, false});
  if (std::count(cfg.n_in_grid.begin(), cfg.n_in_grid.end(), 1) && std::count(cfg.n_x_grid.begin(), cfg.n_x_grid.end(), cfg.n_x))
    out.checks.push_back({"dominant_ratio_n_in_1",
                          t.value("dominant_ratio", {{"sweep", "n_in"}, {"n_x", coord(cfg.n_x)}, {"n_in", "1"}}),
                          cfg.thresholds.dominant_ratio_max, true});
  out.tables.emplace("ranks", std::move(t));
  out.tables.emplace("modes", std::move(md));
  return out;
}

}  // namespace gsntk

#endif  // GSNTK_EXP_TRANSFORMER_RANK_HPP
