#ifndef GSNTK_EXP_RANK_REGIMES_HPP
#define GSNTK_EXP_RANK_REGIMES_HPP

// Effective ranks of the temporal and spatial NTK views at initialization of a
// student-teacher RNN, swept over the recurrent gain (recurrent weights
// trained) and over the input rank (input weights trained).

#include "../ntk.hpp"
#include "../tasks/student_teacher.hpp"
#include "results.hpp"
#include "sweep.hpp"

#include <Eigen/Eigenvalues>

namespace gsntk {

struct RankRegimesConfig {
  Index n_in = 16;
  Index n_h = 32;
  Index n_out = 1;
  Index n_t = 20;
  Index n_x = 8;
  std::vector<double> gains{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  std::vector<Index> input_ranks{1, 2, 4, 8, 16};
  double input_family_gain = 1.0;
  Index replicates = 3;
  struct {
    double spearman_min = 0.9;
  } thresholds;

  static RankRegimesConfig from(Section s) {
    RankRegimesConfig c;
    c.n_in = s.get("n_in", c.n_in);
    c.n_h = s.get("n_h", c.n_h);
    c.n_out = s.get("n_out", c.n_out);
    c.n_t = s.get("n_t", c.n_t);
    c.n_x = s.get("n_x", c.n_x);
    c.gains = s.get("gains", c.gains);
    c.input_ranks = s.get("input_ranks", c.input_ranks);
    c.input_family_gain = s.get("input_family_gain", c.input_family_gain);
    c.replicates = s.get("replicates", c.replicates);
    auto t = s.sub("thresholds");
    c.thresholds.spearman_min = t.get("spearman_min", c.thresholds.spearman_min);
    t.finish();
    s.finish();
    c.validate();
    return c;
  }

  Json to_json() const {
    return {{"n_in", n_in},
            {"n_h", n_h},
            {"n_out", n_out},
            {"n_t", n_t},
            {"n_x", n_x},
            {"gains", gains},
            {"input_ranks", input_ranks},
            {"input_family_gain", input_family_gain},
            {"replicates", replicates},
            {"thresholds", {{"spearman_min", thresholds.spearman_min}}}};
  }

  void validate() const {
    if (n_in < 1 || n_h < 1 || n_out < 1 || n_t < 1 || n_x < 1 || replicates < 1)
      throw ConfigError("rank-regimes: sizes and replicates must be positive");
    for (Index r : input_ranks)
      if (r < 1 || r > n_in) throw ConfigError("rank-regimes: input ranks must lie in [1, n_in]");
    for (double g : gains)
      if (!(g > 0.0)) throw ConfigError("rank-regimes: gains must be positive");
  }
};

inline RunOutput run_rank_regimes(const RankRegimesConfig& cfg, std::uint64_t seed, int workers = 0) {
  cfg.validate();
  struct Point {
    std::string family;
    double gain;
    Index rank;
    Index rep;
  };
  std::vector<Point> grid;
  for (Index r = 0; r < cfg.replicates; ++r) {
    for (double g : cfg.gains) grid.push_back({"rec", g, 0, r});
    for (Index k : cfg.input_ranks) grid.push_back({"in", cfg.input_family_gain, k, r});
  }
  const std::vector<std::string> cols{"family", "gain", "input_rank", "replicate"};
  std::vector<ResultTable> parts(grid.size(), ResultTable(cols));
  auto spectrum = [](const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    const Vector& e = es.eigenvalues();
    return summarize_spectrum(std::vector<double>(e.data(), e.data() + e.size()));
  };
  parallel_for(static_cast<Index>(grid.size()), workers, [&](Index i) {
    const auto& p = grid[i];
    StudentTeacherConfig st;
    st.family = p.family;
    st.gain = p.gain;
    st.n_in = cfg.n_in;
    st.n_h = cfg.n_h;
    st.n_out = cfg.n_out;
    st.n_t = cfg.n_t;
    st.n_x = cfg.n_x;
    st.input_rank = p.rank;
    st.seed = seed + static_cast<std::uint64_t>(p.rep);
    const std::vector<std::string> c{p.family, coord(p.gain), coord(p.rank), coord(p.rep)};
    static const char* kMetrics[] = {"temporal_pr", "temporal_r95", "spatial_pr", "spatial_r95"};
    try {
      auto task = student_teacher(st);
      auto s = task.student.forward(task.batch);
      auto v = reduced_views(task.student, s);
      auto t = spectrum(v.temporal), sp = spectrum(v.spatial);
      parts[i].add(c, st.seed, kMetrics[0], t.effective_rank_pr);
      parts[i].add(c, st.seed, kMetrics[1], static_cast<double>(t.effective_rank_95));
      parts[i].add(c, st.seed, kMetrics[2], sp.effective_rank_pr);
      parts[i].add(c, st.seed, kMetrics[3], static_cast<double>(sp.effective_rank_95));
    } catch (const ForwardError&) {
      for (const char* m : kMetrics) parts[i].add_censored(c, st.seed, m);
    }
  });

  RunOutput out;
  out.experiment = "rank-regimes";
  out.seed = seed;
  out.config = cfg.to_json();
  ResultTable t(cols);
  for (const auto& p : parts) t.append(p);

  // Ordinal checks on the participation-ratio rank, worst case over replicates.
  double rho_min = 1.0, spatial_drop = 0.0, interior = 0.0;
  const bool has_g1 = std::count(cfg.gains.begin(), cfg.gains.end(), 1.0) > 0;
  const bool has_g3 = std::count(cfg.gains.begin(), cfg.gains.end(), 3.0) > 0;
  for (Index r = 0; r < cfg.replicates; ++r) {
    const std::string rep = coord(r);
    std::vector<double> ranks, temporal;
    for (Index k : cfg.input_ranks) {
      auto v = t.values("temporal_pr", {{"family", "in"}, {"input_rank", coord(k)}, {"replicate", rep}});
      if (v.size() != 1) continue;  // censored
      ranks.push_back(static_cast<double>(k));
      temporal.push_back(v.front());
    }
    rho_min = std::min(rho_min, ranks.size() >= 2 ? spearman(ranks, temporal) : -1.0);
    if (has_g1 && has_g3) {
      auto s1 = t.values("spatial_pr", {{"family", "rec"}, {"gain", coord(1.0)}, {"replicate", rep}});
      auto s3 = t.values("spatial_pr", {{"family", "rec"}, {"gain", coord(3.0)}, {"replicate", rep}});
      spatial_drop += s1.size() == 1 && s3.size() == 1 && s3.front() < s1.front();
    }
    std::vector<double> tg;
    for (double g : cfg.gains) {
      auto v = t.values("temporal_pr", {{"family", "rec"}, {"gain", coord(g)}, {"replicate", rep}});
      if (v.size() == 1) tg.push_back(v.front());
    }
    interior += interior_maximum(tg);
  }
  const double reps = static_cast<double>(cfg.replicates);
  out.checks.push_back({"temporal_rank_vs_input_rank_spearman_min", rho_min, cfg.thresholds.spearman_min, false});
  out.checks.push_back({"spatial_rank_g3_below_g1_replicates", spatial_drop, reps, false});
  out.checks.push_back({"temporal_rank_interior_max_in_gain_replicates", interior, reps, false});
  out.tables.emplace("ranks", std::move(t));
  return out;
}

}  // namespace gsntk

#endif  // GSNTK_EXP_RANK_REGIMES_HPP
