#ifndef GSNTK_EXP_MEMORY_PRO_EXP_HPP
#define GSNTK_EXP_MEMORY_PRO_EXP_HPP

// GRU on Memory-Pro from two initializations. Network 1 is Xavier; network 2
// replaces the candidate-gate recurrent block with ntfp_weights. Two runners:
//   core-alignment: NTK vs weight-site core along SGD training,
//   selfref:        target-mode learning under SGD and kfp.

#include "../models/gru.hpp"
#include "../ntk.hpp"
#include "../tasks/memory_pro.hpp"
#include "../tasks/ntfp.hpp"
#include "../tasks/targets.hpp"
#include "../tasks/train.hpp"
#include "results.hpp"
#include "sweep.hpp"

#include <Eigen/Eigenvalues>

namespace gsntk {

struct MemoryProSetup {
  MemoryProConfig task;  // task.seed is ignored; trial angles come from the run seed
  Index n_h = 24;
  double gain = 1.0;
  struct {
    Index points = 5;
    double scale = 2.0;
    double gain = 1.0;
  } net2;

  MemoryProSetup() { task.noise_var = 0.1; }

  static MemoryProSetup from(Section s) {
    MemoryProSetup c;
    auto t = s.sub("task");
    c.task.n_x = t.get("n_x", c.task.n_x);
    c.task.stimulus = t.get("stimulus", c.task.stimulus);
    c.task.memory = t.get("memory", c.task.memory);
    c.task.response = t.get("response", c.task.response);
    c.task.noise_var = t.get("noise_var", c.task.noise_var);
    t.finish();
    c.n_h = s.get("n_h", c.n_h);
    c.gain = s.get("gain", c.gain);
    auto n = s.sub("network2");
    c.net2.points = n.get("points", c.net2.points);
    c.net2.scale = n.get("scale", c.net2.scale);
    c.net2.gain = n.get("gain", c.net2.gain);
    n.finish();
    c.validate();
    return c;
  }

  Json to_json() const {
    return {{"task",
             {{"n_x", task.n_x},
              {"stimulus", task.stimulus},
              {"memory", task.memory},
              {"response", task.response},
              {"noise_var", task.noise_var}}},
            {"n_h", n_h},
            {"gain", gain},
            {"network2", {{"points", net2.points}, {"scale", net2.scale}, {"gain", net2.gain}}}};
  }

  void validate() const {
    try {
      task.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("memory-pro task: ") + e.what());
    }
    if (n_h < 1) throw ConfigError("memory-pro: n_h must be positive");
    if (net2.points < 0 || net2.points > n_h) throw ConfigError("memory-pro: network2 points must lie in [0, n_h]");
  }
};

/// Network 1 (which = 1) or network 2 (which = 2) for one seed.
inline Gru memory_pro_network(const MemoryProSetup& su, int which, std::uint64_t seed) {
  if (which != 1 && which != 2) throw std::invalid_argument("memory_pro_network: network must be 1 or 2");
  Rng rng = make_rng(seed, kInit);
  Gru g = Gru::xavier(3, su.n_h, 3, su.gain, rng);
  if (which == 2) {
    Rng r2 = make_rng(seed, kInit, 7);
    // Rows [2n, 3n) of the recurrent weights feed the candidate state.
    g.params["rec"].bottomRows(su.n_h) =
        ntfp_weights(su.n_h, coordinate_points(su.n_h, su.net2.points, su.net2.scale), su.net2.gain, r2);
  }
  return g;
}

/// Noise-free evaluation batch; its target defines the modes.
inline TaskBatch memory_pro_eval(const MemoryProSetup& su, std::uint64_t seed) {
  MemoryProConfig c = su.task;
  c.seed = seed;
  c.noise_var = 0.0;
  return memory_pro_batch(c);
}

/// Training batch at iteration `it`: the evaluation trials with fresh input noise.
inline TaskBatch memory_pro_train_batch(const MemoryProSetup& su, std::uint64_t seed, Index it) {
  MemoryProConfig angles = su.task;
  angles.seed = seed;
  MemoryProConfig c = su.task;
  c.seed = derive_seed(seed, kSweep, static_cast<std::uint64_t>(it));
  return memory_pro_batch(c, memory_pro_angles(angles));
}

/// Clusters of the autonomous (zero-input) GRU endpoints from random starts.
inline Index gru_fixed_point_count(const Gru& g, Index starts, Index steps, double tol, std::uint64_t seed) {
  const Index n = g.params["rec"].cols();
  Matrix h0 = gaussian_matrix(n, starts, seed, kSweep).array().tanh().matrix();
  auto b = TaskBatch::from_inputs(starts, steps, RowMatrix::Zero(starts * steps, g.params["in"].cols()));
  auto s = g.forward(b, &h0);
  Matrix ends(n, starts);
  for (Index j = 0; j < starts; ++j) ends.col(j) = s.h.col(j * steps + steps - 1);
  return cluster_count(ends, tol);
}

namespace detail {

inline SpectrumSummary spectrum_of(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  const Vector& e = es.eigenvalues();
  return summarize_spectrum(std::vector<double>(e.data(), e.data() + e.size()));
}

inline TrainConfig train_from(Section s, TrainConfig c) {
  c.optimizer = parse_optimizer(s.get("optimizer", std::string(c.optimizer == Optimizer::sgd ? "sgd" : "kfp")));
  c.lr = s.get("lr", c.lr);
  c.iterations = s.get("iterations", c.iterations);
  c.damping = s.get("damping", c.damping);
  c.mask_response = s.get("mask_response", c.mask_response);
  c.log_every = s.get("log_every", c.log_every);
  s.finish();
  if (!(c.lr > 0.0) || c.iterations < 0 || c.log_every < 1 || !(c.damping > 0.0))
    throw ConfigError("training: need lr > 0, iterations >= 0, log_every >= 1, damping > 0");
  return c;
}

inline Json train_json(const TrainConfig& c) {
  return {{"optimizer", c.optimizer == Optimizer::sgd ? "sgd" : "kfp"},
          {"lr", c.lr},
          {"iterations", c.iterations},
          {"damping", c.damping},
          {"mask_response", c.mask_response},
          {"log_every", c.log_every}};
}

inline TrainConfig default_sgd() {
  TrainConfig c;
  c.lr = 0.05;
  c.iterations = 1500;
  c.log_every = 50;
  return c;
}

inline TrainConfig default_kfp() {
  TrainConfig c = default_sgd();
  c.optimizer = Optimizer::kfp;
  c.lr = 0.01;
  return c;
}

/// NTK-target alignment of the temporal view with each target mode.
inline std::vector<double> ntk_mode_alignment(const Matrix& temporal, const TargetModes& modes, Index count) {
  std::vector<double> a;
  for (Index m = 0; m < std::min(count, modes.U.cols()); ++m) a.push_back(ntk_target_alignment(temporal, modes.U.col(m)));
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------- selfref

struct SelfrefConfig {
  MemoryProSetup setup;
  TrainConfig sgd = detail::default_sgd();
  TrainConfig kfp = detail::default_kfp();
  Index replicates = 3;
  Index ntk_every = 500;  // NTK alignment snapshots; 0 = initialization only
  struct {
    Index starts = 50;
    Index steps = 500;
    double tol = 0.05;
  } fixed_points;
  struct {
    double net1_mode3_max = 0.2;
    double net1_mode1_min = 0.8;
    double net2_modes_min = 0.5;
    double init_net1_ratio_max = 0.1;
    double init_net2_over_net1_min = 10.0;
  } thresholds;

  static SelfrefConfig from(Section s) {
    SelfrefConfig c;
    c.setup = MemoryProSetup::from(s.sub("setup"));
    c.sgd = detail::train_from(s.sub("sgd"), c.sgd);
    c.kfp = detail::train_from(s.sub("kfp"), c.kfp);
    c.replicates = s.get("replicates", c.replicates);
    c.ntk_every = s.get("ntk_every", c.ntk_every);
    auto f = s.sub("fixed_points");
    c.fixed_points.starts = f.get("starts", c.fixed_points.starts);
    c.fixed_points.steps = f.get("steps", c.fixed_points.steps);
    c.fixed_points.tol = f.get("tol", c.fixed_points.tol);
    f.finish();
    auto t = s.sub("thresholds");
    c.thresholds.net1_mode3_max = t.get("net1_mode3_max", c.thresholds.net1_mode3_max);
    c.thresholds.net1_mode1_min = t.get("net1_mode1_min", c.thresholds.net1_mode1_min);
    c.thresholds.net2_modes_min = t.get("net2_modes_min", c.thresholds.net2_modes_min);
    c.thresholds.init_net1_ratio_max = t.get("init_net1_ratio_max", c.thresholds.init_net1_ratio_max);
    c.thresholds.init_net2_over_net1_min = t.get("init_net2_over_net1_min", c.thresholds.init_net2_over_net1_min);
    t.finish();
    s.finish();
    if (c.replicates < 1 || c.ntk_every < 0) throw ConfigError("selfref: need replicates >= 1 and ntk_every >= 0");
    if (c.sgd.optimizer != Optimizer::sgd || c.kfp.optimizer != Optimizer::kfp)
      throw ConfigError("selfref: the sgd and kfp sections must use their own optimizer");
    if (c.sgd.iterations != c.kfp.iterations) throw ConfigError("selfref: sgd and kfp budgets must match");
    return c;
  }

  Json to_json() const {
    return {{"setup", setup.to_json()},
            {"sgd", detail::train_json(sgd)},
            {"kfp", detail::train_json(kfp)},
            {"replicates", replicates},
            {"ntk_every", ntk_every},
            {"fixed_points", {{"starts", fixed_points.starts}, {"steps", fixed_points.steps}, {"tol", fixed_points.tol}}},
            {"thresholds",
             {{"net1_mode3_max", thresholds.net1_mode3_max},
              {"net1_mode1_min", thresholds.net1_mode1_min},
              {"net2_modes_min", thresholds.net2_modes_min},
              {"init_net1_ratio_max", thresholds.init_net1_ratio_max},
              {"init_net2_over_net1_min", thresholds.init_net2_over_net1_min}}}};
  }
};

inline RunOutput run_selfref(const SelfrefConfig& cfg, std::uint64_t seed, int workers = 0) {
  cfg.setup.validate();
  struct Job {
    int network;
    const TrainConfig* train;
    std::string optimizer;
    Index rep;
  };
  std::vector<Job> jobs;
  for (Index r = 0; r < cfg.replicates; ++r) {
    jobs.push_back({1, &cfg.sgd, "sgd", r});
    jobs.push_back({2, &cfg.sgd, "sgd", r});
    jobs.push_back({1, &cfg.kfp, "kfp", r});
  }
  const std::vector<std::string> cols{"network", "optimizer", "replicate", "iteration"};
  std::vector<ResultTable> train_parts(jobs.size(), ResultTable(cols)), ntk_parts(jobs.size(), ResultTable(cols));
  std::vector<ResultTable> fp_parts(jobs.size(), ResultTable({"network", "replicate"}));

  parallel_for(static_cast<Index>(jobs.size()), workers, [&](Index i) {
    const auto& jb = jobs[i];
    const std::uint64_t rs = seed + static_cast<std::uint64_t>(jb.rep);
    Gru g = memory_pro_network(cfg.setup, jb.network, rs);
    const TaskBatch eval = memory_pro_eval(cfg.setup, rs);
    const TargetModes modes = target_modes(eval.y);
    const std::string net = "net" + std::to_string(jb.network), rep = coord(jb.rep);
    if (jb.optimizer == "sgd")
      fp_parts[i].add({net, rep}, rs, "fixed_point_clusters",
                      static_cast<double>(gru_fixed_point_count(g, cfg.fixed_points.starts, cfg.fixed_points.steps,
                                                                cfg.fixed_points.tol, derive_seed(rs, kSweep, 99))));
    auto snapshot = [&](Index it) {
      auto v = reduced_views(g, g.forward(eval));
      auto a = detail::ntk_mode_alignment(v.temporal, modes, 3);
      for (std::size_t m = 0; m < a.size(); ++m)
        ntk_parts[i].add({net, jb.optimizer, rep, coord(it)}, rs, "ntk_align_mode" + std::to_string(m + 1), a[m]);
    };
    TrainHooks hooks;
    hooks.eval = &eval;
    hooks.on_log = [&](Index it) {
      if (it == 0 || (cfg.ntk_every > 0 && it % cfg.ntk_every == 0) || it == jb.train->iterations) snapshot(it);
    };
    auto log = train(g, std::function<TaskBatch(Index)>([&](Index it) { return memory_pro_train_batch(cfg.setup, rs, it); }),
                     *jb.train, hooks);
    for (std::size_t k = 0; k < log.iteration.size(); ++k) {
      const std::vector<std::string> c{net, jb.optimizer, rep, coord(log.iteration[k])};
      train_parts[i].add(c, rs, "loss", log.loss[k]);
      for (std::size_t m = 0; m < log.mode_alignment[k].size(); ++m)
        train_parts[i].add(c, rs, "align_mode" + std::to_string(m + 1), log.mode_alignment[k][m]);
    }
  });

  RunOutput out;
  out.experiment = "selfref";
  out.seed = seed;
  out.config = cfg.to_json();
  ResultTable tr(cols), nt(cols), fp({"network", "replicate"});
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    tr.append(train_parts[i]);
    nt.append(ntk_parts[i]);
    fp.append(fp_parts[i]);
  }

  // Checks. Worst case over replicates except the init NTK ratio, which
  // compares replicate-mean alignments (per-replicate ratios are in the table).
  const std::string last = coord(cfg.sgd.iterations);
  double net1_ratio_max = 0.0, a3_net1 = 0.0, a3_net2 = 0.0, loss_order = 0.0, mode3_max = 0.0;
  double mode1_min = std::numeric_limits<double>::infinity(), net2_min = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < cfg.replicates; ++r) {
    const std::string rep = coord(r);
    auto ntk = [&](const char* net, int m) {
      return nt.value("ntk_align_mode" + std::to_string(m),
                      {{"network", net}, {"optimizer", "sgd"}, {"replicate", rep}, {"iteration", "0"}});
    };
    net1_ratio_max = std::max(net1_ratio_max, ntk("net1", 3) / ntk("net1", 1));
    a3_net1 += ntk("net1", 3);
    a3_net2 += ntk("net2", 3);
    auto fin = [&](const char* net, const std::string& metric) {
      return tr.value(metric, {{"network", net}, {"optimizer", "sgd"}, {"replicate", rep}, {"iteration", last}});
    };
    loss_order += fin("net2", "loss") < fin("net1", "loss");
    for (double v : tr.values("align_mode3", {{"network", "net1"}, {"optimizer", "sgd"}, {"replicate", rep}}))
      mode3_max = std::max(mode3_max, v);
    mode1_min = std::min(mode1_min, fin("net1", "align_mode1"));
    for (int m = 1; m <= 3; ++m) net2_min = std::min(net2_min, fin("net2", "align_mode" + std::to_string(m)));
  }
  const double reps = static_cast<double>(cfg.replicates);
  const auto& th = cfg.thresholds;
  out.checks.push_back({"init_net1_ntk_mode3_over_mode1_max", net1_ratio_max, th.init_net1_ratio_max, true});
  out.checks.push_back({"init_net2_over_net1_ntk_mode3_mean", a3_net2 / a3_net1, th.init_net2_over_net1_min, false});
  out.checks.push_back({"final_loss_net2_below_net1_replicates", loss_order, reps, false});
  out.checks.push_back({"net1_sgd_mode3_alignment_max", mode3_max, th.net1_mode3_max, true});
  out.checks.push_back({"net1_sgd_final_mode1_alignment_min", mode1_min, th.net1_mode1_min, false});
  out.checks.push_back({"net2_sgd_final_mode_alignment_min", net2_min, th.net2_modes_min, false});
  out.tables.emplace("training", std::move(tr));
  out.tables.emplace("ntk_alignment", std::move(nt));
  out.tables.emplace("fixed_points", std::move(fp));
  return out;
}

// --------------------------------------------------------- core-alignment

struct CoreAlignmentConfig {
  MemoryProSetup setup;
  TrainConfig train = detail::default_sgd();
  std::vector<Index> checkpoints{0, 500, 1000, 1500};
  std::vector<Index> networks{1, 2};
  Index export_modes = 3;
  ProbeConfig probes{32, 32, 0};
  struct {
    double response_energy_max = 0.05;
    Index core_modes_95_max = 6;
  } thresholds;

  static CoreAlignmentConfig from(Section s) {
    CoreAlignmentConfig c;
    c.setup = MemoryProSetup::from(s.sub("setup"));
    c.train = detail::train_from(s.sub("train"), c.train);
    c.checkpoints = s.get("checkpoints", c.checkpoints);
    c.networks = s.get("networks", c.networks);
    c.export_modes = s.get("export_modes", c.export_modes);
    auto p = s.sub("probes");
    c.probes.sketch_size = p.get("sketch_size", c.probes.sketch_size);
    c.probes.residual_probes = p.get("residual_probes", c.probes.residual_probes);
    p.finish();
    auto t = s.sub("thresholds");
    c.thresholds.response_energy_max = t.get("response_energy_max", c.thresholds.response_energy_max);
    c.thresholds.core_modes_95_max = t.get("core_modes_95_max", c.thresholds.core_modes_95_max);
    t.finish();
    s.finish();
    c.validate();
    return c;
  }

  Json to_json() const {
    return {{"setup", setup.to_json()},
            {"train", detail::train_json(train)},
            {"checkpoints", checkpoints},
            {"networks", networks},
            {"export_modes", export_modes},
            {"probes", {{"sketch_size", probes.sketch_size}, {"residual_probes", probes.residual_probes}}},
            {"thresholds",
             {{"response_energy_max", thresholds.response_energy_max},
              {"core_modes_95_max", thresholds.core_modes_95_max}}}};
  }

  void validate() const {
    setup.validate();
    if (checkpoints.empty() || checkpoints.front() != 0 || !std::is_sorted(checkpoints.begin(), checkpoints.end()) ||
        checkpoints.back() > train.iterations)
      throw ConfigError("core-alignment: checkpoints must start at 0, ascend, and stay within the budget");
    for (Index n : networks)
      if (n != 1 && n != 2) throw ConfigError("core-alignment: networks must be 1 or 2");
    if (std::find(networks.begin(), networks.end(), 1) == networks.end())
      throw ConfigError("core-alignment: network 1 is required");
    try {
      probes.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("core-alignment: ") + e.what());
    }
  }
};

/// Diagnostics of one GRU state on the evaluation batch.
struct CoreSnapshot {
  Matrix ntk_temporal, core_temporal, p_temporal;
  double ntk_norm = 0.0;  // ‖NTK_S‖_F, probe estimate
  double cos_core = 0.0, cos_baseline = 0.0, cos_core_probe = 0.0;
};

/// cos(NTK_S, G ⊗ I_n) = √n tr(G T) / (‖NTK_S‖ ‖G‖), T the temporal view of NTK_S.
inline double kron_identity_cosine(const Matrix& temporal, const Matrix& g, Index n, double ntk_norm) {
  return std::sqrt(static_cast<double>(n)) * (g.cwiseProduct(temporal)).sum() / (ntk_norm * g.norm());
}

inline CoreSnapshot core_snapshot(const Gru& g, const TaskBatch& eval, const ProbeConfig& probes,
                                  std::uint64_t baseline_seed) {
  auto s = g.forward(eval);
  const Index n = s.n_h;
  CoreSnapshot c;
  c.ntk_temporal = reduced_views(g, s).temporal;
  auto bundle = global_ntk(g, s);
  c.core_temporal = bundle.sites.gram();
  c.p_temporal = factor_views(bundle.P).temporal;
  c.ntk_norm = frobenius_norm(bundle.ntk, probes);
  c.cos_core = kron_identity_cosine(c.ntk_temporal, c.core_temporal, n, c.ntk_norm);
  // Random PSD baseline with the core's trace and column count.
  Matrix r = gaussian_matrix(c.core_temporal.rows(), bundle.sites.V.cols(), baseline_seed, kSweep);
  Matrix b = r * r.transpose();
  b *= c.core_temporal.trace() / b.trace();
  c.cos_baseline = kron_identity_cosine(c.ntk_temporal, b, n, c.ntk_norm);
  // Fully matrix-free route for the same cosine.
  auto g_kron = tensor_product_like(core_temporal(bundle.sites, s.n_x, s.n_t), identity(n), bundle.ntk);
  c.cos_core_probe = op_cosine(bundle.ntk, g_kron, probes);
  return c;
}

inline RunOutput run_core_alignment(const CoreAlignmentConfig& cfg, std::uint64_t seed, int workers = 0) {
  cfg.validate();
  const std::vector<std::string> cols{"network", "iteration"};
  const std::vector<std::string> ccols{"network", "iteration", "operator", "index"};
  const std::vector<std::string> mcols{"network", "iteration", "mode", "j", "t"};
  const Index nnet = static_cast<Index>(cfg.networks.size());
  std::vector<ResultTable> parts(nnet, ResultTable(cols)), curves(nnet, ResultTable(ccols)),
      modes(nnet, ResultTable(mcols));
  const Index response_start = cfg.setup.task.stimulus + cfg.setup.task.memory;

  parallel_for(nnet, workers, [&](Index i) {
    const int which = static_cast<int>(cfg.networks[i]);
    const std::string net = "net" + std::to_string(which);
    Gru g = memory_pro_network(cfg.setup, which, seed);
    const TaskBatch eval = memory_pro_eval(cfg.setup, seed);
    const TargetModes tm = target_modes(eval.y);
    auto record = [&](Index it) {
      if (!std::binary_search(cfg.checkpoints.begin(), cfg.checkpoints.end(), it)) return;
      ProbeConfig pc = cfg.probes;
      pc.seed = derive_seed(seed, kProbeVectors, static_cast<std::uint64_t>(it));
      auto snap = core_snapshot(g, eval, pc, derive_seed(seed, kSweep, static_cast<std::uint64_t>(1000 + it)));
      const std::vector<std::string> c{net, coord(it)};
      auto& t = parts[i];
      t.add(c, seed, "cos_ntk_core", snap.cos_core);
      t.add(c, seed, "cos_ntk_baseline", snap.cos_baseline);
      t.add(c, seed, "cos_ntk_core_probe", snap.cos_core_probe);
      t.add(c, seed, "ntk_norm", snap.ntk_norm);
      auto a = detail::ntk_mode_alignment(snap.ntk_temporal, tm, 3);
      for (std::size_t m = 0; m < a.size(); ++m) t.add(c, seed, "ntk_align_mode" + std::to_string(m + 1), a[m]);

      const std::pair<const char*, const Matrix*> ops[] = {
          {"ntk", &snap.ntk_temporal}, {"core", &snap.core_temporal}, {"propagator", &snap.p_temporal}};
      for (const auto& [name, mat] : ops) {
        auto sp = detail::spectrum_of(*mat);
        t.add(c, seed, std::string(name) + "_modes_95", static_cast<double>(sp.effective_rank_95));
        t.add(c, seed, std::string(name) + "_pr", sp.effective_rank_pr);
        for (std::size_t k = 0; k < sp.cumulative_variance.size(); ++k)
          curves[i].add({net, coord(it), name, coord(static_cast<Index>(k + 1))}, seed, "cumulative_variance",
                        sp.cumulative_variance[k]);
      }

      Eigen::SelfAdjointEigenSolver<Matrix> es(snap.ntk_temporal);
      const Index k = es.eigenvalues().size(), nt = eval.n_t;
      for (Index m = 0; m < std::min(cfg.export_modes, k); ++m) {
        Vector u = es.eigenvectors().col(k - 1 - m);
        Index arg;
        u.cwiseAbs().maxCoeff(&arg);
        if (u(arg) < 0) u = -u;
        double resp = 0.0;
        for (Index j = 0; j < eval.n_x; ++j) {
          resp += u.segment(j * nt + response_start, nt - response_start).squaredNorm();
          for (Index tt = 0; tt < nt; ++tt)
            modes[i].add({net, coord(it), coord(m + 1), coord(j), coord(tt)}, seed, "ntk_mode", u(j * nt + tt));
        }
        t.add(c, seed, "ntk_mode" + std::to_string(m + 1) + "_response_energy", resp / u.squaredNorm());
      }
    };
    TrainHooks hooks;
    hooks.eval = &eval;
    hooks.on_log = record;
    TrainConfig tc = cfg.train;
    tc.log_every = 1;  // checkpoints are filtered in `record`
    auto log = train(g, std::function<TaskBatch(Index)>([&](Index it) { return memory_pro_train_batch(cfg.setup, seed, it); }),
                     tc, hooks);
    for (std::size_t k = 0; k < log.iteration.size(); ++k) {
      if (!std::binary_search(cfg.checkpoints.begin(), cfg.checkpoints.end(), log.iteration[k])) continue;
      parts[i].add({net, coord(log.iteration[k])}, seed, "loss", log.loss[k]);
    }
  });

  RunOutput out;
  out.experiment = "core-alignment";
  out.seed = seed;
  out.config = cfg.to_json();
  ResultTable t(cols), cv(ccols), md(mcols);
  for (Index i = 0; i < nnet; ++i) {
    t.append(parts[i]);
    cv.append(curves[i]);
    md.append(modes[i]);
  }
  double below = 0.0;
  for (Index n : cfg.networks)
    for (Index it : cfg.checkpoints) {
      const std::map<std::string, std::string> w{{"network", "net" + std::to_string(n)}, {"iteration", coord(it)}};
      below += !(t.value("cos_ntk_core", w) > t.value("cos_ntk_baseline", w));
    }
  const std::map<std::string, std::string> init{{"network", "net1"}, {"iteration", "0"}};
  out.checks.push_back({"cos_core_not_above_baseline_checkpoints", below, 0.0, true});
  out.checks.push_back({"net1_init_ntk_mode1_response_energy", t.value("ntk_mode1_response_energy", init),
                        cfg.thresholds.response_energy_max, true});
  out.checks.push_back({"net1_init_core_modes_95", t.value("core_modes_95", init),
                        static_cast<double>(cfg.thresholds.core_modes_95_max), true});
  out.tables.emplace("alignment", std::move(t));
  out.tables.emplace("cumulative_variance", std::move(cv));
  out.tables.emplace("modes", std::move(md));
  return out;
}

}  // namespace gsntk

#endif  // GSNTK_EXP_MEMORY_PRO_EXP_HPP
