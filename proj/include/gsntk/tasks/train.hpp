#ifndef GSNTK_TASKS_TRAIN_HPP
#define GSNTK_TASKS_TRAIN_HPP

// Full-batch training of recurrent models on MSE, with plain SGD or a
// Kronecker-factored preconditioner (kfp): per weight matrix,
// ΔW = -η (L + λI)^{-1/4} G (R + λI)^{-1/4}, L = Σ G Gᵀ, R = Σ GᵀG.

#include "../ntk.hpp"
#include "memory_pro.hpp"
#include "targets.hpp"

#include <Eigen/Eigenvalues>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gsntk {

enum class Optimizer { sgd, kfp };

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "kfp") return Optimizer::kfp;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or kfp)");
}

struct TrainConfig {
  Optimizer optimizer = Optimizer::sgd;
  double lr = 1e-2;
  Index iterations = 100;
  double damping = 1e-4;
  bool mask_response = false;
  Index log_every = 1;
  double diverge_loss = 1e6;
};

struct TrainLog {
  std::vector<Index> iteration;
  std::vector<double> loss;
  std::vector<std::vector<double>> mode_alignment;  // per logged iteration, one per target mode

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainLog log) : Error(what), log(std::move(log)) {}
  TrainLog log;
};

/// Mean squared error over the weighted rows and all outputs.
struct Mse {
  double loss = 0.0;
  RowMatrix grad;  // dL/dY, k x n_out
};

inline Mse mse(const RowMatrix& y, const RowMatrix& target, const Vector* row_weight = nullptr) {
  if (y.rows() != target.rows() || y.cols() != target.cols()) throw ShapeError("mse: output/target shape mismatch");
  RowMatrix diff = y - target;
  double rows = static_cast<double>(y.rows());
  if (row_weight) {
    if (row_weight->size() != y.rows()) throw ShapeError("mse: row weight size mismatch");
    diff = row_weight->asDiagonal() * diff;
    rows = row_weight->sum();
    if (rows <= 0.0) throw std::invalid_argument("mse: all rows masked");
  }
  const double n = rows * static_cast<double>(y.cols());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

/// Loss and per-family gradients at the current parameters.
template <class M>
std::pair<double, ParamDirection> loss_and_gradient(const M& model, const TaskBatch& batch,
                                                    const Vector* row_weight = nullptr) {
  auto s = model.forward(batch);
  auto e = mse(model.outputs(s), batch.y, row_weight);
  ParamDirection g;
  // Y = (W_out H)ᵀ: dL/dH = W_outᵀ (dL/dY)ᵀ per site.
  Matrix err_sites = model.params["out"].transpose() * e.grad.transpose();
  if (model.num_params() > 0) {
    Vector err = Eigen::Map<const Vector>(err_sites.data(), err_sites.size());
    Matrix adj = propagator(model, s).rmatvec(err);
    Vector flat = model.vjp_params(s, adj);
    g = direction_from_flat(model.params, M::kDynamics, flat);
  }
  if (model.params.trainable("out")) g["out"] = e.grad.transpose() * s.h.transpose();
  return {e.loss, std::move(g)};
}

namespace detail {

inline Matrix inv_fourth_root(const Matrix& a, double damping) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  Vector d = (es.eigenvalues().array().max(0.0) + damping).pow(-0.25).matrix();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Second-moment factors per weight matrix.
class KfpState {
 public:
  explicit KfpState(double damping) : damping_(damping) {
    if (!(damping > 0.0)) throw std::invalid_argument("kfp damping must be positive");
  }

  Matrix precondition(const std::string& family, const Matrix& g) {
    auto& f = factors_[family];
    if (f.first.size() == 0) {
      f.first = Matrix::Zero(g.rows(), g.rows());
      f.second = Matrix::Zero(g.cols(), g.cols());
    }
    f.first += g * g.transpose();
    f.second += g.transpose() * g;
    return detail::inv_fourth_root(f.first, damping_) * g * detail::inv_fourth_root(f.second, damping_);
  }

 private:
  double damping_;
  std::map<std::string, std::pair<Matrix, Matrix>> factors_;
};

struct TrainHooks {
  /// Evaluation batch for mode alignments (noise-free); modes are taken from its target.
  const TaskBatch* eval = nullptr;
  Index modes = 3;
  /// Called before the update at every logged iteration and after the last one.
  std::function<void(Index)> on_log;
};

/// Trains in place. `batch_at(i)` supplies the batch for iteration i.
template <class M>
TrainLog train(M& model, const std::function<TaskBatch(Index)>& batch_at, const TrainConfig& cfg,
               const TrainHooks& hooks = {}) {
  if (cfg.iterations < 0 || cfg.log_every < 1) throw std::invalid_argument("train: bad iteration settings");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  TrainLog log;
  std::optional<TargetModes> modes;
  if (hooks.eval) modes = target_modes(hooks.eval->y);
  KfpState kfp(cfg.damping);
  auto record = [&](Index it, double loss) {
    log.iteration.push_back(it);
    log.loss.push_back(loss);
    std::vector<double> al;
    if (modes) {
      RowMatrix out = model.outputs(model.forward(*hooks.eval));
      for (Index m = 0; m < std::min<Index>(hooks.modes, modes->U.cols()); ++m)
        al.push_back(mode_alignment(out, hooks.eval->y, modes->U.col(m)));
    }
    log.mode_alignment.push_back(std::move(al));
    if (hooks.on_log) hooks.on_log(it);
  };
  for (Index it = 0; it <= cfg.iterations; ++it) {
    TaskBatch b = batch_at(it);
    std::optional<Vector> w;
    if (cfg.mask_response) w = response_mask(b);
    double loss;
    ParamDirection g;
    try {
      std::tie(loss, g) = loss_and_gradient(model, b, w ? &*w : nullptr);
    } catch (const ForwardError& e) {
      throw TrainingDiverged(std::string("training diverged: ") + e.what(), log);
    }
    if (!std::isfinite(loss) || loss > cfg.diverge_loss)
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + ", loss " + std::to_string(loss),
                             log);
    if (it % cfg.log_every == 0 || it == cfg.iterations) record(it, loss);
    if (it == cfg.iterations) break;
    for (auto& [fam, gm] : g) {
      Matrix step = cfg.optimizer == Optimizer::kfp ? kfp.precondition(fam, gm) : gm;
      model.params[fam] -= cfg.lr * step;
    }
  }
  return log;
}

template <class M>
TrainLog train(M& model, const TaskBatch& batch, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  return train(model, std::function<TaskBatch(Index)>([&](Index) { return batch; }), cfg, hooks);
}

}  // namespace gsntk

#endif  // GSNTK_TASKS_TRAIN_HPP
