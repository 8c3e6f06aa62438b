#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "nmfg/admm.hpp"
#include "nmfg/factormer.hpp"
#include "nmfg/models.hpp"
#include "nmfg/rng.hpp"

namespace nmfg {

struct TrainConfig {
  ModelKind model_kind = ModelKind::kInit;
  int epochs = 15;
  double lr0 = 1e-4;  // 1e-5 for the acceleration model, see defaults()
  double epoch_decay = 0.9;
  double gamma = 0.2;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int curriculum_period = 2;  // epochs per acceleration-step increment
  int max_acc_steps = 5;
  double grad_clip = 0.0;  // global-norm bound, 0 = off

  static TrainConfig defaults(ModelKind kind) {
    TrainConfig c;
    c.model_kind = kind;
    c.lr0 = kind == ModelKind::kAccel ? 1e-5 : 1e-4;
    return c;
  }

  void validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
    if (!(epoch_decay > 0.0 && epoch_decay <= 1.0)) {
      throw std::invalid_argument("TrainConfig: epoch_decay must be in (0, 1]");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
      throw std::invalid_argument("TrainConfig: gamma must be in (0, 1]");
    }
    if (epochs < 1 || curriculum_period < 1 || max_acc_steps < 0) {
      throw std::invalid_argument("TrainConfig: bad counts");
    }
  }
};

/// AdamW accumulators, one slot per parameter tensor in canonical order.
struct OptimizerState {
  std::vector<DenseMatrix> m;
  std::vector<DenseMatrix> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState like(const std::vector<DenseMatrix*>& params) {
    OptimizerState s;
    for (const DenseMatrix* p : params) {
      s.m.emplace_back(p->rows(), p->cols());
      s.v.emplace_back(p->rows(), p->cols());
    }
    return s;
  }
};

/// Discounted unrolled loss: sum_{k=0..T} gamma^k * loss_frob at iterate T-k.
/// The most recent iterate carries weight 1.
inline double discounted_loss(const Trajectory& traj, const DenseMatrix& v,
                              double gamma) {
  const int t_last = traj.iterations();
  double total = 0.0, weight = 1.0;
  for (int k = 0; k <= t_last; ++k) {
    const auto& p = traj.points[static_cast<std::size_t>(t_last - k)];
    total += weight * loss_frob(p.w, p.h, v);
    weight *= gamma;
  }
  return total;
}

/// Tape form of the discounted loss over model iterates.
inline TensorRef discounted_loss_tape(Tape& t,
                                      const std::vector<FactorPairRef>& iterates,
                                      TensorRef v, double gamma) {
  const int t_last = static_cast<int>(iterates.size()) - 1;
  TensorRef total{};
  double weight = 1.0;
  for (int k = 0; k <= t_last; ++k) {
    const FactorPairRef& it = iterates[static_cast<std::size_t>(t_last - k)];
    const TensorRef r = t.subtract(t.matmul(it.w, t.transpose(it.h)), v);
    const TensorRef l = t.scale(t.sum(t.multiply(r, r)), 0.5 * weight);
    total = k == 0 ? l : t.add(total, l);
    weight *= gamma;
  }
  return total;
}

/// Decoupled weight-decay Adam update:
/// theta -= lr * mhat / (sqrt(vhat) + eps) + lr * weight_decay * theta.
inline void adamw_step(const std::vector<DenseMatrix*>& params,
                       const std::vector<DenseMatrix>& grads, OptimizerState& st,
                       double lr, double weight_decay) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw std::invalid_argument("adamw_step: parameter/gradient count mismatch");
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseMatrix& theta = *params[i];
    const DenseMatrix& g = grads[i];
    if (!theta.same_shape(g)) {
      throw std::invalid_argument("adamw_step: gradient shape mismatch at slot " +
                                  std::to_string(i));
    }
    DenseMatrix& m = st.m[i];
    DenseMatrix& v = st.v[i];
    for (std::size_t e = 0; e < theta.size(); ++e) {
      const double ge = g.values()[e];
      m.values()[e] = st.beta1 * m.values()[e] + (1.0 - st.beta1) * ge;
      v.values()[e] = st.beta2 * v.values()[e] + (1.0 - st.beta2) * ge * ge;
      const double mhat = m.values()[e] / bc1;
      const double vhat = v.values()[e] / bc2;
      theta.values()[e] -= lr * mhat / (std::sqrt(vhat) + st.eps) +
                           lr * weight_decay * theta.values()[e];
    }
  }
}

/// Cosine annealing restarted at every epoch boundary, annealed to zero over
/// the full epoch, with the per-epoch ceiling decayed geometrically.
inline double lr_schedule(int epoch, int step_in_epoch, int steps_per_epoch,
                          const TrainConfig& cfg) {
  if (epoch < 0 || step_in_epoch < 0 || step_in_epoch > steps_per_epoch ||
      steps_per_epoch < 1) {
    throw std::invalid_argument("lr_schedule: indices out of range");
  }
  const double ceiling = cfg.lr0 * std::pow(cfg.epoch_decay, epoch);
  const double phase = M_PI * static_cast<double>(step_in_epoch) /
                       static_cast<double>(steps_per_epoch);
  return ceiling * 0.5 * (1.0 + std::cos(phase));
}

/// Acceleration-step curriculum: one step for the first period, then one
/// more every period, capped.
inline int curriculum_nbr_acc(int epoch, const TrainConfig& cfg, int outer_iters) {
  const int steps = 1 + epoch / cfg.curriculum_period;
  return std::min(std::min(steps, cfg.max_acc_steps), outer_iters);
}

struct TrainItem {
  std::string id;
  DenseMatrix v;
  DenseMatrix w0, h0;  // cached NNDSVD start
};

inline std::vector<TrainItem> prepare_items(const std::vector<DenseMatrix>& vs,
                                            int rank,
                                            const std::vector<std::string>* ids =
                                                nullptr) {
  std::vector<TrainItem> items;
  items.reserve(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    auto [w0, h0] = nndsvd_init(vs[i], rank);
    items.push_back({ids ? (*ids)[i] : "matrix_" + std::to_string(i), vs[i],
                     std::move(w0), std::move(h0)});
  }
  return items;
}

struct TrainLogRow {
  int epoch;
  int step;
  double lr;
  double loss;
  int nbr_acc;
};

struct EpochSummary {
  int epoch;
  double mean_train_loss;
  double val_rmse;  // NaN when no validation set was given
};

struct TrainResult {
  NFactormerParams params;
  std::vector<TrainLogRow> log;
  std::vector<EpochSummary> epochs;
};

/// Batch-size-one training loop: shuffle per epoch (reseeded from the master
/// seed), forward the configured model, discounted loss, backward, AdamW with
/// the cosine schedule. Deterministic for a fixed (seed, dataset, config).
inline TrainResult train(
    const std::vector<TrainItem>& data, const std::vector<TrainItem>* val,
    NFactormerParams params, const ModelConfig& mcfg, const TrainConfig& tcfg,
    const std::function<void(int, const NFactormerParams&)>& epoch_hook = {}) {
  tcfg.validate();
  mcfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");

  std::vector<DenseMatrix*> param_ptrs;
  for_each_param(params, [&](const std::string&, DenseMatrix& m) {
    param_ptrs.push_back(&m);
  });
  OptimizerState opt = OptimizerState::like(param_ptrs);

  TrainResult result;
  const int steps_per_epoch = static_cast<int>(data.size());
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(tcfg.seed + 0x9E3779B97F4A7C15ULL * (epoch + 1));
    shuffle_rng.shuffle(order);

    const int nbr_acc = tcfg.model_kind == ModelKind::kAccel
                            ? curriculum_nbr_acc(epoch, tcfg, mcfg.outer_iters)
                            : 0;
    double loss_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const TrainItem& item = data[static_cast<std::size_t>(order[step])];
      const double lr = lr_schedule(epoch, step, steps_per_epoch, tcfg);

      Tape tape;
      const StagedNF staged = stage_params(tape, params, /*requires_grad=*/true);
      const TensorRef v_ref = tape.constant(item.v);
      UnrolledForward fwd;
      try {
        fwd = tcfg.model_kind == ModelKind::kAccel
                  ? learned_accel_forward(tape, tape.constant(item.w0),
                                          tape.constant(item.h0), v_ref, staged,
                                          mcfg, nbr_acc)
                  : learned_init_forward(tape, tape.constant(item.w0),
                                         tape.constant(item.h0), v_ref, staged,
                                         mcfg);
      } catch (const NumericalError& e) {
        throw NumericalError("train: " + std::string(e.what()) + " at epoch " +
                             std::to_string(epoch) + " step " +
                             std::to_string(step) + " on " + item.id);
      }
      const TensorRef loss_ref =
          discounted_loss_tape(tape, fwd.iterates, v_ref, tcfg.gamma);
      const double loss = tape.value(loss_ref)(0, 0);
      if (!std::isfinite(loss)) {
        throw NumericalError("train: non-finite loss at epoch " +
                             std::to_string(epoch) + " step " +
                             std::to_string(step) + " on " + item.id);
      }
      tape.backward(loss_ref);

      std::vector<DenseMatrix> grads;
      grads.reserve(staged.flat.size());
      for (const TensorRef ref : staged.flat) grads.push_back(tape.grad(ref));
      if (tcfg.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const DenseMatrix& g : grads) norm_sq += frob_norm_sq(g);
        const double norm = std::sqrt(norm_sq);
        if (norm > tcfg.grad_clip) {
          const double s = tcfg.grad_clip / norm;
          for (DenseMatrix& g : grads)
            for (double& x : g.values()) x *= s;
        }
      }
      adamw_step(param_ptrs, grads, opt, lr, tcfg.weight_decay);

      loss_sum += loss;
      result.log.push_back({epoch, step, lr, loss, nbr_acc});
    }

    double val_rmse = std::numeric_limits<double>::quiet_NaN();
    if (val && !val->empty()) {
      double acc = 0.0;
      for (const TrainItem& item : *val) {
        const Trajectory traj =
            tcfg.model_kind == ModelKind::kAccel
                ? learned_accel(item.w0, item.h0, item.v, params, mcfg, nbr_acc)
                : learned_init(item.w0, item.h0, item.v, params, mcfg);
        acc += traj.back().rmse;
      }
      val_rmse = acc / static_cast<double>(val->size());
    }
    result.epochs.push_back({epoch, loss_sum / steps_per_epoch, val_rmse});
    if (epoch_hook) epoch_hook(epoch, params);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace nmfg
