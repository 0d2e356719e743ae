#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rkmpc/angles.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/lifting.hpp"
#include "rkmpc/tracking_qp.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

struct DriveRecord {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v_cmd = 0.0;
  double delta_cmd = 0.0;
};

struct DriveLog {
  std::vector<DriveRecord> records;
  double period = 0.05;

  // Strictly increasing timestamps at the sampling period within 1%.
  void validate() const {
    for (std::size_t i = 1; i < records.size(); ++i) {
      const double dt = records[i].t - records[i - 1].t;
      if (!(dt > 0.0) || std::abs(dt - period) > 0.01 * period) {
        throw InvalidArgument(
            "DriveLog: timestamp spacing " + std::to_string(dt) +
            " at record " + std::to_string(i) + " violates period " +
            std::to_string(period) + " +-1%");
      }
    }
    for (const auto& r : records) {
      if (!std::isfinite(r.x) || !std::isfinite(r.y) ||
          !std::isfinite(r.theta) || !std::isfinite(r.v_cmd) ||
          !std::isfinite(r.delta_cmd) || !std::isfinite(r.t)) {
        throw InvalidArgument("DriveLog: non-finite record");
      }
    }
  }
};

struct PreprocessConfig {
  double conversion_ratio = 0.3;
  int window = 51;  // N_p, records per origin frame
  std::uint64_t seed = 0;
  double inversion_threshold = 0.05;

  bool valid() const {
    return conversion_ratio > 0.0 && conversion_ratio <= 1.0 && window >= 2;
  }
};

struct ResidualSample {
  VehicleState state;       // origin-frame state x_t
  VehicleState next;        // origin-frame state x_{t+1}
  Eigen::Vector2d du;       // residual input (dv, ddelta), or the absolute
                            // command when built for the baseline variant
};

struct PreprocessStats {
  std::size_t log_records = 0;
  std::size_t origins_requested = 0;  // floor(ratio * N)
  std::size_t origins_used = 0;
  std::size_t window_skips = 0;       // origins too close to the log end
  std::size_t inversion_failures = 0; // transitions the nominal model can't explain
  std::size_t samples = 0;
  std::size_t count_origins_times_window = 0;  // origins_used * (N_p - 1)
  std::size_t count_n_times_np = 0;            // N * N_p, the alternative formula
};

struct StateInputRecord {
  VehicleState state;
  ControlInput input;
};

// Expresses each record in the frame anchored at `origin`: translate by
// (-x0, -y0), rotate by -theta0, wrap headings. Inputs pass through.
inline std::vector<StateInputRecord> transform_to_local(
    const VehicleState& origin, std::span<const StateInputRecord> records) {
  std::vector<StateInputRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({pose_to_local(origin, r.state), r.input});
  }
  return out;
}

// Best (v, delta) in the actuator box explaining the transition under the
// nominal kinematic model: analytic initialization from the displacement and
// heading change, then projected Gauss-Newton on the one-step residual.
inline ControlInput recover_executed_input(const VehicleState& local_state,
                                           const VehicleState& local_next,
                                           const VehicleParams& params,
                                           double residual_threshold = 0.05) {
  const double T = params.sampling_period;
  const double L = params.wheelbase;

  const double c = std::cos(local_state.theta);
  const double s = std::sin(local_state.theta);
  const double dx = local_next.x - local_state.x;
  const double dy = local_next.y - local_state.y;
  const double forward = c * dx + s * dy;
  const double dist = std::hypot(dx, dy);
  const double dtheta = angle_diff(local_next.theta, local_state.theta);

  if (dist < 1e-12 && std::abs(dtheta) < 1e-12) return {0.0, 0.0};

  ControlInput u;
  u.v = (forward >= 0.0 ? dist : -dist) / T;
  u.delta = std::abs(u.v) > 1e-9 ? std::atan(L * dtheta / (u.v * T)) : 0.0;
  u = clamp_to_box(u, params);

  auto residual = [&](const ControlInput& w) {
    const VehicleState p = step_kinematic(local_state, w, params);
    return Eigen::Vector3d(p.x - local_next.x, p.y - local_next.y,
                           angle_diff(p.theta, local_next.theta));
  };

  Eigen::Vector3d r = residual(u);
  ControlInput best = u;
  double best_norm = r.norm();
  const double h = 1e-6;
  for (int it = 0; it < 8 && best_norm > 1e-12; ++it) {
    Eigen::Matrix<double, 3, 2> J;
    J.col(0) = (residual({u.v + h, u.delta}) - residual({u.v - h, u.delta})) /
               (2.0 * h);
    J.col(1) = (residual({u.v, u.delta + h}) - residual({u.v, u.delta - h})) /
               (2.0 * h);
    const Eigen::Vector2d step = J.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) break;
    u = clamp_to_box({u.v + step.x(), u.delta + step.y()}, params);
    r = residual(u);
    if (r.norm() < best_norm) {
      best_norm = r.norm();
      best = u;
    }
  }
  if (best_norm > residual_threshold) {
    throw InversionFailure(
        "recover_executed_input: best residual " + std::to_string(best_norm) +
        " exceeds threshold " + std::to_string(residual_threshold));
  }
  return best;
}

// Preprocesses a drive log into residual training samples: seeded origin
// selection, local-frame windows of N_p records, and per-pair inputs
// du = Ur - Up (or the logged absolute command when absolute_inputs is set).
// Up is the first input of the nominal tracking QP solved at the pair's local
// state against the window's own records as the reference segment.
inline std::vector<ResidualSample> build_residual_dataset(
    const DriveLog& log, const VehicleParams& params, const MpcConfig& lmpc_cfg,
    const PreprocessConfig& pp, PreprocessStats* stats_out = nullptr,
    bool absolute_inputs = false) {
  if (!pp.valid()) throw InvalidArgument("build_residual_dataset: bad config");
  log.validate();
  const std::size_t n = log.records.size();
  const std::size_t np = static_cast<std::size_t>(pp.window);
  if (n < np + 1) {
    throw InsufficientData("build_residual_dataset: log of " +
                           std::to_string(n) + " records shorter than N_p+1");
  }

  PreprocessStats stats;
  stats.log_records = n;
  stats.origins_requested =
      static_cast<std::size_t>(std::floor(pp.conversion_ratio *
                                          static_cast<double>(n)));
  stats.count_n_times_np = n * np;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(pp.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> origins(idx.begin(),
                                   idx.begin() + static_cast<long>(std::min(
                                                     stats.origins_requested, n)));
  std::sort(origins.begin(), origins.end());

  std::vector<ResidualSample> samples;
  samples.reserve(origins.size() * (np - 1));
  for (const std::size_t o : origins) {
    if (o + np > n) {
      ++stats.window_skips;
      continue;
    }
    ++stats.origins_used;

    std::vector<StateInputRecord> window(np);
    for (std::size_t i = 0; i < np; ++i) {
      const DriveRecord& r = log.records[o + i];
      window[i] = {{r.x, r.y, r.theta}, {r.v_cmd, r.delta_cmd}};
    }
    const std::vector<StateInputRecord> local =
        transform_to_local(window[0].state, window);

    std::vector<ReferencePoint> refw(np);
    for (std::size_t i = 0; i < np; ++i) {
      refw[i] = {local[i].state.x, local[i].state.y, local[i].state.theta,
                 local[i].input.v, local[i].input.delta};
    }

    Eigen::VectorXd warm;
    for (std::size_t j = 0; j + 1 < np; ++j) {
      ResidualSample sample;
      sample.state = local[j].state;
      sample.next = local[j + 1].state;
      if (absolute_inputs) {
        sample.du = {local[j].input.v, local[j].input.delta};
      } else {
        ControlInput ur;
        try {
          ur = recover_executed_input(local[j].state, local[j + 1].state,
                                      params, pp.inversion_threshold);
        } catch (const InversionFailure&) {
          ++stats.inversion_failures;
          warm.resize(0);
          continue;
        }
        const int h_eff =
            std::min<int>(lmpc_cfg.horizon, static_cast<int>(np - 1 - j));
        const TrackingQpResult up = solve_tracking_window(
            local[j].state, refw.data() + j, h_eff + 1, lmpc_cfg, params,
            warm.size() > 0 ? &warm : nullptr);
        warm = shift_warm_start(up.solution.z);
        sample.du = {ur.v - up.first.v, ur.delta - up.first.delta};
      }
      samples.push_back(sample);
    }
  }

  stats.count_origins_times_window = stats.origins_used * (np - 1);
  stats.samples = samples.size();
  if (stats_out != nullptr) *stats_out = stats;
  return samples;
}

struct EdmdFit {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double objective = 0.0;  // squared Frobenius one-step error of the fit
};

// Least-squares Koopman fit: minimizes ||Z1 - A Z0 - B U||_F^2 over (A, B)
// through the pseudo-inverse of the stacked regressors [Z0; U], computed by
// SVD with singular values below 1e-10 * sigma_max treated as zero
// (minimum-norm solution on rank deficiency).
inline EdmdFit fit_edmd(const Eigen::MatrixXd& Z0, const Eigen::MatrixXd& Z1,
                        const Eigen::MatrixXd& U) {
  const Eigen::Index d = Z0.rows();
  const Eigen::Index m = U.rows();
  const Eigen::Index K = Z0.cols();
  if (Z1.rows() != d || Z1.cols() != K || U.cols() != K) {
    throw DimensionMismatch("fit_edmd: inconsistent sample dimensions");
  }
  if (K < d + 2) {
    throw InsufficientData("fit_edmd: " + std::to_string(K) +
                           " samples for lifted dimension " +
                           std::to_string(d));
  }
  Eigen::MatrixXd G(d + m, K);
  G.topRows(d) = Z0;
  G.bottomRows(m) = U;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(G.transpose(),
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-10);
  const Eigen::MatrixXd M = svd.solve(Z1.transpose()).transpose();

  EdmdFit fit;
  fit.A = M.leftCols(d);
  fit.B = M.rightCols(m);
  fit.objective = (M * G - Z1).squaredNorm();
  return fit;
}

struct OutputMapFit {
  Eigen::MatrixXd C;
  double residual = 0.0;  // Frobenius norm of X - C Z
};

// With the stacked lifting z = [x; psi(x)] the output map is the exact
// selection [I3 0]; the residual verifies that construction on the data.
inline OutputMapFit fit_output_map(const Eigen::MatrixXd& X,
                                   const Eigen::MatrixXd& Z) {
  if (X.rows() != 3 || Z.cols() != X.cols() || Z.rows() < 3) {
    throw DimensionMismatch("fit_output_map: need 3-row states and matching z");
  }
  OutputMapFit fit;
  fit.C = Eigen::MatrixXd::Zero(3, Z.rows());
  fit.C.leftCols(3) = Eigen::Matrix3d::Identity();
  fit.residual = (X - fit.C * Z).norm();
  return fit;
}

// Pseudo-Huber wrapper applied to the scalar mean absolute error.
inline double huber_cost(double l_a, double delta_huber) {
  if (l_a < 0.0 || delta_huber <= 0.0) {
    throw InvalidArgument("huber_cost: requires l_a >= 0 and delta > 0");
  }
  const double r = l_a / delta_huber;
  return delta_huber * delta_huber * (std::sqrt(1.0 + r * r) - 1.0);
}

struct TrainConfig {
  double delta_huber = 1.0;
  int epochs = 200;
  int batch = 256;
  double learning_rate = 1e-3;
  int refit_every = 1;  // epochs between (A, B) refits
  int n_lift = 16;
  int hidden = 64;
  std::uint64_t seed = 0;
  bool lifted_only_loss = false;  // restrict the loss to the psi block

  bool valid() const {
    return delta_huber > 0.0 && epochs >= 0 && batch >= 1 &&
           learning_rate > 0.0 && refit_every >= 1 && n_lift >= 1 &&
           hidden >= 1;
  }
};

struct TrainMetadata {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::size_t sample_count = 0;
  bool diverged = false;
  double output_map_residual = 0.0;
  double edmd_objective = 0.0;
  std::string input_mode = "residual";  // or "absolute"
  std::vector<double> loss_history;
};

struct KoopmanResidualModel {
  Eigen::MatrixXd A;  // (3+n_lift) x (3+n_lift)
  Eigen::MatrixXd B;  // (3+n_lift) x 2
  Eigen::MatrixXd C;  // 3 x (3+n_lift) selection
  LiftingNetwork net;
  TrainMetadata meta;

  int lift_dim() const { return net.out(); }
  int state_dim() const { return 3 + net.out(); }

  Eigen::VectorXd lift_state(const VehicleState& s) const {
    return lift(net, s);
  }
};

namespace detail {

struct LossTerms {
  double loss = 0.0;
  double l_a = 0.0;
};

inline LossTerms full_loss(const Eigen::MatrixXd& Z0, const Eigen::MatrixXd& Z1,
                           const Eigen::MatrixXd& U, const Eigen::MatrixXd& A,
                           const Eigen::MatrixXd& B, double delta_huber,
                           bool lifted_only) {
  Eigen::MatrixXd E = Z1 - A * Z0 - B * U;
  if (lifted_only) E = E.bottomRows(E.rows() - 3).eval();
  LossTerms t;
  t.l_a = E.cwiseAbs().sum() /
          (static_cast<double>(E.rows()) * static_cast<double>(E.cols()));
  t.loss = huber_cost(t.l_a, delta_huber);
  return t;
}

// Pseudo-Huber one-step loss of a batch under frozen (A, B), with exact
// gradients wrt the network weights accumulated into grads. The loss sees
// psi at both endpoints: directly at x_{t+1} and through -A at x_t.
inline double lifted_loss_gradient(const LiftingNetwork& net,
                                   const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B,
                                   const Eigen::Matrix3Xd& X0,
                                   const Eigen::Matrix3Xd& X1,
                                   const Eigen::MatrixXd& U,
                                   double delta_huber, bool lifted_only,
                                   NetGradients& grads) {
  const int n = net.out();
  const int b = static_cast<int>(X0.cols());
  Eigen::MatrixXd pre0, act0, pre1, act1;
  const Eigen::MatrixXd psi0 = net_forward(net, X0, &pre0, &act0);
  const Eigen::MatrixXd psi1 = net_forward(net, X1, &pre1, &act1);
  Eigen::MatrixXd Z0(3 + n, b), Z1(3 + n, b);
  Z0.topRows(3) = X0;
  Z0.bottomRows(n) = psi0;
  Z1.topRows(3) = X1;
  Z1.bottomRows(n) = psi1;

  Eigen::MatrixXd E = Z1 - A * Z0 - B * U;
  if (lifted_only) E = E.bottomRows(n).eval();
  const double denom =
      static_cast<double>(E.rows()) * static_cast<double>(b);
  const double l_a = E.cwiseAbs().sum() / denom;
  const double r = l_a / delta_huber;
  const double dl_dla = l_a / std::sqrt(1.0 + r * r);
  const Eigen::MatrixXd g_e = E.array().sign().matrix() * (dl_dla / denom);

  Eigen::MatrixXd g_psi1, g_psi0;
  if (lifted_only) {
    g_psi1 = g_e;
    g_psi0 = (-A.bottomRows(n).transpose() * g_e).bottomRows(n);
  } else {
    g_psi1 = g_e.bottomRows(n);
    g_psi0 = (-A.transpose() * g_e).bottomRows(n);
  }
  net_backprop(net, X1, pre1, act1, g_psi1, grads);
  net_backprop(net, X0, pre0, act0, g_psi0, grads);
  return huber_cost(l_a, delta_huber);
}

}  // namespace detail

// Alternating EDMD / network training. Per epoch: refit (A, B) on the full
// lifted dataset at the configured cadence, then one pass of mini-batch SGD
// on the network against the pseudo-Huber one-step loss. Returns the
// best-loss checkpoint; a non-finite loss aborts with the last finite one.
inline KoopmanResidualModel train_lifting(
    const std::vector<ResidualSample>& samples, const TrainConfig& cfg) {
  if (!cfg.valid()) throw InvalidArgument("train_lifting: bad config");
  if (samples.size() < 100) {
    throw InsufficientData("train_lifting: need >= 100 samples, got " +
                           std::to_string(samples.size()));
  }
  const int K = static_cast<int>(samples.size());
  Eigen::Matrix3Xd X0(3, K), X1(3, K);
  Eigen::MatrixXd U(2, K);
  for (int k = 0; k < K; ++k) {
    X0.col(k) << samples[k].state.x, samples[k].state.y, samples[k].state.theta;
    X1.col(k) << samples[k].next.x, samples[k].next.y, samples[k].next.theta;
    U.col(k) = samples[k].du;
  }

  KoopmanResidualModel model;
  model.net = make_lifting_network(cfg.n_lift, cfg.hidden, cfg.seed);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  EdmdFit fit;
  auto refit = [&]() {
    fit = fit_edmd(lift_batch(model.net, X0), lift_batch(model.net, X1), U);
  };
  auto evaluate = [&]() {
    return detail::full_loss(lift_batch(model.net, X0),
                             lift_batch(model.net, X1), U, fit.A, fit.B,
                             cfg.delta_huber, cfg.lifted_only_loss);
  };

  refit();
  detail::LossTerms cur = evaluate();
  model.meta.initial_loss = cur.loss;
  model.meta.loss_history.push_back(cur.loss);

  struct Checkpoint {
    LiftingNetwork net;
    Eigen::MatrixXd A, B;
    double loss;
    double edmd_objective;
    int epoch;
  } best{model.net, fit.A, fit.B, cur.loss, fit.objective, 0};

  std::vector<int> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if ((epoch - 1) % cfg.refit_every == 0) refit();
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    for (int start = 0; start < K; start += cfg.batch) {
      const int b = std::min(cfg.batch, K - start);
      Eigen::Matrix3Xd Xb0(3, b), Xb1(3, b);
      Eigen::MatrixXd Ub(2, b);
      for (int i = 0; i < b; ++i) {
        Xb0.col(i) = X0.col(perm[static_cast<std::size_t>(start + i)]);
        Xb1.col(i) = X1.col(perm[static_cast<std::size_t>(start + i)]);
        Ub.col(i) = U.col(perm[static_cast<std::size_t>(start + i)]);
      }
      NetGradients grads;
      grads.set_zero(model.net);
      detail::lifted_loss_gradient(model.net, fit.A, fit.B, Xb0, Xb1, Ub,
                                   cfg.delta_huber, cfg.lifted_only_loss,
                                   grads);
      model.net.W1 -= cfg.learning_rate * grads.W1;
      model.net.b1 -= cfg.learning_rate * grads.b1;
      model.net.W2 -= cfg.learning_rate * grads.W2;
      model.net.b2 -= cfg.learning_rate * grads.b2;
    }

    cur = evaluate();
    model.meta.epochs_run = epoch;
    if (!std::isfinite(cur.loss)) {
      model.meta.diverged = true;
      break;
    }
    model.meta.loss_history.push_back(cur.loss);
    if (cur.loss < best.loss) {
      best = {model.net, fit.A, fit.B, cur.loss, fit.objective, epoch};
    }
  }

  // Complete the alternation for the restored network: a closing EDMD refit
  // makes (A, B) the exact least-squares operator for the returned lifting,
  // so the model's raw-state rows can never fit worse than a no-lift fit of
  // the same data.
  model.net = best.net;
  refit();
  model.A = fit.A;
  model.B = fit.B;
  cur = evaluate();
  model.meta.final_loss = cur.loss;
  model.meta.best_epoch = best.epoch;
  model.meta.edmd_objective = fit.objective;
  model.meta.sample_count = samples.size();

  const OutputMapFit cfit = fit_output_map(X0, lift_batch(model.net, X0));
  model.C = cfit.C;
  model.meta.output_map_residual = cfit.residual;
  return model;
}

}  // namespace rkmpc
