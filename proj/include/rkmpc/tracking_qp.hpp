#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rkmpc/angles.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/qp.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

// Residual-correction bounds (dv, ddelta limits of the residual QP).
struct ResidualBox {
  double dv_min = -0.5;
  double dv_max = 0.5;
  double ddelta_min = -0.1;
  double ddelta_max = 0.1;

  bool valid() const { return dv_min <= dv_max && ddelta_min <= ddelta_max; }
};

struct MpcConfig {
  int horizon = 25;              // N
  double w_position = 1.0;       // position weight, 1 in the nominal objective
  double w_heading = 1.0;        // lambda
  double w_speed = 0.5;          // mu
  double w_steer = 1.0;          // epsilon
  double soft_bound_weight = 0.0;  // 0 disables soft state bounds
  double soft_xy_bound = std::numeric_limits<double>::infinity();
  double soft_theta_bound = std::numeric_limits<double>::infinity();
  double steer_rate_weight = 0.0;  // optional smoothness term, off by default
  ResidualBox residual_box;
  double qp_tol = 1e-8;
  int qp_max_iter = 2000;
  int soft_max_passes = 3;

  bool valid() const {
    return horizon >= 1 && w_position >= 0.0 && w_heading >= 0.0 &&
           w_speed >= 0.0 && w_steer >= 0.0 && soft_bound_weight >= 0.0 &&
           steer_rate_weight >= 0.0 && residual_box.valid() && qp_tol > 0.0 &&
           qp_max_iter >= 1;
  }
};

struct TrackingQpResult {
  QPSolution solution;   // stacked inputs, length 2 * N_eff
  ControlInput first;    // first input of the optimal sequence
  int soft_passes = 0;
  bool objective_flat = false;  // cost has no curvature beyond regularization
};

namespace detail {

// Adds w * sum_k (delta_k - delta_{k-1})^2 over the stacked input vector,
// with delta_{-1} = prev_steer when given.
inline void add_steer_rate_penalty(BoxQP& qp, int N, double w,
                                   const double* prev_steer) {
  if (w <= 0.0) return;
  auto idx = [](int k) { return 2 * k + 1; };
  for (int k = 1; k < N; ++k) {
    qp.H(idx(k), idx(k)) += 2.0 * w;
    qp.H(idx(k - 1), idx(k - 1)) += 2.0 * w;
    qp.H(idx(k), idx(k - 1)) -= 2.0 * w;
    qp.H(idx(k - 1), idx(k)) -= 2.0 * w;
  }
  if (prev_steer != nullptr) {
    qp.H(idx(0), idx(0)) += 2.0 * w;
    qp.f(idx(0)) -= 2.0 * w * (*prev_steer);
    qp.constant += w * (*prev_steer) * (*prev_steer);
  }
}

}  // namespace detail

// Deviation-form tracking QP over an explicit reference window.
// window[0] anchors the deviation state; window[1..count-1] are the tracked
// stages; stage k is linearized about window[k] and penalizes u_k against
// window[k]'s feedforward input. Decision variables are absolute inputs.
inline TrackingQpResult solve_tracking_window(
    const VehicleState& state, const ReferencePoint* window, int count,
    const MpcConfig& cfg, const VehicleParams& params,
    const Eigen::VectorXd* warm = nullptr,
    const double* prev_steer = nullptr) {
  if (count < 2) {
    throw DimensionMismatch("solve_tracking_window: need anchor + >= 1 stage");
  }
  const int N = count - 1;

  Eigen::VectorXd xi0(3);
  xi0 << state.x - window[0].x, state.y - window[0].y,
      angle_diff(state.theta, window[0].theta);

  std::vector<StageModel> stages(static_cast<std::size_t>(N));
  TrackingCost cost;
  cost.C = Eigen::MatrixXd::Identity(3, 3);
  cost.w_y.resize(3);
  cost.w_y << cfg.w_position, cfg.w_position, cfg.w_heading;
  cost.y_ref = Eigen::MatrixXd::Zero(3, N);
  cost.w_u.resize(2);
  cost.w_u << cfg.w_speed, cfg.w_steer;
  cost.u_ref.resize(2, N);
  cost.u_lb.resize(2);
  cost.u_lb << params.v_min, params.delta_min;
  cost.u_ub.resize(2);
  cost.u_ub << params.v_max, params.delta_max;

  for (int k = 0; k < N; ++k) {
    const LinearizedModel lin = linearize_kinematic(window[k], params);
    Eigen::Vector2d u_ref(window[k].v, window[k].delta);
    stages[static_cast<std::size_t>(k)] = {lin.A, lin.B, -lin.B * u_ref};
    cost.u_ref.col(k) = u_ref;
  }

  Condensed cond = condense(stages, xi0, cost);
  detail::add_steer_rate_penalty(cond.qp, N, cfg.steer_rate_weight, prev_steer);

  SoftBounds soft;
  if (cfg.soft_bound_weight > 0.0) {
    Eigen::VectorXd lb(3), ub(3);
    lb << -cfg.soft_xy_bound, -cfg.soft_xy_bound, -cfg.soft_theta_bound;
    ub << cfg.soft_xy_bound, cfg.soft_xy_bound, cfg.soft_theta_bound;
    soft = SoftBounds::uniform(lb, ub, cfg.soft_bound_weight, N);
  }

  const SoftSolveResult res = solve_with_soft_bounds(
      cond, soft, warm, cfg.qp_tol, cfg.qp_max_iter, cfg.soft_max_passes);

  TrackingQpResult out;
  out.solution = res.solution;
  out.soft_passes = res.passes;
  out.first = clamp_to_box({res.solution.z(0), res.solution.z(1)}, params);
  out.objective_flat = cond.qp.H.cwiseAbs().maxCoeff() <= 1e-8;
  return out;
}

// Shifts a stacked input solution one stage forward for warm starting,
// duplicating the terminal stage.
inline Eigen::VectorXd shift_warm_start(const Eigen::VectorXd& z, int m = 2) {
  if (z.size() < m) return z;
  Eigen::VectorXd out(z.size());
  out.head(z.size() - m) = z.tail(z.size() - m);
  out.tail(m) = z.tail(m);
  return out;
}

}  // namespace rkmpc
