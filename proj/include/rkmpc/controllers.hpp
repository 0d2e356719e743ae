#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rkmpc/angles.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/koopman.hpp"
#include "rkmpc/qp.hpp"
#include "rkmpc/track.hpp"
#include "rkmpc/tracking_qp.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

struct QpDiagnostics {
  int iterations = 0;
  bool converged = true;
  double kkt_residual = 0.0;
  double objective = 0.0;
  int soft_passes = 0;
  bool objective_flat = false;
  bool fallback_to_baseline = false;
  bool clamped = false;  // final command hit the actuator box after summation
};

struct ControllerOutput {
  ControlInput final_input;
  ControlInput baseline;   // U0
  ControlInput residual;   // (dv, ddelta); zero for non-residual controllers
  double solve_seconds = 0.0;
  long ref_index = 0;  // reference anchor index used this step
  QpDiagnostics diag;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControllerOutput step(const VehicleState& state) = 0;
  virtual void reset() = 0;
  virtual const std::string& name() const = 0;
};

namespace detail {

class StepTimer {
 public:
  StepTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

// Linear MPC on the time-varying kinematic linearization, deviation form.
// The reference window anchors at the projection index on the first step and
// advances one point per period afterwards.
class LmpcController : public Controller {
 public:
  LmpcController(const ReferenceTrajectory& ref, const MpcConfig& cfg,
                 const VehicleParams& params)
      : ref_(&ref), cfg_(cfg), params_(params) {
    if (!cfg.valid() || !params.valid()) {
      throw InvalidArgument("LmpcController: invalid configuration");
    }
  }

  ControllerOutput step(const VehicleState& state) override {
    const detail::StepTimer timer;
    if (anchor_ < 0) anchor_ = static_cast<long>(project(state, *ref_).index);

    const int N = cfg_.horizon;
    std::vector<ReferencePoint> window(static_cast<std::size_t>(N) + 1);
    for (int i = 0; i <= N; ++i) window[static_cast<std::size_t>(i)] = ref_->at(anchor_ + i);

    const TrackingQpResult res = solve_tracking_window(
        state, window.data(), N + 1, cfg_, params_,
        warm_.size() > 0 ? &warm_ : nullptr,
        have_prev_ ? &prev_steer_ : nullptr);
    warm_ = shift_warm_start(res.solution.z);
    prev_steer_ = res.first.delta;
    have_prev_ = true;

    ControllerOutput out;
    out.final_input = res.first;
    out.baseline = res.first;
    out.residual = {0.0, 0.0};
    out.ref_index = anchor_;
    out.diag.iterations = res.solution.iterations;
    out.diag.converged = res.solution.converged;
    out.diag.kkt_residual = res.solution.kkt_residual;
    out.diag.objective = res.solution.objective;
    out.diag.soft_passes = res.soft_passes;
    out.diag.objective_flat = res.objective_flat;
    out.solve_seconds = timer.seconds();
    anchor_ += 1;
    return out;
  }

  void reset() override {
    anchor_ = -1;
    warm_.resize(0);
    have_prev_ = false;
  }

  const std::string& name() const override { return name_; }

 private:
  const ReferenceTrajectory* ref_;
  MpcConfig cfg_;
  VehicleParams params_;
  long anchor_ = -1;
  Eigen::VectorXd warm_;
  double prev_steer_ = 0.0;
  bool have_prev_ = false;
  std::string name_ = "lmpc";
};

namespace detail {

// Shared machinery of the lifted-model QPs: constant stage model, local-frame
// reference window, condensed tracking cost.
struct LiftedQpSetup {
  std::vector<StageModel> stages;
  Eigen::MatrixXd S;  // cached output sensitivity (constant stages)

  void build(const KoopmanResidualModel& model, int N) {
    stages.assign(static_cast<std::size_t>(N),
                  {model.A, model.B, Eigen::VectorXd()});
    S = output_sensitivity(stages, model.C);
  }
};

}  // namespace detail

// Koopman MPC baseline: lifted LTI model with absolute inputs, cost expressed
// through C z against the reference window in the current pose's local frame.
class KmpcController : public Controller {
 public:
  KmpcController(const ReferenceTrajectory& ref,
                 const KoopmanResidualModel& model, const MpcConfig& cfg,
                 const VehicleParams& params)
      : ref_(&ref), model_(&model), cfg_(cfg), params_(params) {
    if (!cfg.valid() || !params.valid()) {
      throw InvalidArgument("KmpcController: invalid configuration");
    }
    setup_.build(model, cfg.horizon);
    z_origin_ = model.lift_state({0.0, 0.0, 0.0});
  }

  ControllerOutput step(const VehicleState& state) override {
    const detail::StepTimer timer;
    if (anchor_ < 0) anchor_ = static_cast<long>(project(state, *ref_).index);
    const int N = cfg_.horizon;

    TrackingCost cost;
    cost.C = model_->C;
    cost.w_y.resize(3);
    cost.w_y << cfg_.w_position, cfg_.w_position, cfg_.w_heading;
    cost.y_ref.resize(3, N);
    cost.w_u.resize(2);
    cost.w_u << cfg_.w_speed, cfg_.w_steer;
    cost.u_ref.resize(2, N);
    cost.u_lb.resize(2);
    cost.u_lb << params_.v_min, params_.delta_min;
    cost.u_ub.resize(2);
    cost.u_ub << params_.v_max, params_.delta_max;
    for (int k = 0; k < N; ++k) {
      const ReferencePoint rn = ref_->at(anchor_ + k + 1);
      const VehicleState local = pose_to_local(state, {rn.x, rn.y, rn.theta});
      cost.y_ref.col(k) << local.x, local.y, local.theta;
      const ReferencePoint rk = ref_->at(anchor_ + k);
      cost.u_ref.col(k) << rk.v, rk.delta;
    }

    Condensed cond;
    cond.N = N;
    cond.m = 2;
    cond.ny = 3;
    cond.S = setup_.S;
    cond.s = output_rollout(setup_.stages, model_->C, z_origin_);
    cond.qp = assemble_tracking_qp(cond.S, cond.s, cost);
    detail::add_steer_rate_penalty(cond.qp, N, cfg_.steer_rate_weight,
                                   have_prev_ ? &prev_steer_ : nullptr);

    SoftBounds soft;
    if (cfg_.soft_bound_weight > 0.0) {
      Eigen::VectorXd span(3);
      span << cfg_.soft_xy_bound, cfg_.soft_xy_bound, cfg_.soft_theta_bound;
      soft.weight = cfg_.soft_bound_weight;
      soft.y_lb = cost.y_ref - span.replicate(1, N);
      soft.y_ub = cost.y_ref + span.replicate(1, N);
    }
    const SoftSolveResult res = solve_with_soft_bounds(
        cond, soft, warm_.size() > 0 ? &warm_ : nullptr, cfg_.qp_tol,
        cfg_.qp_max_iter, cfg_.soft_max_passes);
    warm_ = shift_warm_start(res.solution.z);

    ControllerOutput out;
    out.final_input = clamp_to_box(
        {res.solution.z(0), res.solution.z(1)}, params_);
    out.baseline = out.final_input;
    out.residual = {0.0, 0.0};
    out.ref_index = anchor_;
    out.diag.iterations = res.solution.iterations;
    out.diag.converged = res.solution.converged;
    out.diag.kkt_residual = res.solution.kkt_residual;
    out.diag.objective = res.solution.objective;
    out.diag.soft_passes = res.passes;
    out.diag.objective_flat = cond.qp.H.cwiseAbs().maxCoeff() <= 1e-8;
    out.solve_seconds = timer.seconds();
    prev_steer_ = out.final_input.delta;
    have_prev_ = true;
    anchor_ += 1;
    return out;
  }

  void reset() override {
    anchor_ = -1;
    warm_.resize(0);
    have_prev_ = false;
  }

  const std::string& name() const override { return name_; }

 private:
  const ReferenceTrajectory* ref_;
  const KoopmanResidualModel* model_;
  MpcConfig cfg_;
  VehicleParams params_;
  detail::LiftedQpSetup setup_;
  Eigen::VectorXd z_origin_;
  long anchor_ = -1;
  Eigen::VectorXd warm_;
  double prev_steer_ = 0.0;
  bool have_prev_ = false;
  std::string name_ = "kmpc";
};

// Residual Koopman MPC: LMPC baseline U0 plus a residual correction solved
// over the lifted residual model in the current pose's local frame, final
// command clamp(U0 + du).
class RkmpcController : public Controller {
 public:
  RkmpcController(const ReferenceTrajectory& ref,
                  const KoopmanResidualModel& model,
                  const MpcConfig& baseline_cfg, const MpcConfig& residual_cfg,
                  const VehicleParams& params)
      : ref_(&ref),
        model_(&model),
        residual_cfg_(residual_cfg),
        params_(params),
        lmpc_(ref, baseline_cfg, params) {
    if (!residual_cfg.valid()) {
      throw InvalidArgument("RkmpcController: invalid residual config");
    }
    setup_.build(model, residual_cfg.horizon);
    z_origin_ = model.lift_state({0.0, 0.0, 0.0});
  }

  ControllerOutput step(const VehicleState& state) override {
    const detail::StepTimer timer;
    ControllerOutput out = lmpc_.step(state);
    const long anchor = out.ref_index;
    const int N = residual_cfg_.horizon;

    ControlInput du{0.0, 0.0};
    try {
      TrackingCost cost;
      cost.C = model_->C;
      cost.w_y.resize(3);
      cost.w_y << residual_cfg_.w_position, residual_cfg_.w_position,
          residual_cfg_.w_heading;
      cost.y_ref.resize(3, N);
      cost.w_u.resize(2);
      cost.w_u << residual_cfg_.w_speed, residual_cfg_.w_steer;
      cost.u_ref = Eigen::MatrixXd::Zero(2, N);
      const ResidualBox& box = residual_cfg_.residual_box;
      cost.u_lb.resize(2);
      cost.u_lb << box.dv_min, box.ddelta_min;
      cost.u_ub.resize(2);
      cost.u_ub << box.dv_max, box.ddelta_max;
      for (int k = 0; k < N; ++k) {
        const ReferencePoint rn = ref_->at(anchor + k + 1);
        const VehicleState local = pose_to_local(state, {rn.x, rn.y, rn.theta});
        cost.y_ref.col(k) << local.x, local.y, local.theta;
      }

      Condensed cond;
      cond.N = N;
      cond.m = 2;
      cond.ny = 3;
      cond.S = setup_.S;
      cond.s = output_rollout(setup_.stages, model_->C, z_origin_);
      cond.qp = assemble_tracking_qp(cond.S, cond.s, cost);

      SoftBounds soft;
      if (residual_cfg_.soft_bound_weight > 0.0) {
        Eigen::VectorXd span(3);
        span << residual_cfg_.soft_xy_bound, residual_cfg_.soft_xy_bound,
            residual_cfg_.soft_theta_bound;
        soft.weight = residual_cfg_.soft_bound_weight;
        soft.y_lb = cost.y_ref - span.replicate(1, N);
        soft.y_ub = cost.y_ref + span.replicate(1, N);
      }
      const SoftSolveResult res = solve_with_soft_bounds(
          cond, soft, warm_.size() > 0 ? &warm_ : nullptr,
          residual_cfg_.qp_tol, residual_cfg_.qp_max_iter,
          residual_cfg_.soft_max_passes);
      if (!res.solution.z.allFinite()) {
        throw IllConditioned("rkmpc residual QP returned non-finite iterate");
      }
      warm_ = shift_warm_start(res.solution.z);
      du = {res.solution.z(0), res.solution.z(1)};
      out.diag.iterations += res.solution.iterations;
      out.diag.converged = out.diag.converged && res.solution.converged;
      out.diag.kkt_residual =
          std::max(out.diag.kkt_residual, res.solution.kkt_residual);
      out.diag.soft_passes += res.passes;
    } catch (const Error&) {
      du = {0.0, 0.0};
      warm_.resize(0);
      out.diag.fallback_to_baseline = true;
    }

    const ControlInput sum{out.baseline.v + du.v,
                           out.baseline.delta + du.delta};
    out.final_input = clamp_to_box(sum, params_);
    out.residual = du;
    out.diag.clamped = out.final_input.v != sum.v ||
                       out.final_input.delta != sum.delta;
    out.solve_seconds = timer.seconds();
    return out;
  }

  void reset() override {
    lmpc_.reset();
    warm_.resize(0);
  }

  const std::string& name() const override { return name_; }

 private:
  const ReferenceTrajectory* ref_;
  const KoopmanResidualModel* model_;
  MpcConfig residual_cfg_;
  VehicleParams params_;
  LmpcController lmpc_;
  detail::LiftedQpSetup setup_;
  Eigen::VectorXd z_origin_;
  Eigen::VectorXd warm_;
  std::string name_ = "rkmpc";
};

}  // namespace rkmpc
