#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "rkmpc/errors.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

// Truth-plant state. Pose is the rear-axle point so the stiff-tire,
// zero-lag limit of the dynamics coincides with the kinematic model.
struct PlantState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double yaw_rate = 0.0;   // rad/s
  double v_lat = 0.0;      // lateral velocity at the rear axle, m/s
  double v_long = 0.0;     // realized longitudinal speed, m/s
  double steer = 0.0;      // actual front steering angle, rad (lags command)

  VehicleState pose() const { return {x, y, theta}; }
};

// Dynamic bicycle with linear tires plus first-order actuator lags on both
// commanded channels. Below blend_v_hi the lateral dynamics relax toward the
// kinematic model so the tire model never sees v -> 0.
struct PlantConfig {
  double mass = 3.74;            // kg
  double yaw_inertia = 0.04712;  // kg m^2
  double cg_to_front = 0.15875;  // m, CG to front axle
  double cg_to_rear = 0.17145;   // m, CG to rear axle
  double cornering_front = 90.0; // N/rad
  double cornering_rear = 96.0;  // N/rad
  double tau_steer = 0.12;       // s, steering actuator lag
  double tau_speed = 0.25;       // s, drivetrain speed lag
  double blend_v_lo = 0.3;       // m/s, fully kinematic below
  double blend_v_hi = 1.0;       // m/s, fully dynamic above
  double blend_relax = 0.05;     // s, relaxation toward kinematic rates
  int substeps = 10;             // integrator substeps per period

  bool valid() const {
    return mass > 0.0 && yaw_inertia > 0.0 && cg_to_front > 0.0 &&
           cg_to_rear > 0.0 && cornering_front > 0.0 && cornering_rear > 0.0 &&
           tau_steer > 0.0 && tau_speed > 0.0 && blend_v_lo < blend_v_hi &&
           blend_relax > 0.0 && substeps >= 1;
  }

  double wheelbase() const { return cg_to_front + cg_to_rear; }
};

namespace detail {

// Derivatives of (x, y, theta, v_lat, yaw_rate) with v_long and steer held.
inline Eigen::Matrix<double, 5, 1> plant_derivative(
    const Eigen::Matrix<double, 5, 1>& s, double vx, double steer,
    const PlantConfig& cfg) {
  const double theta = s(2);
  const double vy = s(3);
  const double r = s(4);
  const double L = cfg.wheelbase();

  // Linear-tire lateral forces; vx guarded away from zero for the slip angles.
  const double vx_safe = std::max(vx, 0.05);
  const double alpha_f = steer - std::atan((vy + L * r) / vx_safe);
  const double alpha_r = -std::atan(vy / vx_safe);
  const double fyf = cfg.cornering_front * alpha_f;
  const double fyr = cfg.cornering_rear * alpha_r;

  const double r_dot_dyn =
      (cfg.cg_to_front * fyf * std::cos(steer) - cfg.cg_to_rear * fyr) /
      cfg.yaw_inertia;
  // Lateral acceleration at the rear axle (CG equation shifted by l_r r_dot).
  const double vy_dot_dyn = (fyf * std::cos(steer) + fyr) / cfg.mass -
                            vx * r - cfg.cg_to_rear * r_dot_dyn;

  // Kinematic target rates: r = vx tan(steer) / L, vy = 0 at the rear axle.
  const double r_kin = vx * std::tan(steer) / L;
  const double r_dot_kin = (r_kin - r) / cfg.blend_relax;
  const double vy_dot_kin = -vy / cfg.blend_relax;

  const double w = std::clamp(
      (vx - cfg.blend_v_lo) / (cfg.blend_v_hi - cfg.blend_v_lo), 0.0, 1.0);

  Eigen::Matrix<double, 5, 1> ds;
  ds(0) = vx * std::cos(theta) - vy * std::sin(theta);
  ds(1) = vx * std::sin(theta) + vy * std::cos(theta);
  ds(2) = r;
  ds(3) = w * vy_dot_dyn + (1.0 - w) * vy_dot_kin;
  ds(4) = w * r_dot_dyn + (1.0 - w) * r_dot_kin;
  return ds;
}

}  // namespace detail

// Advances the truth plant by one period T. Actuator lags are applied per
// substep with the exact first-order-hold solution (robust as tau -> 0);
// the remaining states take an RK4 substep with actuators frozen.
inline PlantState step_plant(const PlantState& state, const ControlInput& u,
                             const PlantConfig& cfg, double T) {
  const int n = cfg.substeps;
  const double h = T / n;
  const double steer_gain = 1.0 - std::exp(-h / cfg.tau_steer);
  const double speed_gain = 1.0 - std::exp(-h / cfg.tau_speed);

  double vx = state.v_long;
  double steer = state.steer;
  Eigen::Matrix<double, 5, 1> s;
  s << state.x, state.y, state.theta, state.v_lat, state.yaw_rate;

  for (int i = 0; i < n; ++i) {
    steer += (u.delta - steer) * steer_gain;
    vx += (u.v - vx) * speed_gain;
    const auto k1 = detail::plant_derivative(s, vx, steer, cfg);
    const auto k2 = detail::plant_derivative(s + 0.5 * h * k1, vx, steer, cfg);
    const auto k3 = detail::plant_derivative(s + 0.5 * h * k2, vx, steer, cfg);
    const auto k4 = detail::plant_derivative(s + h * k3, vx, steer, cfg);
    s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  PlantState out;
  out.x = s(0);
  out.y = s(1);
  out.theta = wrap_angle(s(2));
  out.v_lat = s(3);
  out.yaw_rate = s(4);
  out.v_long = vx;
  out.steer = steer;
  return out;
}

// Plant initialized at a reference pose, at rest.
inline PlantState plant_at_pose(const VehicleState& pose) {
  PlantState s;
  s.x = pose.x;
  s.y = pose.y;
  s.theta = pose.theta;
  return s;
}

}  // namespace rkmpc
