#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "rkmpc/angles.hpp"
#include "rkmpc/errors.hpp"

namespace rkmpc {

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // wrapped to (-pi, pi] by every op that returns a state
};

struct ControlInput {
  double v = 0.0;      // longitudinal speed command, m/s
  double delta = 0.0;  // front steering angle command, rad
};

// Nominal model parameters plus the actuator box shared by all controllers.
struct VehicleParams {
  double wheelbase = 0.33;       // m
  double sampling_period = 0.05; // s
  double v_min = 0.0;
  double v_max = 4.0;
  double delta_min = -0.4;
  double delta_max = 0.4;

  bool valid() const {
    return wheelbase > 0.0 && sampling_period > 0.0 && v_min <= v_max &&
           delta_min <= delta_max && std::isfinite(wheelbase) &&
           std::isfinite(sampling_period);
  }
};

// One timed reference sample: pose plus the feedforward input consistent
// with steady-state motion along the path at that point.
struct ReferencePoint {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double delta = 0.0;
};

// Discrete linear model about a reference point:
//   xi_{k+1} = A * xi_k + B * (u_k - u_ref),  xi = state - reference.
struct LinearizedModel {
  Eigen::Matrix3d A;
  Eigen::Matrix<double, 3, 2> B;
  ReferencePoint ref;
};

inline ControlInput clamp_to_box(const ControlInput& u, const VehicleParams& p) {
  return {std::clamp(u.v, p.v_min, p.v_max),
          std::clamp(u.delta, p.delta_min, p.delta_max)};
}

namespace detail {

// Continuous-time kinematic bicycle, rear-axle reference point:
//   xdot = v cos(theta), ydot = v sin(theta), thetadot = v tan(delta) / L.
inline Eigen::Vector3d kinematic_derivative(const Eigen::Vector3d& s,
                                            const ControlInput& u, double L) {
  return {u.v * std::cos(s.z()), u.v * std::sin(s.z()),
          u.v * std::tan(u.delta) / L};
}

}  // namespace detail

// Advances the kinematic bicycle by one period with a single RK4 step and a
// zero-order hold on the input.
inline VehicleState step_kinematic(const VehicleState& state,
                                   const ControlInput& u,
                                   const VehicleParams& params) {
  const double T = params.sampling_period;
  const double L = params.wheelbase;
  const Eigen::Vector3d s0(state.x, state.y, state.theta);
  const Eigen::Vector3d k1 = detail::kinematic_derivative(s0, u, L);
  const Eigen::Vector3d k2 =
      detail::kinematic_derivative(s0 + 0.5 * T * k1, u, L);
  const Eigen::Vector3d k3 =
      detail::kinematic_derivative(s0 + 0.5 * T * k2, u, L);
  const Eigen::Vector3d k4 = detail::kinematic_derivative(s0 + T * k3, u, L);
  const Eigen::Vector3d s1 = s0 + (T / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  return {s1.x(), s1.y(), wrap_angle(s1.z())};
}

// Discrete linearization of the one-step Euler model about a reference point:
//   A = [1 0 -v_r sin(th_r) T; 0 1 v_r cos(th_r) T; 0 0 1]
//   B = [cos(th_r) T, 0; sin(th_r) T, 0; tan(d_r) T / L, v_r T / (L cos^2 d_r)]
inline LinearizedModel linearize_kinematic(const ReferencePoint& ref,
                                           const VehicleParams& params) {
  const double c = std::cos(ref.delta);
  if (std::abs(c) <= 1e-6) {
    throw DegenerateReference(
        "linearize_kinematic: reference steering at +-pi/2, cos(delta_r) ~ 0");
  }
  const double T = params.sampling_period;
  const double L = params.wheelbase;
  LinearizedModel m;
  m.ref = ref;
  m.A << 1.0, 0.0, -ref.v * std::sin(ref.theta) * T,
         0.0, 1.0,  ref.v * std::cos(ref.theta) * T,
         0.0, 0.0,  1.0;
  m.B << std::cos(ref.theta) * T, 0.0,
         std::sin(ref.theta) * T, 0.0,
         std::tan(ref.delta) * T / L, ref.v * T / (L * c * c);
  return m;
}

// Pose of `p` expressed in the frame anchored at `origin` (translate then
// rotate by -origin.theta). The origin itself maps to (0, 0, 0).
inline VehicleState pose_to_local(const VehicleState& origin,
                                  const VehicleState& p) {
  const double c = std::cos(origin.theta);
  const double s = std::sin(origin.theta);
  const double dx = p.x - origin.x;
  const double dy = p.y - origin.y;
  return {c * dx + s * dy, -s * dx + c * dy, angle_diff(p.theta, origin.theta)};
}

// Inverse of pose_to_local.
inline VehicleState pose_from_local(const VehicleState& origin,
                                    const VehicleState& local) {
  const double c = std::cos(origin.theta);
  const double s = std::sin(origin.theta);
  return {origin.x + c * local.x - s * local.y,
          origin.y + s * local.x + c * local.y,
          wrap_angle(local.theta + origin.theta)};
}

}  // namespace rkmpc
