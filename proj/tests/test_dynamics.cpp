#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rkmpc/angles.hpp"
#include "rkmpc/plant.hpp"
#include "rkmpc/vehicle.hpp"

namespace {

using rkmpc::ControlInput;
using rkmpc::VehicleParams;
using rkmpc::VehicleState;

// Fine-step explicit Euler on the continuous bicycle equations. Slow and
// simple on purpose: the oracle shares no code with step_kinematic.
VehicleState euler_oracle(const VehicleState& s0, const ControlInput& u,
                          const VehicleParams& p, double T, int substeps) {
  double x = s0.x, y = s0.y, th = s0.theta;
  const double h = T / substeps;
  for (int i = 0; i < substeps; ++i) {
    const double dx = u.v * std::cos(th);
    const double dy = u.v * std::sin(th);
    const double dth = u.v * std::tan(u.delta) / p.wheelbase;
    x += h * dx;
    y += h * dy;
    th += h * dth;
  }
  return {x, y, rkmpc::wrap_angle(th)};
}

// One Euler step of the continuous dynamics; the linearization contract is
// stated against exactly this discretization.
Eigen::Vector3d euler_step(const Eigen::Vector3d& s, const Eigen::Vector2d& u,
                           double L, double T) {
  Eigen::Vector3d out;
  out(0) = s(0) + T * u(0) * std::cos(s(2));
  out(1) = s(1) + T * u(0) * std::sin(s(2));
  out(2) = s(2) + T * u(0) * std::tan(u(1)) / L;
  return out;
}

TEST(StepKinematic, StraightLine) {
  VehicleParams p;
  const VehicleState s = rkmpc::step_kinematic({0, 0, 0}, {1.0, 0.0}, p, 0.1);
  EXPECT_NEAR(s.x, 0.1, 1e-12);
  EXPECT_NEAR(s.y, 0.0, 1e-12);
  EXPECT_NEAR(s.theta, 0.0, 1e-12);
}

TEST(StepKinematic, ZeroSpeedIsFixedPoint) {
  VehicleParams p;
  const VehicleState s0{5.0, -2.0, 1.2};
  for (double T : {0.01, 0.05, 1.0}) {
    const VehicleState s = rkmpc::step_kinematic(s0, {0.0, 0.3}, p, T);
    EXPECT_DOUBLE_EQ(s.x, s0.x);
    EXPECT_DOUBLE_EQ(s.y, s0.y);
    EXPECT_DOUBLE_EQ(s.theta, s0.theta);
  }
}

TEST(StepKinematic, MatchesFineStepEulerOracle) {
  // First-order Euler needs ~2e6 substeps before its own truncation error
  // (7.7e-8 in y at 1e4 substeps for this input) drops safely below the
  // 1e-8 agreement bound being certified.
  VehicleParams p;
  const VehicleState s = rkmpc::step_kinematic({0, 0, 0}, {1.0, 0.2}, p, 0.05);
  const VehicleState o = euler_oracle({0, 0, 0}, {1.0, 0.2}, p, 0.05, 2000000);
  EXPECT_NEAR(s.x, o.x, 1e-8);
  EXPECT_NEAR(s.y, o.y, 1e-8);
  EXPECT_NEAR(s.theta, o.theta, 1e-8);
}

TEST(StepKinematic, Se2Equivariance) {
  // Rigidly moving the start state must rigidly move the trajectory.
  VehicleParams p;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> un(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const VehicleState s0{un(rng), un(rng), 3.0 * un(rng)};
    const ControlInput u{2.0 + un(rng), 0.35 * un(rng)};
    const double phi = 3.0 * un(rng);
    const double tx = 2.0 * un(rng), ty = 2.0 * un(rng);

    const VehicleState moved{
        std::cos(phi) * s0.x - std::sin(phi) * s0.y + tx,
        std::sin(phi) * s0.x + std::cos(phi) * s0.y + ty,
        rkmpc::wrap_angle(s0.theta + phi)};

    const VehicleState a = rkmpc::step_kinematic(s0, u, p, 0.05);
    const VehicleState b = rkmpc::step_kinematic(moved, u, p, 0.05);

    EXPECT_NEAR(b.x, std::cos(phi) * a.x - std::sin(phi) * a.y + tx, 1e-9);
    EXPECT_NEAR(b.y, std::sin(phi) * a.x + std::cos(phi) * a.y + ty, 1e-9);
    EXPECT_NEAR(rkmpc::angle_diff(b.theta, a.theta + phi), 0.0, 1e-9);
  }
}

TEST(LinearizeKinematic, HandSubstitution) {
  VehicleParams p;  // L = 0.33, T = 0.05
  rkmpc::ReferencePoint ref;
  ref.theta = 0.0;
  ref.v = 1.0;
  ref.delta = 0.0;
  const rkmpc::LinearizedModel m = rkmpc::linearize_kinematic(ref, p);

  Eigen::Matrix3d A;
  A << 1, 0, 0, 0, 1, 0.05, 0, 0, 1;
  EXPECT_LT((m.A - A).cwiseAbs().maxCoeff(), 1e-15);

  Eigen::Matrix<double, 3, 2> B;
  B << 0.05, 0, 0, 0, 0, 0.05 / 0.33;
  EXPECT_LT((m.B - B).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(m.B(2, 1), 0.1515, 1e-4);
}

TEST(LinearizeKinematic, ZeroSpeedZeroesThirdColumnCoupling) {
  VehicleParams p;
  rkmpc::ReferencePoint ref;
  ref.theta = M_PI / 2;
  ref.v = 0.0;
  ref.delta = 0.2;
  const rkmpc::LinearizedModel m = rkmpc::linearize_kinematic(ref, p);
  EXPECT_DOUBLE_EQ(m.A(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(m.A(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(m.A(2, 2), 1.0);
}

TEST(LinearizeKinematic, MatchesFiniteDifferenceJacobians) {
  VehicleParams p;
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> uth(-M_PI, M_PI);
  std::uniform_real_distribution<double> uv(0.0, 4.0);
  std::uniform_real_distribution<double> ud(-0.4, 0.4);
  const double h = 1e-6;

  for (int trial = 0; trial < 1000; ++trial) {
    rkmpc::ReferencePoint ref;
    ref.x = uth(rng);
    ref.y = uth(rng);
    ref.theta = uth(rng);
    ref.v = uv(rng);
    ref.delta = ud(rng);
    const rkmpc::LinearizedModel m = rkmpc::linearize_kinematic(ref, p);

    const Eigen::Vector3d s0(ref.x, ref.y, ref.theta);
    const Eigen::Vector2d u0(ref.v, ref.delta);

    Eigen::Matrix3d A_fd;
    for (int j = 0; j < 3; ++j) {
      Eigen::Vector3d sp = s0, sm = s0;
      sp(j) += h;
      sm(j) -= h;
      A_fd.col(j) = (euler_step(sp, u0, p.wheelbase, p.sampling_period) -
                     euler_step(sm, u0, p.wheelbase, p.sampling_period)) /
                    (2 * h);
    }
    Eigen::Matrix<double, 3, 2> B_fd;
    for (int j = 0; j < 2; ++j) {
      Eigen::Vector2d up = u0, um = u0;
      up(j) += h;
      um(j) -= h;
      B_fd.col(j) = (euler_step(s0, up, p.wheelbase, p.sampling_period) -
                     euler_step(s0, um, p.wheelbase, p.sampling_period)) /
                    (2 * h);
    }
    const double scale_A = std::max(1.0, A_fd.cwiseAbs().maxCoeff());
    const double scale_B = std::max(1.0, B_fd.cwiseAbs().maxCoeff());
    EXPECT_LT((m.A - A_fd).cwiseAbs().maxCoeff() / scale_A, 1e-6);
    EXPECT_LT((m.B - B_fd).cwiseAbs().maxCoeff() / scale_B, 1e-6);
  }
}

TEST(LinearizeKinematic, DegenerateSteeringThrows) {
  VehicleParams p;
  p.delta_min = -2.0;
  p.delta_max = 2.0;
  rkmpc::ReferencePoint ref;
  ref.v = 1.0;
  ref.delta = M_PI / 2;
  EXPECT_THROW(rkmpc::linearize_kinematic(ref, p),
               rkmpc::DegenerateReference);
}

// --- plant -------------------------------------------------------------

TEST(StepPlant, RestIsFixedPoint) {
  rkmpc::PlantConfig cfg;
  rkmpc::PlantState s;
  s.x = 1.0;
  s.y = 2.0;
  s.theta = 0.5;
  const rkmpc::PlantState n = rkmpc::step_plant(s, {0.0, 0.0}, cfg, 0.05);
  EXPECT_NEAR(n.x, s.x, 1e-12);
  EXPECT_NEAR(n.y, s.y, 1e-12);
  EXPECT_NEAR(n.theta, s.theta, 1e-12);
}

rkmpc::PlantConfig limit_config() {
  // Stiff tires and near-instant actuators: the dynamic model collapses
  // onto the kinematic one.
  rkmpc::PlantConfig cfg;
  cfg.cornering_front = 2e5;
  cfg.cornering_rear = 2e5;
  cfg.tau_steer = 1e-4;
  cfg.tau_speed = 1e-4;
  cfg.substeps = 2500;
  return cfg;
}

TEST(StepPlant, KinematicLimitStraightLine) {
  const rkmpc::PlantConfig cfg = limit_config();
  rkmpc::PlantState plant;
  rkmpc::VehicleState kin{0, 0, 0};
  const ControlInput u{1.0, 0.0};
  VehicleParams p;
  for (int k = 0; k < 100; ++k) {
    plant = rkmpc::step_plant(plant, u, cfg, p.sampling_period);
    kin = rkmpc::step_kinematic(kin, u, p, p.sampling_period);
  }
  EXPECT_NEAR(plant.x, kin.x, 1e-3);
  EXPECT_NEAR(plant.y, kin.y, 1e-3);
  EXPECT_NEAR(plant.theta, kin.theta, 1e-3);
}

TEST(StepPlant, KinematicLimitCurved) {
  const rkmpc::PlantConfig cfg = limit_config();
  rkmpc::PlantState plant;
  rkmpc::VehicleState kin{0, 0, 0};
  const ControlInput u{1.0, 0.15};
  VehicleParams p;
  for (int k = 0; k < 100; ++k) {
    plant = rkmpc::step_plant(plant, u, cfg, p.sampling_period);
    kin = rkmpc::step_kinematic(kin, u, p, p.sampling_period);
    EXPECT_NEAR(plant.x, kin.x, 1e-3);
    EXPECT_NEAR(plant.y, kin.y, 1e-3);
    EXPECT_NEAR(rkmpc::angle_diff(plant.theta, kin.theta), 0.0, 1e-3);
  }
}

TEST(StepPlant, SteadyCorneringYawRateConverges) {
  // Constant input must settle to a constant yaw rate, and the settled
  // value must agree with a much longer independent simulation.
  rkmpc::PlantConfig cfg;
  rkmpc::PlantState s;
  const ControlInput u{2.0, 0.2};
  for (int k = 0; k < 400; ++k) s = rkmpc::step_plant(s, u, cfg, 0.05);
  const double r1 = s.yaw_rate;
  for (int k = 0; k < 100; ++k) s = rkmpc::step_plant(s, u, cfg, 0.05);
  const double r2 = s.yaw_rate;
  EXPECT_NEAR(r1, r2, 1e-6);  // settled

  rkmpc::PlantState o;
  for (int k = 0; k < 4000; ++k) o = rkmpc::step_plant(o, u, cfg, 0.05);
  EXPECT_NEAR(r2, o.yaw_rate, 1e-4);
  EXPECT_GT(r2, 0.0);  // left turn
}

TEST(StepPlant, ActuatorLagDelaysSteering) {
  rkmpc::PlantConfig cfg;  // tau_steer = 0.12
  rkmpc::PlantState s;
  s.v_long = 2.0;
  const rkmpc::PlantState n = rkmpc::step_plant(s, {2.0, 0.3}, cfg, 0.05);
  EXPECT_GT(n.steer, 0.0);
  EXPECT_LT(n.steer, 0.3 * 0.6);  // far from fully applied after one step
  const double expected = 0.3 * (1.0 - std::exp(-0.05 / 0.12));
  EXPECT_NEAR(n.steer, expected, 1e-9);
}

TEST(PoseFrames, LocalRoundTrip) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> un(-3.0, 3.0);
  for (int trial = 0; trial < 300; ++trial) {
    const VehicleState origin{un(rng), un(rng), un(rng)};
    const VehicleState p{un(rng), un(rng), un(rng)};
    const VehicleState local = rkmpc::pose_to_local(origin, p);
    const VehicleState back = rkmpc::pose_from_local(origin, local);
    EXPECT_NEAR(back.x, p.x, 1e-12);
    EXPECT_NEAR(back.y, p.y, 1e-12);
    EXPECT_NEAR(rkmpc::angle_diff(back.theta, p.theta), 0.0, 1e-12);
  }
}

TEST(Angles, WrapConventions) {
  EXPECT_DOUBLE_EQ(rkmpc::wrap_angle(M_PI), M_PI);
  EXPECT_DOUBLE_EQ(rkmpc::wrap_angle(-M_PI), M_PI);
  EXPECT_NEAR(rkmpc::wrap_angle(3 * M_PI / 2), -M_PI / 2, 1e-12);
  EXPECT_NEAR(rkmpc::wrap_angle(-7 * M_PI), M_PI, 1e-12);
  EXPECT_NEAR(rkmpc::angle_diff(0.1, 2 * M_PI - 0.1), 0.2, 1e-12);
}

}  // namespace
