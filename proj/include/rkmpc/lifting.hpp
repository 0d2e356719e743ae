#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

#include "rkmpc/errors.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

// Two-layer lifting network psi(x) = W2 relu(W1 x + b1) + b2 mapping the raw
// (x, y, theta) state to n_lift observables.
struct LiftingNetwork {
  Eigen::MatrixXd W1;  // hidden x 3
  Eigen::VectorXd b1;  // hidden
  Eigen::MatrixXd W2;  // n_lift x hidden
  Eigen::VectorXd b2;  // n_lift

  int hidden() const { return static_cast<int>(W1.rows()); }
  int out() const { return static_cast<int>(W2.rows()); }

  bool valid() const {
    return W1.cols() == 3 && b1.size() == W1.rows() &&
           W2.cols() == W1.rows() && b2.size() == W2.rows() &&
           W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite();
  }
};

inline LiftingNetwork make_lifting_network(int n_lift, int hidden,
                                           std::uint64_t seed) {
  if (n_lift < 1 || hidden < 1) {
    throw InvalidArgument("make_lifting_network: n_lift and hidden must be >= 1");
  }
  std::mt19937_64 rng(seed);
  auto fill = [&](Eigen::Ref<Eigen::MatrixXd> m, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
  };
  LiftingNetwork net;
  net.W1.resize(hidden, 3);
  net.W2.resize(n_lift, hidden);
  fill(net.W1, 3, hidden);
  fill(net.W2, hidden, n_lift);
  net.b1 = Eigen::VectorXd::Zero(hidden);
  net.b2 = Eigen::VectorXd::Zero(n_lift);
  return net;
}

// Forward pass over a batch of states (columns). Optionally exposes the
// hidden pre-activations and activations for backpropagation.
inline Eigen::MatrixXd net_forward(const LiftingNetwork& net,
                                   const Eigen::Matrix3Xd& X,
                                   Eigen::MatrixXd* preact = nullptr,
                                   Eigen::MatrixXd* act = nullptr) {
  Eigen::MatrixXd A1 = (net.W1 * X).colwise() + net.b1;
  Eigen::MatrixXd H = A1.cwiseMax(0.0);
  Eigen::MatrixXd out = (net.W2 * H).colwise() + net.b2;
  if (preact != nullptr) *preact = std::move(A1);
  if (act != nullptr) *act = std::move(H);
  return out;
}

// Lifted vector z = [x, y, theta, psi(x, y, theta)].
inline Eigen::VectorXd lift(const LiftingNetwork& net, const VehicleState& s) {
  Eigen::Matrix3Xd X(3, 1);
  X << s.x, s.y, s.theta;
  const Eigen::MatrixXd psi = net_forward(net, X);
  Eigen::VectorXd z(3 + net.out());
  z.head<3>() = X.col(0);
  z.tail(net.out()) = psi.col(0);
  return z;
}

// Batch version: column k of the result lifts column k of X.
inline Eigen::MatrixXd lift_batch(const LiftingNetwork& net,
                                  const Eigen::Matrix3Xd& X) {
  Eigen::MatrixXd Z(3 + net.out(), X.cols());
  Z.topRows(3) = X;
  Z.bottomRows(net.out()) = net_forward(net, X);
  return Z;
}

struct NetGradients {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;

  void set_zero(const LiftingNetwork& net) {
    W1 = Eigen::MatrixXd::Zero(net.W1.rows(), net.W1.cols());
    b1 = Eigen::VectorXd::Zero(net.b1.size());
    W2 = Eigen::MatrixXd::Zero(net.W2.rows(), net.W2.cols());
    b2 = Eigen::VectorXd::Zero(net.b2.size());
  }
};

// Accumulates dLoss/dWeights for a batch given dLoss/dpsi (columns) and the
// cached forward quantities for the same batch.
inline void net_backprop(const LiftingNetwork& net, const Eigen::Matrix3Xd& X,
                         const Eigen::MatrixXd& preact,
                         const Eigen::MatrixXd& act,
                         const Eigen::MatrixXd& g_psi, NetGradients& grads) {
  grads.W2 += g_psi * act.transpose();
  grads.b2 += g_psi.rowwise().sum();
  const Eigen::MatrixXd g_hidden =
      (net.W2.transpose() * g_psi).cwiseProduct(
          (preact.array() > 0.0).cast<double>().matrix());
  grads.W1 += g_hidden * X.transpose();
  grads.b1 += g_hidden.rowwise().sum();
}

}  // namespace rkmpc
