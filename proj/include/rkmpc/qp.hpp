#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rkmpc/errors.hpp"

namespace rkmpc {

// minimize 0.5 z'Hz + f'z + constant  s.t.  lb <= z <= ub.
// The constant carries the state-dependent cost terms dropped by the
// condensing step, so condensed objectives equal rollout costs exactly.
struct BoxQP {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  double constant = 0.0;

  int n() const { return static_cast<int>(f.size()); }
};

struct QPSolution {
  Eigen::VectorXd z;
  double objective = 0.0;
  int iterations = 0;  // full coordinate sweeps
  bool converged = false;
  double kkt_residual = 0.0;
  std::vector<double> objective_trace;  // objective after each sweep
};

inline double qp_objective(const BoxQP& qp, const Eigen::VectorXd& z) {
  return 0.5 * z.dot(qp.H * z) + qp.f.dot(z) + qp.constant;
}

// Projected cyclic coordinate descent: each coordinate takes its exact
// minimizer clamped to the box, so iterates are always feasible and the
// objective is non-increasing. Terminates on the projected-gradient KKT
// residual ||z - clamp(z - grad, lb, ub)||_inf <= tol.
inline QPSolution solve_box_qp(const BoxQP& qp,
                               const Eigen::VectorXd* warm = nullptr,
                               double tol = 1e-8, int max_iter = 2000) {
  const int n = qp.n();
  if (qp.H.rows() != n || qp.H.cols() != n || qp.lb.size() != n ||
      qp.ub.size() != n) {
    throw DimensionMismatch("solve_box_qp: inconsistent problem dimensions");
  }
  if ((qp.H - qp.H.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw InvalidArgument("solve_box_qp: H not symmetric within 1e-10");
  }
  for (int i = 0; i < n; ++i) {
    if (qp.lb(i) > qp.ub(i)) {
      throw InvalidArgument("solve_box_qp: empty box at coordinate " +
                            std::to_string(i));
    }
  }
  {
    // Negative curvature beyond -1e-8 makes the shifted Cholesky fail.
    Eigen::LLT<Eigen::MatrixXd> llt(
        qp.H + 1e-8 * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success) {
      throw IllConditioned("solve_box_qp: H indefinite beyond -1e-8 shift");
    }
  }

  auto clamp_vec = [&](Eigen::VectorXd v) {
    for (int i = 0; i < n; ++i) v(i) = std::clamp(v(i), qp.lb(i), qp.ub(i));
    return v;
  };

  QPSolution sol;
  sol.z = warm != nullptr && warm->size() == n
              ? clamp_vec(*warm)
              : clamp_vec(Eigen::VectorXd::Zero(n));

  Eigen::VectorXd g = qp.H * sol.z + qp.f;
  auto kkt = [&]() {
    double r = 0.0;
    for (int i = 0; i < n; ++i) {
      const double zi = std::clamp(sol.z(i) - g(i), qp.lb(i), qp.ub(i));
      r = std::max(r, std::abs(sol.z(i) - zi));
    }
    return r;
  };

  sol.objective_trace.reserve(64);
  for (int sweep = 0; sweep < max_iter; ++sweep) {
    for (int i = 0; i < n; ++i) {
      const double d = std::max(qp.H(i, i), 1e-12);
      const double target = std::clamp(sol.z(i) - g(i) / d, qp.lb(i), qp.ub(i));
      const double t = target - sol.z(i);
      if (t != 0.0) {
        sol.z(i) = target;
        g += qp.H.col(i) * t;
      }
    }
    sol.iterations = sweep + 1;
    sol.objective_trace.push_back(qp_objective(qp, sol.z));
    if (sweep % 50 == 49) g = qp.H * sol.z + qp.f;  // shed incremental drift
    sol.kkt_residual = kkt();
    if (sol.kkt_residual <= tol) {
      sol.converged = true;
      break;
    }
  }
  sol.kkt_residual = kkt();
  sol.converged = sol.kkt_residual <= tol;
  sol.objective = qp_objective(qp, sol.z);
  return sol;
}

// One stage of the prediction model x_{k+1} = A x_k + B u_k + d.
struct StageModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::VectorXd d;
};

// Tracking cost data for the condensed QP. Column k of y_ref weights the
// predicted output y_{k+1} = C x_{k+1}; column k of u_ref weights u_k.
struct TrackingCost {
  Eigen::MatrixXd C;      // ny x nx
  Eigen::VectorXd w_y;    // ny
  Eigen::MatrixXd y_ref;  // ny x N
  Eigen::VectorXd w_u;    // m
  Eigen::MatrixXd u_ref;  // m x N
  Eigen::VectorXd u_lb;   // m, same box every stage
  Eigen::VectorXd u_ub;
};

// Output-space sensitivity of the stacked prediction: Y = s + S U with
// Y = [y_1; ...; y_N] and U = [u_0; ...; u_{N-1}].
struct Condensed {
  BoxQP qp;
  Eigen::MatrixXd S;
  Eigen::VectorXd s;
  int N = 0;
  int m = 0;
  int ny = 0;
};

inline Eigen::MatrixXd output_sensitivity(const std::vector<StageModel>& stages,
                                          const Eigen::MatrixXd& C) {
  const int N = static_cast<int>(stages.size());
  const int nx = static_cast<int>(stages[0].A.rows());
  const int m = static_cast<int>(stages[0].B.cols());
  const int ny = static_cast<int>(C.rows());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N * ny, N * m);
  // M[j] tracks d x_{k+1} / d u_j while k advances.
  std::vector<Eigen::MatrixXd> M(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    for (int j = 0; j < k; ++j) M[j] = stages[k].A * M[j];
    M[k] = stages[k].B;
    for (int j = 0; j <= k; ++j) {
      S.block(k * ny, j * m, ny, m) = C * M[j];
    }
  }
  return S;
}

inline Eigen::VectorXd output_rollout(const std::vector<StageModel>& stages,
                                      const Eigen::MatrixXd& C,
                                      const Eigen::VectorXd& x0) {
  const int N = static_cast<int>(stages.size());
  const int ny = static_cast<int>(C.rows());
  Eigen::VectorXd s(N * ny);
  Eigen::VectorXd x = x0;
  for (int k = 0; k < N; ++k) {
    x = (stages[k].A * x).eval();
    if (stages[k].d.size() > 0) x += stages[k].d;
    s.segment(k * ny, ny) = C * x;
  }
  return s;
}

// Assembles the box QP over stacked inputs for a precomputed sensitivity.
inline BoxQP assemble_tracking_qp(const Eigen::MatrixXd& S,
                                  const Eigen::VectorXd& s,
                                  const TrackingCost& cost) {
  const int ny = static_cast<int>(cost.C.rows());
  const int N = static_cast<int>(cost.y_ref.cols());
  const int m = static_cast<int>(cost.w_u.size());
  if (S.rows() != N * ny || S.cols() != N * m || s.size() != N * ny ||
      cost.u_ref.cols() != N || cost.u_ref.rows() != m ||
      cost.y_ref.rows() != ny || cost.u_lb.size() != m ||
      cost.u_ub.size() != m || cost.w_y.size() != ny) {
    throw DimensionMismatch("assemble_tracking_qp: inconsistent dimensions");
  }
  Eigen::VectorXd wy_full(N * ny), e(N * ny);
  Eigen::VectorXd wu_full(N * m), uref_full(N * m);
  for (int k = 0; k < N; ++k) {
    wy_full.segment(k * ny, ny) = cost.w_y;
    e.segment(k * ny, ny) = s.segment(k * ny, ny) - cost.y_ref.col(k);
    wu_full.segment(k * m, m) = cost.w_u;
    uref_full.segment(k * m, m) = cost.u_ref.col(k);
  }

  BoxQP qp;
  const Eigen::MatrixXd WS = wy_full.asDiagonal() * S;
  qp.H = 2.0 * (S.transpose() * WS);
  qp.H.diagonal() += 2.0 * wu_full;
  qp.H.diagonal().array() += 1e-9;
  qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();  // exact symmetry
  qp.f = 2.0 * (WS.transpose() * e) - 2.0 * (wu_full.cwiseProduct(uref_full));
  qp.constant = e.dot(wy_full.cwiseProduct(e)) +
                uref_full.dot(wu_full.cwiseProduct(uref_full));
  qp.lb.resize(N * m);
  qp.ub.resize(N * m);
  for (int k = 0; k < N; ++k) {
    qp.lb.segment(k * m, m) = cost.u_lb;
    qp.ub.segment(k * m, m) = cost.u_ub;
  }
  return qp;
}

// Forward-substitutes the stage models and returns the condensed QP together
// with the stacked output map (Y = s + S U) it was built from.
inline Condensed condense(const std::vector<StageModel>& stages,
                          const Eigen::VectorXd& x0, const TrackingCost& cost) {
  if (stages.empty()) throw DimensionMismatch("condense: empty horizon");
  const int nx = static_cast<int>(stages[0].A.rows());
  for (const auto& st : stages) {
    if (st.A.rows() != nx || st.A.cols() != nx || st.B.rows() != nx ||
        (st.d.size() > 0 && st.d.size() != nx)) {
      throw DimensionMismatch("condense: inconsistent stage dimensions");
    }
  }
  if (cost.C.cols() != nx || x0.size() != nx) {
    throw DimensionMismatch("condense: output map/state dimension mismatch");
  }
  Condensed out;
  out.N = static_cast<int>(stages.size());
  out.m = static_cast<int>(stages[0].B.cols());
  out.ny = static_cast<int>(cost.C.rows());
  out.S = output_sensitivity(stages, cost.C);
  out.s = output_rollout(stages, cost.C, x0);
  out.qp = assemble_tracking_qp(out.S, out.s, cost);
  return out;
}

// Soft bounds on the predicted outputs: violated components get a quadratic
// penalty folded into H, f and the QP is re-solved, up to max_passes times.
// Bounds are per stage (column k bounds y_{k+1}); +-inf disables a row.
struct SoftBounds {
  Eigen::MatrixXd y_lb;  // ny x N
  Eigen::MatrixXd y_ub;
  double weight = 0.0;

  static SoftBounds uniform(const Eigen::VectorXd& lb,
                            const Eigen::VectorXd& ub, double weight, int N) {
    SoftBounds s;
    s.weight = weight;
    s.y_lb = lb.replicate(1, N);
    s.y_ub = ub.replicate(1, N);
    return s;
  }
};

struct SoftSolveResult {
  QPSolution solution;
  int passes = 0;          // extra solves triggered by violations
  int violated_rows = 0;
};

inline SoftSolveResult solve_with_soft_bounds(
    const Condensed& cond, const SoftBounds& soft,
    const Eigen::VectorXd* warm = nullptr, double tol = 1e-8,
    int max_iter = 2000, int max_passes = 3) {
  SoftSolveResult res;
  res.solution = solve_box_qp(cond.qp, warm, tol, max_iter);
  const bool have_soft = soft.weight > 0.0 && soft.y_lb.rows() == cond.ny &&
                         soft.y_lb.cols() == cond.N &&
                         soft.y_ub.rows() == cond.ny &&
                         soft.y_ub.cols() == cond.N;
  if (!have_soft) return res;

  BoxQP qp = cond.qp;
  std::vector<std::pair<int, double>> penalized;  // (row, bound)
  for (int pass = 0; pass < max_passes; ++pass) {
    const Eigen::VectorXd y = cond.s + cond.S * res.solution.z;
    bool added = false;
    for (int k = 0; k < cond.N; ++k) {
      for (int i = 0; i < cond.ny; ++i) {
        const int row = k * cond.ny + i;
        double bound = 0.0;
        if (y(row) > soft.y_ub(i, k)) {
          bound = soft.y_ub(i, k);
        } else if (y(row) < soft.y_lb(i, k)) {
          bound = soft.y_lb(i, k);
        } else {
          continue;
        }
        bool seen = false;
        for (const auto& p : penalized) seen |= p.first == row;
        if (seen) continue;
        penalized.emplace_back(row, bound);
        const Eigen::RowVectorXd Sr = cond.S.row(row);
        qp.H += 2.0 * soft.weight * (Sr.transpose() * Sr);
        const double off = cond.s(row) - bound;
        qp.f += 2.0 * soft.weight * off * Sr.transpose();
        qp.constant += soft.weight * off * off;
        added = true;
      }
    }
    if (!added) break;
    res.solution = solve_box_qp(qp, &res.solution.z, tol, max_iter);
    res.passes = pass + 1;
    res.violated_rows = static_cast<int>(penalized.size());
  }
  return res;
}

}  // namespace rkmpc
