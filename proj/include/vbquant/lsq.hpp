#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "vbquant/error.hpp"

/// Damped Gauss-Newton (Levenberg-Marquardt) least squares shared by the
/// peak fitter, the calibration fit and anything else that needs it.
namespace vbquant::lsq {

struct SolverOptions {
  int max_iterations = 500;
  double relative_cost_tolerance = 1e-10;
  double step_tolerance = 1e-12;
  int small_steps_to_converge = 3;
  double damping_scale = 1e-3; ///< lambda_0 = damping_scale * max(diag(J^T J))
};

enum class StopReason { SmallSteps, ZeroCost, Stationary, IterationCap };

constexpr std::string_view stop_reason_name(StopReason r) {
  switch (r) {
  case StopReason::SmallSteps: return "small_steps";
  case StopReason::ZeroCost: return "zero_cost";
  case StopReason::Stationary: return "stationary";
  case StopReason::IterationCap: return "iteration_cap";
  }
  return "?";
}

struct SolverResult {
  Eigen::VectorXd params;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  double cost = 0.0; ///< sum of squared residuals
  int iterations = 0;
  int accepted_steps = 0;
  bool converged = false;
  StopReason reason = StopReason::IterationCap;
};

/// residuals() may return false to mark a parameter vector as infeasible;
/// the step is then rejected and the damping raised.
template <class P>
concept LeastSquaresProblem =
    requires(P& p, const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
      { p.residuals(x, r) } -> std::convertible_to<bool>;
      p.jacobian(x, J);
    };

template <class P>
concept ProjectedProblem = requires(P& p, Eigen::VectorXd& x) { p.project(x); };

template <LeastSquaresProblem P>
SolverResult levenberg_marquardt(P& problem, Eigen::VectorXd x, const SolverOptions& opt = {}) {
  if constexpr (ProjectedProblem<P>) problem.project(x);

  SolverResult out;
  Eigen::VectorXd r;
  if (!problem.residuals(x, r)) throw Error(Errc::Domain, "initial parameters are infeasible");
  double cost = r.squaredNorm();
  Eigen::MatrixXd J;
  problem.jacobian(x, J);

  Eigen::MatrixXd A = J.transpose() * J;
  Eigen::VectorXd g = J.transpose() * r;
  const double diag_max = A.diagonal().maxCoeff();
  if (!(diag_max > 0.0)) throw Error(Errc::SingularJacobian, "Jacobian is identically zero");
  double lambda = opt.damping_scale * diag_max;
  const double lambda_cap = 1e20 * diag_max;

  int small_steps = 0;
  Eigen::VectorXd r_new;
  const auto finish = [&](bool converged, StopReason reason) {
    out.params = x;
    out.residuals = r;
    out.jacobian = J;
    out.cost = cost;
    out.converged = converged;
    out.reason = reason;
    return out;
  };

  if (cost == 0.0) return finish(true, StopReason::ZeroCost);

  while (out.iterations < opt.max_iterations) {
    ++out.iterations;
    Eigen::MatrixXd damped = A;
    damped.diagonal().array() += lambda;
    const Eigen::VectorXd step = damped.ldlt().solve(-g);

    Eigen::VectorXd x_new = x + step;
    if constexpr (ProjectedProblem<P>) problem.project(x_new);
    const Eigen::VectorXd taken = x_new - x;
    const double step_norm = taken.norm();
    const double x_norm = x.norm();

    const bool feasible = step.allFinite() && problem.residuals(x_new, r_new) && r_new.allFinite();
    const double cost_new = feasible ? r_new.squaredNorm() : std::numeric_limits<double>::infinity();

    if (feasible && cost_new < cost) {
      const double rel_decrease = (cost - cost_new) / cost;
      const bool small = rel_decrease < opt.relative_cost_tolerance ||
                         step_norm < opt.step_tolerance * (x_norm + opt.step_tolerance);
      small_steps = small ? small_steps + 1 : 0;
      x = std::move(x_new);
      r = r_new;
      cost = cost_new;
      ++out.accepted_steps;
      problem.jacobian(x, J);
      A = J.transpose() * J;
      g = J.transpose() * r;
      lambda = std::max(lambda / 10.0, 1e-300);
      if (cost == 0.0) return finish(true, StopReason::ZeroCost);
      if (small_steps >= opt.small_steps_to_converge) return finish(true, StopReason::SmallSteps);
    } else {
      lambda *= 10.0;
      // No downhill move exists even for vanishing steps: stationary to
      // working precision.
      const double eps = std::numeric_limits<double>::epsilon();
      if (lambda > lambda_cap || (feasible && step_norm <= eps * (x_norm + eps)))
        return finish(true, StopReason::Stationary);
    }
  }
  return finish(false, StopReason::IterationCap);
}

/// True when the column-normalized Jacobian has (numerically) dependent columns.
inline bool rank_deficient(const Eigen::MatrixXd& J, double tolerance = 1e-10) {
  if (J.cols() == 0) return false;
  if (J.rows() < J.cols()) return true;
  Eigen::MatrixXd scaled = J;
  for (Eigen::Index c = 0; c < J.cols(); ++c) {
    const double norm = J.col(c).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) return true;
    scaled.col(c) /= norm;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled);
  const auto& s = svd.singularValues();
  return s(s.size() - 1) < tolerance * s(0);
}

/// (J^T J)^-1 scaled by the residual variance cost / (m - n). Uses a
/// column-scaled pseudo-inverse so nearly dependent columns do not blow up.
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& J, double cost, bool scale_by_residual = true) {
  const Eigen::Index m = J.rows();
  const Eigen::Index n = J.cols();
  Eigen::VectorXd norms(n);
  Eigen::MatrixXd scaled = J;
  for (Eigen::Index c = 0; c < n; ++c) {
    norms(c) = J.col(c).norm();
    if (norms(c) > 0.0) scaled.col(c) /= norms(c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::VectorXd inv_s2 = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-14 * s(0)) inv_s2(i) = 1.0 / (s(i) * s(i));
  Eigen::MatrixXd cov = svd.matrixV() * inv_s2.asDiagonal() * svd.matrixV().transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = norms(i) * norms(j);
      cov(i, j) = d > 0.0 ? cov(i, j) / d : 0.0;
    }
  if (scale_by_residual) {
    const double dof = static_cast<double>(std::max<Eigen::Index>(m - n, 1));
    cov *= cost / dof;
  }
  return 0.5 * (cov + cov.transpose());
}

} // namespace vbquant::lsq
