#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vbquant/defect_model.hpp"
#include "vbquant/error.hpp"
#include "vbquant/lsq.hpp"

namespace vbquant {

struct CalibrationSeed {
  double r_a_nm = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

struct CalibrationFitOptions {
  double r_s_nm = kDefaultStructuralRadiusNm;
  /// Start for (r_a, alpha, beta); per-E_L coefficients are always seeded by
  /// non-negative linear least squares. Without a seed a grid of starts is
  /// scanned and the best few on each side of r_a^2 = 2 r_s^2 are refined.
  std::optional<CalibrationSeed> seed;
  int refined_starts = 3;
  /// The activation term is unchanged under r_s^2 <-> r_a^2 - r_s^2 (with
  /// L_D, C_A' rescaled), so each curve has a mirror solution with
  /// r_a^2 < 2 r_s^2. By default only r_a^2 > 2 r_s^2 is searched.
  bool allow_narrow_activation = false;
  lsq::SolverOptions solver{};
};

struct CalibrationFit {
  CalibrationModel model;
  double cost = 0.0; ///< weighted sum of squared residuals
  double reduced_chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;
  std::size_t observations = 0;
  bool absolute_sigma = false; ///< covariance from given sigmas rather than residual scatter
};

namespace detail {

struct ObservationGroup {
  double el = 0.0;
  std::vector<std::size_t> rows;
};

inline std::vector<ObservationGroup> group_by_el(std::span<const RatioObservation> obs) {
  std::vector<ObservationGroup> groups;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double el = obs[i].excitation_energy_ev;
    auto it = std::find_if(groups.begin(), groups.end(),
                           [el](const ObservationGroup& g) { return std::abs(g.el - el) <= kElTolerance; });
    if (it == groups.end()) {
      groups.push_back({el, {i}});
    } else {
      it->rows.push_back(i);
    }
  }
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.el < b.el; });
  return groups;
}

/// Parameters: [r_a, log alpha, log beta, (c_a, c_s) per group].
class CalibrationProblem {
public:
  CalibrationProblem(std::span<const RatioObservation> obs, std::vector<ObservationGroup> groups, double r_s,
                     bool allow_narrow)
      : obs_(obs), groups_(std::move(groups)), r_s_(r_s),
        r_a_min_(allow_narrow ? r_s * (1.0 + 1e-9) : std::sqrt(2.0 * r_s * r_s + 2.0 * kGeometryGuard)),
        group_of_(obs.size()), weight_(obs.size()) {
    for (std::size_t g = 0; g < groups_.size(); ++g)
      for (auto row : groups_[g].rows) group_of_[row] = g;
    for (std::size_t i = 0; i < obs.size(); ++i)
      weight_[i] = obs[i].ratio_sigma > 0.0 ? 1.0 / obs[i].ratio_sigma : 1.0;
  }

  Eigen::Index parameter_count() const { return static_cast<Eigen::Index>(3 + 2 * groups_.size()); }

  bool feasible(double r_a) const {
    return r_a >= r_a_min_ && std::abs(r_a * r_a - 2.0 * r_s_ * r_s_) > kGeometryGuard && std::isfinite(r_a);
  }

  bool residuals(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    const double r_a = p(0);
    if (!feasible(r_a)) return false;
    const double alpha = std::exp(p(1));
    const double beta = std::exp(p(2));
    r.resize(static_cast<Eigen::Index>(obs_.size()));
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      const auto g = static_cast<Eigen::Index>(group_of_[i]);
      const double l_d = alpha * std::pow(obs_[i].fluence_ions_per_nm2, -beta);
      const double f = activation_ratio(l_d, r_s_, r_a, p(3 + 2 * g), p(4 + 2 * g));
      r(static_cast<Eigen::Index>(i)) = weight_[i] * (f - obs_[i].ratio);
    }
    return r.allFinite();
  }

  void jacobian(const Eigen::VectorXd& p, Eigen::MatrixXd& J) const {
    J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(obs_.size()), parameter_count());
    const double r_a = p(0);
    const double alpha = std::exp(p(1));
    const double beta = std::exp(p(2));
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      const auto g = static_cast<Eigen::Index>(group_of_[i]);
      const double fl = obs_[i].fluence_ions_per_nm2;
      const double l_d = alpha * std::pow(fl, -beta);
      const auto d = activation_ratio_gradient(l_d, r_s_, r_a, p(3 + 2 * g), p(4 + 2 * g));
      const auto row = static_cast<Eigen::Index>(i);
      const double w = weight_[i];
      J(row, 0) = w * d.d_r_a;
      J(row, 1) = w * d.d_l_d * l_d;                       // dL/dlog(alpha) = L
      J(row, 2) = w * d.d_l_d * (-beta * std::log(fl) * l_d); // dL/dlog(beta)
      J(row, 3 + 2 * g) = w * d.d_c_a;
      J(row, 4 + 2 * g) = w * d.d_c_s;
    }
  }

  void project(Eigen::VectorXd& p) const {
    p(0) = std::clamp(p(0), r_a_min_, 1e3 * r_s_);
    p(1) = std::clamp(p(1), -30.0, 30.0);
    p(2) = std::clamp(p(2), -30.0, 5.0);
    for (Eigen::Index k = 3; k < p.size(); ++k) p(k) = std::max(p(k), 0.0);
  }

  /// Best non-negative (c_a, c_s) per group for fixed (r_a, alpha, beta);
  /// returns the weighted cost, +inf when the geometry is infeasible.
  double solve_linear(Eigen::VectorXd& p) const {
    const double r_a = p(0);
    if (!feasible(r_a)) return std::numeric_limits<double>::infinity();
    const double alpha = std::exp(p(1));
    const double beta = std::exp(p(2));
    double total = 0.0;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const auto& rows = groups_[g].rows;
      Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), 2);
      Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& o = obs_[rows[k]];
        const double l_d = alpha * std::pow(o.fluence_ions_per_nm2, -beta);
        const double w = weight_[rows[k]];
        const auto row = static_cast<Eigen::Index>(k);
        A(row, 0) = w * activation_ratio(l_d, r_s_, r_a, 1.0, 0.0);
        A(row, 1) = w * activation_ratio(l_d, r_s_, r_a, 0.0, 1.0);
        b(row) = w * o.ratio;
      }
      // 2-variable NNLS by enumerating the active sets
      std::array<Eigen::Vector2d, 4> candidates;
      candidates[0] = A.colPivHouseholderQr().solve(b);
      const double n0 = A.col(0).squaredNorm();
      const double n1 = A.col(1).squaredNorm();
      candidates[1] = {n0 > 0.0 ? std::max(A.col(0).dot(b) / n0, 0.0) : 0.0, 0.0};
      candidates[2] = {0.0, n1 > 0.0 ? std::max(A.col(1).dot(b) / n1, 0.0) : 0.0};
      candidates[3] = {0.0, 0.0};
      double best = std::numeric_limits<double>::infinity();
      Eigen::Vector2d best_c = candidates[3];
      for (const auto& c : candidates) {
        if (!(c(0) >= 0.0) || !(c(1) >= 0.0) || !c.allFinite()) continue;
        const double cost = (A * c - b).squaredNorm();
        if (cost < best) {
          best = cost;
          best_c = c;
        }
      }
      p(static_cast<Eigen::Index>(3 + 2 * g)) = best_c(0);
      p(static_cast<Eigen::Index>(4 + 2 * g)) = best_c(1);
      total += best;
    }
    return total;
  }

  const std::vector<ObservationGroup>& groups() const { return groups_; }

private:
  std::span<const RatioObservation> obs_;
  std::vector<ObservationGroup> groups_;
  double r_s_;
  double r_a_min_;
  std::vector<std::size_t> group_of_;
  std::vector<double> weight_;
};

} // namespace detail

/// Global weighted least-squares fit of the activation model: r_a, alpha and
/// beta shared across excitation energies, (C_A', C_S') per excitation
/// energy, r_s fixed. Weights are 1/ratio_sigma^2 (unit when sigma is 0).
inline CalibrationFit fit_calibration(std::span<const RatioObservation> obs, const CalibrationFitOptions& options = {}) {
  if (obs.empty()) throw Error(Errc::InsufficientData, "no observations");
  if (!(options.r_s_nm > 0.0)) throw Error(Errc::Domain, "r_s must be positive");
  const RatioMode mode = obs.front().mode;
  bool all_sigma = true;
  for (const auto& o : obs) {
    if (!(o.fluence_ions_per_nm2 > 0.0) || !std::isfinite(o.fluence_ions_per_nm2))
      throw Error(Errc::Domain, "fluence must be positive");
    if (!(o.excitation_energy_ev > 0.0)) throw Error(Errc::Domain, "excitation energy must be positive");
    if (!(o.ratio >= 0.0) || !std::isfinite(o.ratio)) throw Error(Errc::Domain, "ratio must be finite and >= 0");
    if (o.ratio_sigma < 0.0) throw Error(Errc::Domain, "ratio_sigma must be >= 0");
    if (o.mode != mode) throw Error(Errc::Domain, "observations mix ratio modes");
    all_sigma = all_sigma && o.ratio_sigma > 0.0;
  }

  auto groups = detail::group_by_el(obs);
  for (const auto& g : groups) {
    std::vector<double> fl;
    for (auto row : g.rows) fl.push_back(obs[row].fluence_ions_per_nm2);
    std::sort(fl.begin(), fl.end());
    const auto distinct = std::unique(fl.begin(), fl.end()) - fl.begin();
    if (distinct < 2)
      throw Error(Errc::InsufficientData, "E_L = " + std::to_string(g.el) + " eV has fewer than 2 distinct fluences");
  }
  const std::size_t nparam = 3 + 2 * groups.size();
  if (obs.size() <= nparam)
    throw Error(Errc::InsufficientData, std::to_string(obs.size()) + " observations for " + std::to_string(nparam) +
                                            " free parameters");

  detail::CalibrationProblem problem(obs, groups, options.r_s_nm, options.allow_narrow_activation);
  const auto n = problem.parameter_count();

  // candidate starts, ranked by the cost after the linear solve
  std::vector<std::pair<double, Eigen::VectorXd>> starts;
  auto add_start = [&](double r_a, double alpha, double beta) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    p(0) = r_a;
    p(1) = std::log(alpha);
    p(2) = std::log(beta);
    const double cost = problem.solve_linear(p);
    if (std::isfinite(cost)) starts.emplace_back(cost, std::move(p));
  };
  if (options.seed) {
    add_start(options.seed->r_a_nm, options.seed->alpha, options.seed->beta);
  } else {
    for (double ra : {1.1, 1.25, 1.5, 1.7, 2.2, 2.8, 3.6, 4.6, 6.0})
      for (double alpha : {1.0, 2.0, 4.0, 8.0, 16.0})
        for (double beta : {0.3, 0.45, 0.6, 0.8, 1.0}) add_start(ra * options.r_s_nm, alpha, beta);
  }
  if (starts.empty()) throw Error(Errc::DegenerateGeometry, "no feasible starting point");
  std::sort(starts.begin(), starts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // The singular geometry r_a^2 = 2 r_s^2 splits parameter space into two
  // branches the solver cannot cross; refine the best starts of each.
  std::vector<const Eigen::VectorXd*> chosen;
  const std::size_t per_branch = static_cast<std::size_t>(std::max(options.refined_starts, 1));
  for (int side = 0; side < 2; ++side) {
    std::size_t taken = 0;
    for (const auto& [cost, p] : starts) {
      const bool upper = p(0) * p(0) > 2.0 * options.r_s_nm * options.r_s_nm;
      if (upper == (side == 0) && taken < per_branch) {
        chosen.push_back(&p);
        ++taken;
      }
    }
  }

  std::optional<lsq::SolverResult> best;
  std::string last_failure;
  for (const auto* start : chosen) {
    try {
      auto sol = lsq::levenberg_marquardt(problem, *start, options.solver);
      if (!sol.converged) {
        last_failure = "no convergence after " + std::to_string(sol.iterations) + " iterations (cost " +
                       std::to_string(sol.cost) + ")";
        continue;
      }
      if (!best || sol.cost < best->cost) best = std::move(sol);
    } catch (const Error& e) {
      last_failure = e.what();
    }
  }
  if (!best) throw Error(Errc::NonConvergence, "calibration fit failed: " + last_failure);

  const Eigen::VectorXd& p = best->params;
  CalibrationFit fit;
  fit.model.r_s_nm = options.r_s_nm;
  fit.model.r_a_nm = p(0);
  fit.model.alpha = std::exp(p(1));
  fit.model.beta = std::exp(p(2));
  fit.model.mode = mode;
  const auto& gs = problem.groups();
  for (std::size_t g = 0; g < gs.size(); ++g)
    fit.model.per_el[gs[g].el] = {p(static_cast<Eigen::Index>(3 + 2 * g)), p(static_cast<Eigen::Index>(4 + 2 * g))};

  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(n, n);
  T(1, 1) = fit.model.alpha;
  T(2, 2) = fit.model.beta;
  fit.absolute_sigma = all_sigma;
  fit.model.covariance = T * lsq::covariance(best->jacobian, best->cost, !all_sigma) * T.transpose();
  fit.cost = best->cost;
  fit.observations = obs.size();
  fit.reduced_chi2 = best->cost / static_cast<double>(obs.size() - nparam);
  fit.iterations = best->iterations;
  fit.converged = best->converged;
  fit.stop_reason = std::string(lsq::stop_reason_name(best->reason));
  fit.model.validate();
  return fit;
}

} // namespace vbquant
