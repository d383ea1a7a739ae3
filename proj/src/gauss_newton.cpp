#include "apse/gauss_newton.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace apse {

namespace {

constexpr double kRankTol = 1e-12;

void check_shapes(const Vec& residual, const Mat& jacobian, const CovarianceModel& covariance) {
  if (residual.size() != jacobian.rows() || covariance.size() != residual.size()) {
    std::ostringstream msg;
    msg << "residual (" << residual.size() << "), jacobian (" << jacobian.rows() << "x"
        << jacobian.cols() << ") and covariance (" << covariance.size() << ") disagree";
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }
  if (jacobian.rows() < jacobian.cols()) {
    throw Error(ErrorKind::Observability, "fewer measurement rows than unknowns");
  }
}

void wrap_angles(PolarState& x) {
  for (Index k = 0; k < x.size(); ++k) x.angle(k) = wrap_angle(x.angle(k));
}

}  // namespace

void SolverConfig::validate() const {
  if (!(step_tol > 0.0)) throw Error(ErrorKind::Parse, "step_tol must be positive");
  if (!(gradient_tol > 0.0)) throw Error(ErrorKind::Parse, "gradient_tol must be positive");
  if (max_iters < 1) throw Error(ErrorKind::Parse, "max_iters must be at least 1");
  if (!(divergence_limit > 0.0)) throw Error(ErrorKind::Parse, "divergence_limit must be positive");
}

bool step_converged(const Vec& dx, const SolverConfig& config) {
  return inf_norm(dx) < config.step_tol;
}

Vec gain_matrix_step(const Vec& residual, const Mat& jacobian, const CovarianceModel& covariance,
                     double min_rcond) {
  check_shapes(residual, jacobian, covariance);
  const Vec inv_var = covariance.variances().cwiseInverse();
  const Mat weighted_t = jacobian.transpose() * inv_var.asDiagonal();
  const Mat gain = weighted_t * jacobian;
  Eigen::LDLT<Mat> ldlt(gain);
  double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
  // The estimate misses exactly zero pivots; bound it by the pivot spread too.
  const Vec pivots = ldlt.vectorD().cwiseAbs();
  if (pivots.size() > 0) rcond = std::min(rcond, pivots.minCoeff() / pivots.maxCoeff());
  if (!(rcond >= min_rcond)) {
    std::ostringstream msg;
    msg << "gain matrix is singular or ill-conditioned (rcond ~ " << rcond << ")";
    throw ConditioningError(msg.str(), rcond);
  }
  return -ldlt.solve(weighted_t * residual);
}

Vec qr_step(const Vec& residual, const Mat& jacobian, const CovarianceModel& covariance) {
  check_shapes(residual, jacobian, covariance);
  const Vec& w = covariance.weight_sqrt();
  const Eigen::HouseholderQR<Mat> qr(w.asDiagonal() * jacobian);
  const Vec diag = qr.matrixQR().diagonal().cwiseAbs();
  if (diag.size() > 0 && !(diag.minCoeff() > kRankTol * diag.maxCoeff())) {
    std::ostringstream msg;
    msg << "weighted Jacobian is rank deficient (|R_ii| min/max = " << diag.minCoeff() << "/"
        << diag.maxCoeff() << "); the measurement set is not observable";
    throw Error(ErrorKind::Observability, msg.str());
  }
  return -qr.solve(Vec(w.cwiseProduct(residual)));
}

Vec wls_gradient(const PolarState& x, const MeasurementProfile& profile, const MeasurementSet& set,
                 const AdmittanceModel& model, const CovarianceModel& covariance) {
  const Vec r = assemble_residual(x, profile, set, model);
  const Mat jac = jacobian_polar(x, model, set);
  return jac.transpose() * covariance.variances().cwiseInverse().cwiseProduct(r);
}

SolveReport gnvqr_solve(const PolarState& start, const MeasurementProfile& profile,
                        const MeasurementSet& set, const AdmittanceModel& model,
                        const CovarianceModel& covariance, const SolverConfig& config) {
  config.validate();
  if (start.size() != model.state_count()) {
    throw Error(ErrorKind::DimensionMismatch, "start state does not match the network");
  }
  const auto t0 = std::chrono::steady_clock::now();
  SolveReport report;
  PolarState x = start;
  for (int it = 1; it <= config.max_iters; ++it) {
    const Vec r = assemble_residual(x, profile, set, model);
    const Vec dx = qr_step(r, jacobian_polar(x, model, set), covariance);
    report.iterations = it;
    report.final_step_norm = inf_norm(dx);
    if (!std::isfinite(report.final_step_norm) || report.final_step_norm > config.divergence_limit) {
      report.failure = "divergence: step norm exceeded limit";
      break;
    }
    x = PolarState::from_stacked(x.stacked() + dx);
    wrap_angles(x);
    if (x.magnitude.minCoeff() < config.min_magnitude) {
      report.failure = "voltage magnitude collapsed below guard";
      break;
    }
    if (step_converged(dx, config) &&
        inf_norm(wls_gradient(x, profile, set, model, covariance)) <= config.gradient_tol) {
      report.converged = true;
      break;
    }
  }
  if (!report.converged && report.failure.empty()) report.failure = "iteration limit reached";
  report.state = std::move(x);
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace apse
