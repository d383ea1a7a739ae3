#pragma once

#include <limits>
#include <string>

#include "apse/measurement.hpp"
#include "apse/physics.hpp"

namespace apse {

struct SolverConfig {
  double step_tol = 1e-6;          // on ||dx||_inf, pu / rad
  double gradient_tol = 1e-6;      // on ||J^T S^-1 r||_inf, checked once the step is small
  int max_iters = 25;
  double min_magnitude = 0.3;      // abort when an iterate drops below this
  double divergence_limit = 10.0;  // abort when ||dx||_inf exceeds this

  void validate() const;
};

struct SolveReport {
  PolarState state;
  int iterations = 0;
  double final_step_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
  double wall_time = 0.0;  // seconds
  std::string failure;     // empty when converged
};

/// ||dx||_inf < step_tol (strict).
bool step_converged(const Vec& dx, const SolverConfig& config);

/// Solves G dx = -J^T Sigma^{-1} r with G = J^T Sigma^{-1} J (LDLT).
/// Throws ConditioningError when the reciprocal condition estimate of G is
/// below `min_rcond`.
Vec gain_matrix_step(const Vec& residual, const Mat& jacobian, const CovarianceModel& covariance,
                     double min_rcond = 1e-14);

/// dx = -R^{-1} Q^T Sigma^{-1/2} r from a Householder QR of Sigma^{-1/2} J.
/// Throws Error(Observability) when R has a negligible diagonal entry.
Vec qr_step(const Vec& residual, const Mat& jacobian, const CovarianceModel& covariance);

/// First-order optimality measure J^T Sigma^{-1} r(x).
Vec wls_gradient(const PolarState& x, const MeasurementProfile& profile, const MeasurementSet& set,
                 const AdmittanceModel& model, const CovarianceModel& covariance);

/// Gauss-Newton with a fresh QR of the weighted Jacobian every iteration.
/// Non-convergence is reported, not thrown; rank deficiency throws.
SolveReport gnvqr_solve(const PolarState& start, const MeasurementProfile& profile,
                        const MeasurementSet& set, const AdmittanceModel& model,
                        const CovarianceModel& covariance, const SolverConfig& config = {});

}  // namespace apse
