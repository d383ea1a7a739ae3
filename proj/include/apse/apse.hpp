#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apse/gauss_newton.hpp"
#include "apse/rom.hpp"

namespace apse {

/// Thin QR of Sigma^{-1/2} J_r at a reference state, reused for acceptance tests.
struct RecycledFactors {
  Mat q;  // rows x 2p, orthonormal columns
  Mat r;  // 2p x 2p, upper triangular
  int staleness = 0;  // profiles tested since the factorization

  /// R^{-1} Q^T b
  Vec step(const Vec& weighted_residual) const;
};

/// Throws Error(Observability) when the weighted Jacobian is rank deficient.
RecycledFactors prefactor(const PolarState& x_ref, const AdmittanceModel& model,
                          const MeasurementSet& set, const CovarianceModel& covariance);

struct AcceptTestResult {
  bool accepted = false;
  double value = 0.0;  // ||R^{-1} Q^T Sigma^{-1/2} r(x)||_inf
};

AcceptTestResult accept_test(const RecycledFactors& factors, const PolarState& candidate,
                             const MeasurementProfile& profile, const MeasurementSet& set,
                             const AdmittanceModel& model, const CovarianceModel& covariance,
                             double eps_n);

enum class SolvePath { RmseAccepted, FallbackGnvqr, Failed };

const char* to_string(SolvePath path) noexcept;

struct ProfileResult {
  std::int64_t profile_id = 0;
  PolarState state;
  SolvePath path = SolvePath::Failed;
  int rmse_iters = 0;
  int gnvqr_iters = 0;
  Index basis_size = 0;  // q used for the RMSE attempt
  double accept_value = 0.0;
  double wall_time = 0.0;
  bool basis_grew = false;
  std::string failure;
};

struct ApseConfig {
  SolverConfig solver;
  RomConfig rom;
  bool refresh_factors_on_fallback = false;
};

/// Sequential estimator over a stream of profiles: RMSE attempt, recycled-factor
/// acceptance test, GNvQR fallback warm-started from the lifted state, and
/// basis expansion after every fallback.
class ApseEstimator {
 public:
  ApseEstimator(const AdmittanceModel& model, const MeasurementSet& set,
                const CovarianceModel& covariance, ApseConfig config = {});

  /// Solves the bootstrap profile with GNvQR and builds the expansion, the
  /// reduced model (q = 1) and the recycled factors around its solution.
  /// Throws Error(Infeasible) when the bootstrap solve does not converge.
  const SolveReport& bootstrap(const MeasurementProfile& profile, const PolarState& start);

  /// Restores a checkpointed basis after bootstrap().
  void load_basis(const Mat& basis);

  ProfileResult solve(const MeasurementProfile& profile);

  bool ready() const { return rom_.has_value(); }
  const ReducedOrderModel& rom() const;
  const RecycledFactors& factors() const { return factors_; }
  const QuadraticResidualModel& quadratic_model() const { return *qrm_; }
  const PolarState& reference_state() const { return reference_; }
  std::int64_t profiles_processed() const { return processed_; }
  double setup_time() const { return setup_time_; }
  const ApseConfig& config() const { return config_; }

 private:
  const AdmittanceModel* model_;
  const MeasurementSet* set_;
  CovarianceModel covariance_;
  ApseConfig config_;
  SolveReport bootstrap_report_;
  PolarState reference_;
  std::shared_ptr<const QuadraticResidualModel> qrm_;
  std::optional<ReducedOrderModel> rom_;
  RecycledFactors factors_;
  std::int64_t processed_ = 0;
  double setup_time_ = 0.0;
};

struct ApseRun {
  SolveReport bootstrap;
  double setup_time = 0.0;  // bootstrap solve plus operator construction, seconds
  std::vector<ProfileResult> results;
  Mat basis;
};

ApseRun apse_run(const MeasurementProfile& bootstrap_profile,
                 const std::vector<MeasurementProfile>& profiles, const AdmittanceModel& model,
                 const MeasurementSet& set, const CovarianceModel& covariance,
                 const ApseConfig& config = {}, const Mat* initial_basis = nullptr);

}  // namespace apse
