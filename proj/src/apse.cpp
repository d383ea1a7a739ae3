#include "apse/apse.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace apse {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool usable_start(const PolarState& x, double min_magnitude) {
  return x.stacked().allFinite() && x.magnitude.minCoeff() >= min_magnitude &&
         x.magnitude.maxCoeff() <= 1.0 / min_magnitude;
}

}  // namespace

Vec RecycledFactors::step(const Vec& weighted_residual) const {
  return r.triangularView<Eigen::Upper>().solve(q.transpose() * weighted_residual);
}

RecycledFactors prefactor(const PolarState& x_ref, const AdmittanceModel& model,
                          const MeasurementSet& set, const CovarianceModel& covariance) {
  const Mat wj = covariance.weight_sqrt().asDiagonal() * jacobian_polar(x_ref, model, set);
  if (wj.rows() < wj.cols()) {
    throw Error(ErrorKind::Observability, "fewer measurement rows than unknowns");
  }
  const Eigen::HouseholderQR<Mat> qr(wj);
  RecycledFactors f;
  f.q = qr.householderQ() * Mat::Identity(wj.rows(), wj.cols());
  f.r = qr.matrixQR().topRows(wj.cols()).triangularView<Eigen::Upper>();
  const Vec diag = f.r.diagonal().cwiseAbs();
  if (!(diag.minCoeff() > 1e-12 * diag.maxCoeff())) {
    throw Error(ErrorKind::Observability, "weighted Jacobian is rank deficient at the reference");
  }
  return f;
}

AcceptTestResult accept_test(const RecycledFactors& factors, const PolarState& candidate,
                             const MeasurementProfile& profile, const MeasurementSet& set,
                             const AdmittanceModel& model, const CovarianceModel& covariance,
                             double eps_n) {
  const Vec r = assemble_residual(candidate, profile, set, model);
  AcceptTestResult out;
  out.value = inf_norm(factors.step(covariance.weight_sqrt().cwiseProduct(r)));
  out.accepted = std::isfinite(out.value) && out.value < eps_n;
  return out;
}

const char* to_string(SolvePath path) noexcept {
  switch (path) {
    case SolvePath::RmseAccepted: return "rmse-accepted";
    case SolvePath::FallbackGnvqr: return "fallback-gnvqr";
    case SolvePath::Failed: return "failed";
  }
  return "unknown";
}

ApseEstimator::ApseEstimator(const AdmittanceModel& model, const MeasurementSet& set,
                             const CovarianceModel& covariance, ApseConfig config)
    : model_(&model), set_(&set), covariance_(covariance), config_(config) {
  config_.solver.validate();
  set.validate(model);
  if (covariance.size() != set.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "covariance does not match measurement set");
  }
}

const SolveReport& ApseEstimator::bootstrap(const MeasurementProfile& profile,
                                            const PolarState& start) {
  const auto t0 = Clock::now();
  bootstrap_report_ = gnvqr_solve(start, profile, *set_, *model_, covariance_, config_.solver);
  if (!bootstrap_report_.converged) {
    throw Error(ErrorKind::Infeasible,
                "bootstrap profile did not converge: " + bootstrap_report_.failure);
  }
  reference_ = bootstrap_report_.state;
  const auto squared = squared_magnitude_transform(profile, covariance_);
  qrm_ = std::make_shared<const QuadraticResidualModel>(build_quadratic_model(
      polar_to_cartesian(reference_), *model_, *set_, squared.covariance));
  rom_ = ReducedOrderModel::initialize(qrm_);
  factors_ = prefactor(reference_, *model_, *set_, covariance_);
  processed_ = 0;
  setup_time_ = seconds_since(t0);
  return bootstrap_report_;
}

void ApseEstimator::load_basis(const Mat& basis) {
  if (!qrm_) throw Error(ErrorKind::DegenerateBasis, "load_basis called before bootstrap");
  rom_ = ReducedOrderModel::from_basis(qrm_, basis);
}

const ReducedOrderModel& ApseEstimator::rom() const {
  if (!rom_) throw Error(ErrorKind::DegenerateBasis, "estimator has not been bootstrapped");
  return *rom_;
}

ProfileResult ApseEstimator::solve(const MeasurementProfile& profile) {
  if (!rom_) throw Error(ErrorKind::DegenerateBasis, "estimator has not been bootstrapped");
  const auto t0 = Clock::now();
  ProfileResult out;
  out.profile_id = profile.id;
  out.basis_size = rom_->dim();

  const RmseResult rmse = rom_->rmse_solve(rom_->reduce_profile(profile), config_.rom);
  out.rmse_iters = rmse.iterations;

  std::optional<PolarState> lifted;
  if (rmse.coords.allFinite()) {
    try {
      lifted = cartesian_to_polar(rom_->lift(rmse.coords));
    } catch (const Error&) {
      lifted.reset();
    }
  }

  if (lifted) {
    const AcceptTestResult test = accept_test(factors_, *lifted, profile, *set_, *model_,
                                              covariance_, config_.solver.step_tol);
    ++factors_.staleness;
    out.accept_value = test.value;
    if (test.accepted) {
      out.path = SolvePath::RmseAccepted;
      out.state = std::move(*lifted);
    }
  } else {
    out.accept_value = std::numeric_limits<double>::infinity();
  }

  if (out.path != SolvePath::RmseAccepted) {
    const bool warm = lifted && usable_start(*lifted, config_.solver.min_magnitude);
    auto attempt = [&](const PolarState& start) {
      try {
        return gnvqr_solve(start, profile, *set_, *model_, covariance_, config_.solver);
      } catch (const Error& e) {
        SolveReport failed;
        failed.state = start;
        failed.failure = e.what();
        return failed;
      }
    };
    SolveReport report = attempt(warm ? *lifted : reference_);
    if (!report.converged && warm) {
      // A poor lifted state can derail the warm start; retry from the reference.
      const int spent = report.iterations;
      report = attempt(reference_);
      report.iterations += spent;
    }
    out.gnvqr_iters = report.iterations;
    out.state = std::move(report.state);
    if (report.converged) {
      out.path = SolvePath::FallbackGnvqr;
      const bool extend = processed_ < config_.rom.hessian_cap;
      out.basis_grew =
          rom_->dse_update(polar_to_cartesian(out.state), config_.rom.expansion_tol, extend);
      if (config_.refresh_factors_on_fallback) {
        factors_ = prefactor(out.state, *model_, *set_, covariance_);
      }
    } else {
      out.path = SolvePath::Failed;
      out.failure = report.failure;
    }
  }
  ++processed_;
  out.wall_time = seconds_since(t0);
  return out;
}

ApseRun apse_run(const MeasurementProfile& bootstrap_profile,
                 const std::vector<MeasurementProfile>& profiles, const AdmittanceModel& model,
                 const MeasurementSet& set, const CovarianceModel& covariance,
                 const ApseConfig& config, const Mat* initial_basis) {
  ApseEstimator estimator(model, set, covariance, config);
  ApseRun run;
  run.bootstrap = estimator.bootstrap(
      bootstrap_profile, PolarState::flat(model.state_count(), model.slack_voltage()));
  if (initial_basis) estimator.load_basis(*initial_basis);
  run.setup_time = estimator.setup_time();
  run.results.reserve(profiles.size());
  for (const auto& profile : profiles) run.results.push_back(estimator.solve(profile));
  run.basis = estimator.rom().basis();
  return run;
}

}  // namespace apse
