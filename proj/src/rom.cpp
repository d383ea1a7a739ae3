#include "apse/rom.hpp"

#include <cmath>
#include <sstream>

namespace apse {

namespace {

constexpr double kMinRcond = 1e-14;
constexpr double kOrthoDrift = 1e-12;

// sum_i c_i H_i applied to the columns of `cols`: returns (sum_i c_i H_i) * cols.
Mat combined_action(const HessianTensor& hessian, const Vec& coeffs, const Mat& cols) {
  return hessian.combine(coeffs) * cols;
}

}  // namespace

ReducedOrderModel::ReducedOrderModel(std::shared_ptr<const QuadraticResidualModel> qrm)
    : qrm_(std::move(qrm)) {
  if (!qrm_) throw Error(ErrorKind::DegenerateBasis, "reduced model needs a quadratic model");
}

ReducedOrderModel ReducedOrderModel::initialize(std::shared_ptr<const QuadraticResidualModel> qrm) {
  ReducedOrderModel rom(std::move(qrm));
  const Vec x0 = rom.qrm_->expansion_point.stacked();
  const double norm = x0.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorKind::DegenerateBasis, "initial state has zero norm");
  }
  return from_basis(rom.qrm_, x0 / norm);
}

ReducedOrderModel ReducedOrderModel::from_basis(std::shared_ptr<const QuadraticResidualModel> qrm,
                                                const Mat& basis, Index hessian_columns) {
  ReducedOrderModel rom(std::move(qrm));
  const QuadraticResidualModel& q = *rom.qrm_;
  if (basis.rows() != q.dim() || basis.cols() < 1 || basis.cols() > q.dim()) {
    std::ostringstream msg;
    msg << "basis is " << basis.rows() << "x" << basis.cols() << ", state dimension is " << q.dim();
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }
  const Index qh = hessian_columns < 0 ? basis.cols() : std::min(hessian_columns, basis.cols());
  rom.basis_ = basis;
  rom.jv_ = q.jacobian * basis;
  rom.r_hat_ = rom.jv_.transpose() * q.constant;
  rom.g_hat_ = rom.jv_.transpose() * rom.jv_;
  const Mat vh = basis.leftCols(qh);
  rom.h_blocks_.reserve(static_cast<size_t>(qh));
  for (Index k = 0; k < qh; ++k) {
    Mat block = vh.transpose() * combined_action(q.hessian, rom.jv_.col(k), vh);
    rom.h_blocks_.push_back(0.5 * (block + block.transpose()));
  }
  rom.refactor();
  return rom;
}

void ReducedOrderModel::refactor() {
  g_factor_.compute(g_hat_);
  const double rcond = g_factor_.info() == Eigen::Success ? g_factor_.rcond() : 0.0;
  if (!(rcond >= kMinRcond)) {
    std::ostringstream msg;
    msg << "reduced normal operator is singular (rcond ~ " << rcond << ")";
    throw Error(ErrorKind::DegenerateBasis, msg.str());
  }
}

Mat ReducedOrderModel::h_hat() const {
  const Index qh = hessian_dim();
  Mat out(qh, qh * qh);
  for (Index k = 0; k < qh; ++k) {
    const Mat& block = h_blocks_[static_cast<size_t>(k)];
    for (Index a = 0; a < qh; ++a) {
      for (Index b = 0; b < qh; ++b) out(k, a * qh + b) = block(a, b);
    }
  }
  return out;
}

Vec ReducedOrderModel::reduce_weighted(const Vec& weighted_profile) const {
  if (weighted_profile.size() != jv_.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "profile length does not match reduced model");
  }
  return jv_.transpose() * weighted_profile;
}

Vec ReducedOrderModel::reduce_profile(const MeasurementProfile& profile) const {
  return reduce_weighted(qrm_->weighted_measurement(profile));
}

Vec ReducedOrderModel::reduced_residual(const Vec& coords, const Vec& reduced_profile) const {
  if (coords.size() != dim() || reduced_profile.size() != dim()) {
    throw Error(ErrorKind::DimensionMismatch, "reduced coordinates do not match basis size");
  }
  Vec r = r_hat_ + g_hat_ * coords - reduced_profile;
  const Index qh = hessian_dim();
  const Vec dh = coords.head(qh);
  for (Index k = 0; k < qh; ++k) {
    r(k) += 0.5 * dh.dot(h_blocks_[static_cast<size_t>(k)] * dh);
  }
  return r;
}

RmseResult ReducedOrderModel::rmse_solve(const Vec& reduced_profile, const RomConfig& config,
                                         const Vec* start) const {
  RmseResult result;
  result.coords = start ? *start : Vec::Zero(dim());
  for (int it = 0; it < config.max_iters; ++it) {
    const Vec r = reduced_residual(result.coords, reduced_profile);
    if (inf_norm(r) < config.reduced_tol) {
      result.converged = true;
      break;
    }
    const Vec step = g_factor_.solve(r);
    result.coords -= step;
    result.iterations = it + 1;
    result.final_step_norm = inf_norm(step);
    if (!std::isfinite(result.final_step_norm)) break;
    if (result.final_step_norm < config.reduced_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

CartesianState ReducedOrderModel::lift(const Vec& coords) const {
  if (coords.size() != dim()) {
    throw Error(ErrorKind::DimensionMismatch, "reduced coordinates do not match basis size");
  }
  return CartesianState::from_stacked(qrm_->expansion_point.stacked() + basis_ * coords);
}

bool ReducedOrderModel::dse_update(const CartesianState& xc, double relative_tol,
                                   bool extend_hessian) {
  const Vec x = xc.stacked();
  if (x.size() != basis_.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "state does not match basis dimension");
  }
  if (dim() == basis_.rows()) return false;
  Vec v = x - basis_ * (basis_.transpose() * x);
  v -= basis_ * (basis_.transpose() * v);
  const double norm = v.norm();
  if (!(norm > relative_tol * x.norm())) return false;
  v /= norm;
  if (inf_norm(basis_.transpose() * v) > kOrthoDrift) {
    v -= basis_ * (basis_.transpose() * v);
    v.normalize();
  }
  append_column(v, extend_hessian && hessian_dim() == dim());
  return true;
}

void ReducedOrderModel::append_column(const Vec& v, bool extend_hessian) {
  const QuadraticResidualModel& q = *qrm_;
  const Index qold = dim();
  const Vec jv_new = q.jacobian * v;

  basis_.conservativeResize(Eigen::NoChange, qold + 1);
  basis_.col(qold) = v;
  jv_.conservativeResize(Eigen::NoChange, qold + 1);
  jv_.col(qold) = jv_new;

  r_hat_.conservativeResize(qold + 1);
  r_hat_(qold) = jv_new.dot(q.constant);

  const Vec g_col = jv_.transpose() * jv_new;
  g_hat_.conservativeResize(qold + 1, qold + 1);
  g_hat_.col(qold) = g_col;
  g_hat_.row(qold) = g_col.transpose();

  if (extend_hessian) {
    // w_i^T = (H_i v)^T V for every measurement row i.
    Mat hv(q.rows(), q.dim());
    for (Index i = 0; i < q.rows(); ++i) hv.row(i) = (q.hessian.row(i) * v).transpose();
    const Mat w = hv * basis_;                                 // rows x (q+1)
    const Mat cross = jv_.leftCols(qold).transpose() * w;      // q x (q+1)
    for (Index k = 0; k < qold; ++k) {
      Mat& block = h_blocks_[static_cast<size_t>(k)];
      block.conservativeResize(qold + 1, qold + 1);
      block.col(qold) = cross.row(k).transpose();
      block.row(qold) = cross.row(k);
    }
    Mat fresh = basis_.transpose() * combined_action(q.hessian, jv_new, basis_);
    h_blocks_.push_back(0.5 * (fresh + fresh.transpose()));
  }
  refactor();
}

double ReducedOrderModel::orthonormality_error() const {
  const Mat gram = basis_.transpose() * basis_;
  return (gram - Mat::Identity(dim(), dim())).cwiseAbs().maxCoeff();
}

}  // namespace apse
