#pragma once

#include <vector>

#include "apse/grid_model.hpp"
#include "apse/measurement.hpp"

namespace apse {

/// Active and reactive injections at every non-slack bus: [P; Q] in state order.
Vec eval_injections(const PolarState& x, const AdmittanceModel& model);

/// Sending-end power on each listed line: [P block; Q block].
Vec eval_flows(const PolarState& x, const AdmittanceModel& model, const std::vector<Index>& lines);

/// Voltage magnitudes at the listed buses. The substation is not a state and is rejected.
Vec eval_magnitudes(const PolarState& x, const AdmittanceModel& model,
                    const std::vector<Index>& buses);

/// d[M; F; S]/d[V; theta] at x. Columns follow the state ordering of PolarState::stacked().
Mat jacobian_polar(const PolarState& x, const AdmittanceModel& model, const MeasurementSet& set);

/// Measured outputs in Cartesian coordinates with squared magnitudes:
/// [|V|^2; F; S]. Evaluated through the complex Y-bus route.
Vec cartesian_outputs(const CartesianState& xc, const AdmittanceModel& model,
                      const MeasurementSet& set);

struct JacobianBlocks {
  Mat magnitude;  // rows of |V|^2 (two nonzeros each: 2 V_r, 2 V_i)
  Mat flow;
  Mat injection;

  Mat stacked() const;
  /// diag(w) * stacked()
  Mat weighted(const Vec& w) const;
};

/// Jacobian of cartesian_outputs w.r.t. [V_r; V_i]. Every entry is affine in the state.
JacobianBlocks jacobian_cartesian(const CartesianState& xc, const AdmittanceModel& model,
                                  const MeasurementSet& set);

/// Constant per-row Hessians of the Cartesian measurement functions.
///
/// H_c is never materialized as a rows x (2p)^2 matrix. Each measurement row
/// keeps its own sparse symmetric 2p x 2p matrix H_i; the Kronecker contraction
/// H_c (u (x) v) is evaluated row by row from those.
class HessianTensor {
 public:
  HessianTensor() = default;
  HessianTensor(Index dim, std::vector<SpMat> rows);

  Index dim() const { return dim_; }
  Index rows() const { return static_cast<Index>(rows_.size()); }
  const SpMat& row(Index i) const { return rows_[static_cast<size_t>(i)]; }

  /// [1/2 d^T H_i d]_i
  Vec quadratic(const Vec& d) const;
  /// [u^T H_i v]_i
  Vec bilinear(const Vec& u, const Vec& v) const;

  /// Row i of H_c as a sparse vector over the (2p)^2 Kronecker index k*dim + r.
  Eigen::SparseVector<double> kron_row(Index i) const;
  /// H_c (d (x) d) through the Kronecker rows. Equals 2 * quadratic(d) bit for bit.
  Vec kron_contract(const Vec& d) const;

  /// sum_i c_i H_i
  SpMat combine(const Vec& coeffs) const;
  /// Row-wise scaling: H_i <- w_i H_i.
  HessianTensor scaled(const Vec& w) const;

 private:
  Index dim_ = 0;
  std::vector<SpMat> rows_;
};

HessianTensor hessian_tensors(const AdmittanceModel& model, const MeasurementSet& set);

/// Exact second-order form of the weighted Cartesian residual around x_c0:
///   r(dx) = R_c0 + J_c0 dx + 1/2 H_c (dx (x) dx) - r_w
/// where r_w is the weighted (magnitude-squared) measurement profile.
struct QuadraticResidualModel {
  CartesianState expansion_point;
  Vec weights;            // Sigma^{-1/2} with squared-magnitude rows
  Vec constant;           // R_c0
  Mat jacobian;           // J_c0, weighted
  HessianTensor hessian;  // weighted
  Index mag_rows = 0;

  Index rows() const { return constant.size(); }
  Index dim() const { return jacobian.cols(); }

  /// w .* [m^2; f; s]
  Vec weighted_measurement(const MeasurementProfile& profile) const;
};

/// `squared_covariance` is the covariance after squared_magnitude_transform.
QuadraticResidualModel build_quadratic_model(const CartesianState& xc0,
                                             const AdmittanceModel& model,
                                             const MeasurementSet& set,
                                             const CovarianceModel& squared_covariance);

Vec quadratic_residual(const QuadraticResidualModel& qrm, const Vec& dx,
                       const Vec& weighted_profile);

}  // namespace apse
