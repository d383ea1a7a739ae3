#pragma once

#include <memory>
#include <vector>

#include "apse/physics.hpp"

namespace apse {

struct RomConfig {
  double expansion_tol = 1e-8;  // relative to ||x_c||
  int hessian_cap = 50;         // profiles after which the quadratic operator stops growing
  double reduced_tol = 1e-10;
  int max_iters = 50;
};

struct RmseResult {
  Vec coords;  // reduced increment around x_c0
  int iterations = 0;
  bool converged = false;
  double final_step_norm = 0.0;
};

/// Orthonormal basis V (2p x q) with the projected operators of the weighted
/// quadratic residual model:
///   R-hat = (J V)^T R_c0,  G-hat = (J V)^T (J V),  H-hat_k = V^T (sum_i (J V)_ik H_i) V.
///
/// H-hat is kept as one symmetric q_h x q_h block per reduced output row. It
/// covers the first q_h basis columns; once growth of the quadratic operator is
/// switched off, later columns only extend J V, R-hat and G-hat.
class ReducedOrderModel {
 public:
  /// q = 1 with V = x_c0 / ||x_c0||. Throws DegenerateBasis on a zero state.
  static ReducedOrderModel initialize(std::shared_ptr<const QuadraticResidualModel> qrm);

  /// Assembles every operator from scratch for an orthonormal `basis`; the
  /// quadratic operator covers its first `hessian_columns` columns (-1 = all).
  static ReducedOrderModel from_basis(std::shared_ptr<const QuadraticResidualModel> qrm,
                                      const Mat& basis, Index hessian_columns = -1);

  const QuadraticResidualModel& quadratic_model() const { return *qrm_; }
  const Mat& basis() const { return basis_; }
  Index dim() const { return basis_.cols(); }
  Index hessian_dim() const { return static_cast<Index>(h_blocks_.size()); }

  const Mat& jv() const { return jv_; }
  const Vec& r_hat() const { return r_hat_; }
  const Mat& g_hat() const { return g_hat_; }
  const Mat& h_block(Index k) const { return h_blocks_[static_cast<size_t>(k)]; }
  /// q_h x q_h^2 with column index a * q_h + b.
  Mat h_hat() const;

  /// (J V)^T Sigma^{-1/2} [m^2; f; s]
  Vec reduce_profile(const MeasurementProfile& profile) const;
  Vec reduce_weighted(const Vec& weighted_profile) const;

  /// R-hat + G-hat d + 1/2 H-hat (d (x) d) - reduced_profile
  Vec reduced_residual(const Vec& coords, const Vec& reduced_profile) const;

  /// Chord iteration d <- d - G-hat^{-1} r-hat(d) with the cached factor.
  RmseResult rmse_solve(const Vec& reduced_profile, const RomConfig& config,
                        const Vec* start = nullptr) const;

  /// x_c0 + V d
  CartesianState lift(const Vec& coords) const;

  /// Projection residual v = x_c - V V^T x_c (two Gram-Schmidt passes). When
  /// ||v|| > tol * ||x_c|| appends v / ||v|| and extends the operators
  /// incrementally. Returns true when the basis grew.
  bool dse_update(const CartesianState& xc, double relative_tol, bool extend_hessian);

  /// ||V^T V - I||_max
  double orthonormality_error() const;

 private:
  explicit ReducedOrderModel(std::shared_ptr<const QuadraticResidualModel> qrm);
  void refactor();
  void append_column(const Vec& v, bool extend_hessian);

  std::shared_ptr<const QuadraticResidualModel> qrm_;
  Mat basis_;
  Mat jv_;
  Vec r_hat_;
  Mat g_hat_;
  std::vector<Mat> h_blocks_;
  Eigen::LDLT<Mat> g_factor_;
};

}  // namespace apse
