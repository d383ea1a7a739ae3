#pragma once

#include <cstdint>
#include <vector>

#include "apse/grid_model.hpp"

namespace apse {

/// Device placement. Rows are always ordered [magnitudes; flows; injections],
/// and each flow/injection device contributes a P block entry and a Q block
/// entry: flows = [P(l) for l in flow_lines; Q(l) for l in flow_lines].
struct MeasurementSet {
  std::vector<Index> mag_buses;   // bus indices
  std::vector<Index> flow_lines;  // line indices, metered at the sending end
  std::vector<Index> inj_buses;   // bus indices

  Index mag_rows() const { return static_cast<Index>(mag_buses.size()); }
  Index flow_rows() const { return 2 * static_cast<Index>(flow_lines.size()); }
  Index inj_rows() const { return 2 * static_cast<Index>(inj_buses.size()); }
  Index rows() const { return mag_rows() + flow_rows() + inj_rows(); }

  Index flow_offset() const { return mag_rows(); }
  Index inj_offset() const { return mag_rows() + flow_rows(); }

  /// Throws InvalidMeasurement for out-of-range indices, duplicates, or
  /// magnitude/injection devices placed on the substation.
  void validate(const AdmittanceModel& model) const;
};

struct RedundancyReport {
  bool redundant = false;
  Index rows = 0;       // m + f + s
  Index unknowns = 0;   // 2p
  Index slack = 0;      // rows - unknowns
  double ratio = 0.0;   // slack / unknowns
};

RedundancyReport validate_redundancy(const MeasurementSet& set, Index p);

struct MeasurementSigmas {
  double mag = 0.004;
  double flow = 0.01;
  double inj = 0.02;
};

/// Diagonal measurement covariance with its cached inverse square root.
class CovarianceModel {
 public:
  CovarianceModel() = default;
  explicit CovarianceModel(Vec variances);

  static CovarianceModel from_sigmas(const MeasurementSet& set, const MeasurementSigmas& sigmas);

  const Vec& variances() const { return variances_; }
  const Vec& weight_sqrt() const { return weight_sqrt_; }
  Index size() const { return variances_.size(); }

 private:
  Vec variances_;
  Vec weight_sqrt_;
};

struct MeasurementProfile {
  Vec magnitudes;
  Vec flows;        // [P block; Q block]
  Vec injections;   // [P block; Q block]
  std::int64_t id = 0;

  Vec stacked() const;
  static MeasurementProfile from_stacked(const Vec& r, const MeasurementSet& set,
                                         std::int64_t id = 0);
};

/// Measured model outputs at x in measurement-row order: [M(x); F(x); S(x)].
Vec measured_outputs(const PolarState& x, const MeasurementSet& set, const AdmittanceModel& model);

/// r(x) = [M(x) - m; F(x) - f; S(x) - s] restricted to the measured rows.
Vec assemble_residual(const PolarState& x, const MeasurementProfile& profile,
                      const MeasurementSet& set, const AdmittanceModel& model);

struct SquaredMagnitudeTransform {
  MeasurementProfile profile;
  CovarianceModel covariance;
};

/// Replaces each magnitude measurement m by m^2 and its variance by
/// (2m)^2 sigma^2 (first-order delta method). Other rows pass through.
SquaredMagnitudeTransform squared_magnitude_transform(const MeasurementProfile& profile,
                                                      const CovarianceModel& covariance);

}  // namespace apse
