#include "apse/measurement.hpp"

#include <set>
#include <sstream>

#include "apse/physics.hpp"

namespace apse {

namespace {

void check_unique(const std::vector<Index>& ids, const char* what) {
  std::set<Index> seen;
  for (Index id : ids) {
    if (!seen.insert(id).second) {
      std::ostringstream msg;
      msg << "duplicate " << what << " device at index " << id;
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
  }
}

void check_bus_range(const std::vector<Index>& buses, const AdmittanceModel& model,
                     const char* what) {
  for (Index bus : buses) {
    if (bus < 0 || bus >= model.bus_count()) {
      std::ostringstream msg;
      msg << what << " device references bus " << bus << " outside [0, "
          << model.bus_count() << ")";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
    if (bus == model.substation()) {
      std::ostringstream msg;
      msg << what << " device placed on the substation bus, which is not a state";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
  }
}

}  // namespace

void MeasurementSet::validate(const AdmittanceModel& model) const {
  check_bus_range(mag_buses, model, "magnitude");
  check_bus_range(inj_buses, model, "injection");
  for (Index line : flow_lines) {
    if (line < 0 || line >= model.line_count()) {
      std::ostringstream msg;
      msg << "flow device references line " << line << " outside [0, "
          << model.line_count() << ")";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
  }
  check_unique(mag_buses, "magnitude");
  check_unique(flow_lines, "flow");
  check_unique(inj_buses, "injection");
}

RedundancyReport validate_redundancy(const MeasurementSet& set, Index p) {
  RedundancyReport report;
  report.rows = set.rows();
  report.unknowns = 2 * p;
  report.slack = report.rows - report.unknowns;
  report.redundant = report.rows > report.unknowns;
  report.ratio = report.unknowns > 0
                     ? static_cast<double>(report.slack) / static_cast<double>(report.unknowns)
                     : 0.0;
  return report;
}

CovarianceModel::CovarianceModel(Vec variances) : variances_(std::move(variances)) {
  for (Index k = 0; k < variances_.size(); ++k) {
    if (!(variances_(k) > 0.0)) {
      std::ostringstream msg;
      msg << "variance of row " << k << " is not positive (" << variances_(k) << ")";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
  }
  weight_sqrt_ = variances_.cwiseSqrt().cwiseInverse();
}

CovarianceModel CovarianceModel::from_sigmas(const MeasurementSet& set,
                                             const MeasurementSigmas& sigmas) {
  Vec var(set.rows());
  var.segment(0, set.mag_rows()).setConstant(sigmas.mag * sigmas.mag);
  var.segment(set.flow_offset(), set.flow_rows()).setConstant(sigmas.flow * sigmas.flow);
  var.segment(set.inj_offset(), set.inj_rows()).setConstant(sigmas.inj * sigmas.inj);
  return CovarianceModel(std::move(var));
}

Vec MeasurementProfile::stacked() const {
  Vec r(magnitudes.size() + flows.size() + injections.size());
  r << magnitudes, flows, injections;
  return r;
}

MeasurementProfile MeasurementProfile::from_stacked(const Vec& r, const MeasurementSet& set,
                                                    std::int64_t id) {
  if (r.size() != set.rows()) {
    std::ostringstream msg;
    msg << "profile has " << r.size() << " rows, measurement set expects " << set.rows();
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }
  MeasurementProfile profile;
  profile.magnitudes = r.segment(0, set.mag_rows());
  profile.flows = r.segment(set.flow_offset(), set.flow_rows());
  profile.injections = r.segment(set.inj_offset(), set.inj_rows());
  profile.id = id;
  return profile;
}

Vec measured_outputs(const PolarState& x, const MeasurementSet& set,
                     const AdmittanceModel& model) {
  Vec out(set.rows());
  out.segment(0, set.mag_rows()) = eval_magnitudes(x, model, set.mag_buses);
  out.segment(set.flow_offset(), set.flow_rows()) = eval_flows(x, model, set.flow_lines);

  const Vec all = eval_injections(x, model);
  const Index p = model.state_count();
  const Index s = static_cast<Index>(set.inj_buses.size());
  for (Index k = 0; k < s; ++k) {
    const Index state = model.state_index(set.inj_buses[static_cast<size_t>(k)]);
    out(set.inj_offset() + k) = all(state);
    out(set.inj_offset() + s + k) = all(p + state);
  }
  return out;
}

Vec assemble_residual(const PolarState& x, const MeasurementProfile& profile,
                      const MeasurementSet& set, const AdmittanceModel& model) {
  const Vec measured = profile.stacked();
  if (measured.size() != set.rows()) {
    std::ostringstream msg;
    msg << "profile has " << measured.size() << " rows, measurement set expects " << set.rows();
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }
  return measured_outputs(x, set, model) - measured;
}

SquaredMagnitudeTransform squared_magnitude_transform(const MeasurementProfile& profile,
                                                      const CovarianceModel& covariance) {
  const Index nm = profile.magnitudes.size();
  if (covariance.size() != profile.magnitudes.size() + profile.flows.size() +
                               profile.injections.size()) {
    throw Error(ErrorKind::DimensionMismatch, "covariance does not match profile length");
  }
  SquaredMagnitudeTransform out{profile, {}};
  Vec var = covariance.variances();
  for (Index k = 0; k < nm; ++k) {
    const double m = profile.magnitudes(k);
    if (!(m > 0.0)) {
      std::ostringstream msg;
      msg << "magnitude measurement " << k << " is not positive (" << m << ")";
      throw Error(ErrorKind::InvalidMeasurement, msg.str());
    }
    out.profile.magnitudes(k) = m * m;
    var(k) *= 4.0 * m * m;
  }
  out.covariance = CovarianceModel(std::move(var));
  return out;
}

}  // namespace apse
