#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "apse/io.hpp"

namespace apse::testing {

std::string data_path(const std::string& rel);

struct Feeder {
  NetworkData network;
  MeasurementLayout layout;

  const AdmittanceModel& model() const { return network.model; }
  const MeasurementSet& set() const { return layout.set; }
  CovarianceModel covariance() const { return layout.covariance(); }
};

/// The shipped 33-bus feeder with its meter layout.
const Feeder& ieee33();
ExperimentConfig ieee33_experiment();

/// Every magnitude, every line flow and every injection of a model.
MeasurementSet full_set(const AdmittanceModel& model);

AdmittanceModel two_bus(Complex y, Complex shunt1 = {}, Complex shunt2 = {});
AdmittanceModel radial_chain(Index n, Complex y, Complex shunt = {});
AdmittanceModel ring(Index n, Complex y);

/// Hand-rolled generators.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Index index(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

  Vec vec(Index n, double lo, double hi);
  PolarState polar(Index p, double vlo = 0.9, double vhi = 1.1, double amax = 0.15);
  CartesianState cartesian(Index p) { return polar_to_cartesian(polar(p)); }
  Complex admittance();
  /// Connected graph: random tree plus `extra` chords, random orientation.
  NetworkGraph graph(Index n, Index extra);
  AdmittanceModel network(Index n, Index extra, bool shunts);

 private:
  std::mt19937_64 rng_;
};

/// Exact (noise-free) profile generated from a known state.
MeasurementProfile exact_profile(const PolarState& x, const MeasurementSet& set,
                                 const AdmittanceModel& model, std::int64_t id = 0);

/// Nominal loads of the 33-bus experiment.
CVec ieee33_nominal_loads();

}  // namespace apse::testing
