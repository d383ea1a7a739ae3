#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apse/uq_harness.hpp"

namespace apse {

/// Parsed network file. Bus ids in files are external labels; everything in
/// memory uses dense bus indices in file order.
struct NetworkData {
  AdmittanceModel model;
  std::vector<std::int64_t> bus_ids;
  std::string name;
  double base_mva = 0.0;
  double base_kv = 0.0;

  /// Throws Error(Parse) naming `field` when the id is unknown.
  Index bus_index(std::int64_t id, const std::string& field) const;
  OutputLabels labels() const { return {bus_ids}; }
};

struct MeasurementLayout {
  MeasurementSet set;
  MeasurementSigmas sigmas;

  CovarianceModel covariance() const { return CovarianceModel::from_sigmas(set, sigmas); }
};

struct LoadEntry {
  std::int64_t bus = 0;
  double p = 0.0;
  double q = 0.0;
};

struct RegionEntry {
  std::string id;
  std::vector<std::int64_t> buses;
  double lower = -0.5;
  double upper = 0.5;
};

struct ExperimentConfig {
  std::filesystem::path network_path;       // resolved against the config location
  std::filesystem::path measurements_path;
  std::vector<LoadEntry> loads;
  std::vector<RegionEntry> regions;
  Index samples = 1000;
  std::uint64_t sample_seed = 1;
  std::uint64_t noise_seed = 2;
  double noise_scale = 1.0;
  SolverConfig solver;
  RomConfig rom;
  Comparison comparison = Comparison::Both;
  std::vector<std::int64_t> monitor_buses;
  int histogram_bins = 30;
};

NetworkData parse_network(const std::string& text, const std::string& source);
NetworkData load_network(const std::filesystem::path& path);

MeasurementLayout parse_measurements(const std::string& text, const std::string& source,
                                     const NetworkData& network);
MeasurementLayout load_measurements(const std::filesystem::path& path, const NetworkData& network);

ExperimentConfig parse_experiment(const std::string& text, const std::string& source,
                                  const std::filesystem::path& base_dir);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Converts the id-based experiment description into harness inputs.
HarnessConfig harness_config(const ExperimentConfig& experiment, const NetworkData& network,
                             unsigned threads);
std::vector<Index> resolve_buses(const std::vector<std::int64_t>& ids, const NetworkData& network,
                                 const std::string& field);

/// profile_id,mag:<bus>,...,flow_p:<from>-<to>,...,flow_q:...,inj_p:<bus>,...,inj_q:<bus>,...
std::string profile_header(const MeasurementSet& set, const NetworkData& network);
void write_profiles(const std::filesystem::path& path,
                    const std::vector<MeasurementProfile>& profiles, const MeasurementSet& set,
                    const NetworkData& network);
std::vector<MeasurementProfile> read_profiles(const std::filesystem::path& path,
                                              const MeasurementSet& set,
                                              const NetworkData& network);

/// Per-bus magnitude and angle (substation included) of a single estimate.
void write_state(const std::filesystem::path& path, const PolarState& state,
                 const NetworkData& network);

/// Basis checkpoint: one row per state coordinate, one column per basis vector.
void write_basis(const std::filesystem::path& path, const Mat& basis);
Mat read_basis(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);

}  // namespace apse
