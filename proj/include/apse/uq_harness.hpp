#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apse/apse.hpp"

namespace apse {

/// Load buses whose consumption is drawn as nominal * (1 + u), u ~ U[lower, upper].
struct UncertaintyRegion {
  std::string id;
  std::vector<Index> buses;
  double lower = -0.5;
  double upper = 0.5;

  /// Throws InvalidMeasurement unless lower <= upper and every member carries
  /// an injection measurement.
  void validate(const AdmittanceModel& model, const MeasurementSet& set) const;
};

struct HarnessConfig {
  CVec nominal_loads;  // consumption per bus (P + jQ), substation entry ignored
  std::vector<UncertaintyRegion> regions;
  Index samples = 1000;
  std::uint64_t sample_seed = 1;
  std::uint64_t noise_seed = 2;
  double noise_scale = 1.0;  // multiplies sigma for non-region meters
  int max_redraws = 20;
  unsigned threads = 0;      // 0 = hardware concurrency
};

/// Uniform factor u per region member, in region order then member order.
struct SampleBatch {
  Index sample_count = 0;
  std::uint64_t seed = 0;
  Mat draws;  // sample_count x members
  std::vector<int> redraws;

  /// Draw for sample `index`, attempt `attempt`; reproducible from the seed.
  static Vec draw(const std::vector<UncertaintyRegion>& regions, std::uint64_t seed, Index index,
                  int attempt);
};

/// Newton power flow on the injection equations S(x) = -loads (loads are
/// consumption). Throws Error(Infeasible) when it does not reach `tol`.
PolarState solve_power_flow(const AdmittanceModel& model, const CVec& loads,
                            const PolarState* start = nullptr, double tol = 1e-10,
                            int max_iters = 30);

struct SynthesisResult {
  MeasurementProfile bootstrap;  // nominal loads, id 0
  PolarState bootstrap_truth;
  std::vector<MeasurementProfile> profiles;  // ids 1..M
  std::vector<PolarState> truths;
  SampleBatch batch;
};

SynthesisResult synthesize_profiles(const AdmittanceModel& model, const MeasurementSet& set,
                                    const CovarianceModel& covariance,
                                    const HarnessConfig& config);

enum class Comparison { Apse, Gnvqr, Both };

const char* to_string(Comparison c) noexcept;
Comparison comparison_from_string(const std::string& s);

struct Histogram {
  double lower = 0.0;
  double upper = 0.0;
  std::vector<std::int64_t> counts;

  std::int64_t mass() const;
};

/// Equal-width bins on [lower, upper]; a degenerate range gives a single bin.
Histogram make_histogram(const std::vector<double>& samples, int bins, double lower,
                         double upper);
Histogram make_histogram(const std::vector<double>& samples, int bins);

/// sup_x |F_a(x) - F_b(x)|
double ks_statistic(std::vector<double> a, std::vector<double> b);

struct ProfileRecord {
  std::int64_t profile_id = 0;
  // APSE path
  SolvePath path = SolvePath::Failed;
  int rmse_iters = 0;
  int fallback_iters = 0;
  Index basis_size = 0;
  double accept_value = 0.0;
  double apse_time = 0.0;
  // GNvQR-only path
  bool gnvqr_converged = false;
  int gnvqr_iters = 0;
  double gnvqr_time = 0.0;
  // max |x_apse - x_gnvqr| over magnitudes and wrapped angles (both mode)
  double path_difference = 0.0;
};

struct RunStatistics {
  Comparison comparison = Comparison::Both;
  std::vector<Index> monitor_buses;  // bus indices
  std::vector<Index> monitor_lines;  // line indices feeding the monitored buses
  std::vector<ProfileRecord> records;
  std::vector<PolarState> apse_states;
  std::vector<PolarState> gnvqr_states;
  // [bus][sample]
  std::vector<std::vector<double>> apse_magnitudes;
  std::vector<std::vector<double>> gnvqr_magnitudes;
  // [line][sample]
  std::vector<std::vector<double>> apse_currents;
  std::vector<std::vector<double>> gnvqr_currents;
  double apse_setup_time = 0.0;
  Index final_basis_size = 0;
  int histogram_bins = 30;

  bool has_apse() const { return comparison != Comparison::Gnvqr; }
  bool has_gnvqr() const { return comparison != Comparison::Apse; }

  double apse_total_time() const;
  double gnvqr_total_time() const;
  /// Fraction of profiles routed to the fallback among the last `window` profiles.
  double fallback_rate(std::size_t window) const;
  /// Profiles with a usable state on every executed path.
  std::size_t solved_count() const;
  /// Largest path_difference over rmse-accepted profiles.
  double max_accepted_difference() const;
  /// KS statistic between the two paths at each monitored bus (both mode).
  std::vector<double> ks_per_bus() const;
};

/// Runs the selected path(s) over the synthesized stream. The APSE path is
/// sequential; the GNvQR-only path warm-starts each profile from the previous
/// converged state (flat start for the first profile).
RunStatistics run_batch(const SynthesisResult& synth, const AdmittanceModel& model,
                        const MeasurementSet& set, const CovarianceModel& covariance,
                        const ApseConfig& config, Comparison comparison,
                        const std::vector<Index>& monitor_buses, int histogram_bins = 30);

/// Bus/line labels used in output headers.
struct OutputLabels {
  std::vector<std::int64_t> bus_ids;  // external id per bus index
};

/// Writes states/, histograms/, timing/ and summary.json under `dir`.
void summarize(const RunStatistics& stats, const AdmittanceModel& model,
               const OutputLabels& labels, const std::filesystem::path& dir);

}  // namespace apse
