#include "apse/uq_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace apse {

namespace {

using Clock = std::chrono::steady_clock;

std::seed_seq make_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                       static_cast<std::uint32_t>(attempt)};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Index injection_slot(const MeasurementSet& set, Index bus) {
  const auto it = std::find(set.inj_buses.begin(), set.inj_buses.end(), bus);
  return it == set.inj_buses.end() ? -1 : static_cast<Index>(it - set.inj_buses.begin());
}

struct Member {
  Index bus;
  Index slot;  // position in set.inj_buses
};

std::vector<Member> region_members(const std::vector<UncertaintyRegion>& regions,
                                   const MeasurementSet& set) {
  std::vector<Member> out;
  for (const auto& region : regions) {
    for (Index bus : region.buses) out.push_back({bus, injection_slot(set, bus)});
  }
  return out;
}

unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs body(i) for i in [begin, end) over contiguous chunks; rethrows the first failure.
template <typename Body>
void parallel_for(Index begin, Index end, unsigned threads, Body body) {
  const Index count = end - begin;
  const unsigned workers = worker_count(threads, static_cast<std::size_t>(std::max<Index>(count, 0)));
  if (workers <= 1 || count <= 1) {
    for (Index i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  const Index chunk = (count + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const Index lo = begin + static_cast<Index>(w) * chunk;
    const Index hi = std::min(end, lo + chunk);
    pool.emplace_back([&, w, lo, hi] {
      try {
        for (Index i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

MeasurementProfile make_profile(const PolarState& truth, const CVec& loads,
                                const std::vector<Member>& members, const AdmittanceModel& model,
                                const MeasurementSet& set, const CovarianceModel& covariance,
                                double noise_scale, std::uint64_t noise_seed, Index index) {
  Vec r = measured_outputs(truth, set, model);
  std::vector<bool> pseudo(static_cast<size_t>(set.rows()), false);
  const Index ns = static_cast<Index>(set.inj_buses.size());
  for (const auto& m : members) {
    pseudo[static_cast<size_t>(set.inj_offset() + m.slot)] = true;
    pseudo[static_cast<size_t>(set.inj_offset() + ns + m.slot)] = true;
  }
  auto seq = make_seed(noise_seed, static_cast<std::uint64_t>(index), 0);
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vec sigma = covariance.variances().cwiseSqrt();
  for (Index k = 0; k < r.size(); ++k) {
    const double z = normal(rng);
    if (!pseudo[static_cast<size_t>(k)]) r(k) += noise_scale * sigma(k) * z;
  }
  for (const auto& m : members) {
    r(set.inj_offset() + m.slot) = -loads(m.bus).real();
    r(set.inj_offset() + ns + m.slot) = -loads(m.bus).imag();
  }
  return MeasurementProfile::from_stacked(r, set, static_cast<std::int64_t>(index));
}

double state_difference(const PolarState& a, const PolarState& b) {
  double worst = (a.magnitude - b.magnitude).cwiseAbs().maxCoeff();
  for (Index k = 0; k < a.size(); ++k) {
    worst = std::max(worst, std::abs(wrap_angle(a.angle(k) - b.angle(k))));
  }
  return worst;
}

double line_current(const CVec& v, const AdmittanceModel& model, Index line) {
  const auto& e = model.graph().edges[static_cast<size_t>(line)];
  return std::abs(model.line_admittances()(line) * (v(e.from) - v(e.to)));
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

void UncertaintyRegion::validate(const AdmittanceModel& model, const MeasurementSet& set) const {
  if (!(lower <= upper)) {
    throw Error(ErrorKind::InvalidMeasurement, "region " + id + ": lower bound exceeds upper");
  }
  if (lower < -1.0) {
    throw Error(ErrorKind::InvalidMeasurement, "region " + id + ": lower bound below -100%");
  }
  for (Index bus : buses) {
    if (bus < 0 || bus >= model.bus_count() || bus == model.substation()) {
      throw Error(ErrorKind::InvalidMeasurement, "region " + id + ": member is not a load bus");
    }
    if (injection_slot(set, bus) < 0) {
      throw Error(ErrorKind::InvalidMeasurement,
                  "region " + id + ": member bus carries no injection measurement");
    }
  }
}

Vec SampleBatch::draw(const std::vector<UncertaintyRegion>& regions, std::uint64_t seed,
                      Index index, int attempt) {
  auto seq = make_seed(seed, static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(attempt));
  std::mt19937_64 rng(seq);
  std::vector<double> out;
  for (const auto& region : regions) {
    std::uniform_real_distribution<double> dist(region.lower, region.upper);
    for (size_t k = 0; k < region.buses.size(); ++k) {
      out.push_back(region.lower == region.upper ? region.lower : dist(rng));
    }
  }
  return Eigen::Map<Vec>(out.data(), static_cast<Index>(out.size()));
}

PolarState solve_power_flow(const AdmittanceModel& model, const CVec& loads,
                            const PolarState* start, double tol, int max_iters) {
  const Index p = model.state_count();
  if (loads.size() != model.bus_count()) {
    throw Error(ErrorKind::DimensionMismatch, "load vector does not match bus count");
  }
  MeasurementSet all;
  for (Index k = 0; k < p; ++k) all.inj_buses.push_back(model.bus_index(k));
  Vec target(2 * p);
  for (Index k = 0; k < p; ++k) {
    const Complex s = -loads(model.bus_index(k));
    target(k) = s.real();
    target(p + k) = s.imag();
  }
  PolarState x = start ? *start : PolarState::flat(p, model.slack_voltage());
  for (int it = 0; it <= max_iters; ++it) {
    const Vec mismatch = eval_injections(x, model) - target;
    const double norm = inf_norm(mismatch);
    if (!std::isfinite(norm)) break;
    if (norm <= tol) return x;
    if (it == max_iters) break;
    const Mat jac = jacobian_polar(x, model, all);
    const Vec dx = jac.partialPivLu().solve(mismatch);
    x = PolarState::from_stacked(x.stacked() - dx);
    for (Index k = 0; k < p; ++k) x.angle(k) = wrap_angle(x.angle(k));
    if (!x.stacked().allFinite() || x.magnitude.minCoeff() < 0.2) break;
  }
  throw Error(ErrorKind::Infeasible, "power flow did not converge for the requested loads");
}

SynthesisResult synthesize_profiles(const AdmittanceModel& model, const MeasurementSet& set,
                                    const CovarianceModel& covariance,
                                    const HarnessConfig& config) {
  set.validate(model);
  if (config.nominal_loads.size() != model.bus_count()) {
    throw Error(ErrorKind::DimensionMismatch, "nominal loads do not match bus count");
  }
  if (config.samples < 0) throw Error(ErrorKind::Parse, "sample count must be non-negative");
  for (const auto& region : config.regions) region.validate(model, set);
  const auto members = region_members(config.regions, set);

  SynthesisResult out;
  out.bootstrap_truth = solve_power_flow(model, config.nominal_loads);
  out.bootstrap = make_profile(out.bootstrap_truth, config.nominal_loads, members, model, set,
                               covariance, config.noise_scale, config.noise_seed, 0);

  const Index m = config.samples;
  out.batch.sample_count = m;
  out.batch.seed = config.sample_seed;
  out.batch.draws.resize(m, static_cast<Index>(members.size()));
  out.batch.redraws.assign(static_cast<size_t>(m), 0);
  out.profiles.resize(static_cast<size_t>(m));
  out.truths.resize(static_cast<size_t>(m));

  parallel_for(0, m, config.threads, [&](Index i) {
    const Index id = i + 1;
    for (int attempt = 0;; ++attempt) {
      const Vec u = SampleBatch::draw(config.regions, config.sample_seed, id, attempt);
      CVec loads = config.nominal_loads;
      for (size_t j = 0; j < members.size(); ++j) {
        loads(members[j].bus) *= 1.0 + u(static_cast<Index>(j));
      }
      try {
        PolarState truth = solve_power_flow(model, loads, &out.bootstrap_truth);
        out.profiles[static_cast<size_t>(i)] = make_profile(
            truth, loads, members, model, set, covariance, config.noise_scale, config.noise_seed, id);
        out.truths[static_cast<size_t>(i)] = std::move(truth);
        out.batch.draws.row(i) = u.transpose();
        out.batch.redraws[static_cast<size_t>(i)] = attempt;
        return;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Infeasible || attempt >= config.max_redraws) throw;
      }
    }
  });
  return out;
}

const char* to_string(Comparison c) noexcept {
  switch (c) {
    case Comparison::Apse: return "apse";
    case Comparison::Gnvqr: return "gnvqr";
    case Comparison::Both: return "both";
  }
  return "unknown";
}

Comparison comparison_from_string(const std::string& s) {
  if (s == "apse") return Comparison::Apse;
  if (s == "gnvqr" || s == "gnvqr-only") return Comparison::Gnvqr;
  if (s == "both") return Comparison::Both;
  throw Error(ErrorKind::Parse, "comparison must be apse, gnvqr or both, got '" + s + "'");
}

std::int64_t Histogram::mass() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

Histogram make_histogram(const std::vector<double>& samples, int bins, double lower,
                         double upper) {
  Histogram h;
  h.lower = lower;
  h.upper = upper;
  const bool degenerate = !(upper > lower) || bins < 1;
  h.counts.assign(degenerate ? 1 : static_cast<size_t>(bins), 0);
  for (double s : samples) {
    if (!std::isfinite(s)) continue;
    size_t bin = 0;
    if (!degenerate) {
      const double t = (s - lower) / (upper - lower) * bins;
      bin = static_cast<size_t>(std::clamp(t, 0.0, static_cast<double>(bins - 1)));
    }
    ++h.counts[bin];
  }
  return h;
}

Histogram make_histogram(const std::vector<double>& samples, int bins) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double s : samples) {
    if (!std::isfinite(s)) continue;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (lo > hi) lo = hi = 0.0;
  return make_histogram(samples, bins, lo, hi);
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) return a.empty() && b.empty() ? 0.0 : 1.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  size_t i = 0;
  size_t j = 0;
  double worst = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    worst = std::max(worst, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return worst;
}

double RunStatistics::apse_total_time() const {
  double total = apse_setup_time;
  for (const auto& r : records) total += r.apse_time;
  return total;
}

double RunStatistics::gnvqr_total_time() const {
  double total = 0.0;
  for (const auto& r : records) total += r.gnvqr_time;
  return total;
}

double RunStatistics::fallback_rate(std::size_t window) const {
  if (records.empty() || !has_apse()) return 0.0;
  const size_t n = std::min(window, records.size());
  size_t fallbacks = 0;
  for (size_t k = records.size() - n; k < records.size(); ++k) {
    if (records[k].path != SolvePath::RmseAccepted) ++fallbacks;
  }
  return static_cast<double>(fallbacks) / static_cast<double>(n);
}

std::size_t RunStatistics::solved_count() const {
  std::size_t n = 0;
  for (const auto& r : records) {
    const bool apse_ok = !has_apse() || r.path != SolvePath::Failed;
    const bool gn_ok = !has_gnvqr() || r.gnvqr_converged;
    if (apse_ok && gn_ok) ++n;
  }
  return n;
}

double RunStatistics::max_accepted_difference() const {
  double worst = 0.0;
  for (const auto& r : records) {
    if (r.path == SolvePath::RmseAccepted) worst = std::max(worst, r.path_difference);
  }
  return worst;
}

std::vector<double> RunStatistics::ks_per_bus() const {
  std::vector<double> out;
  if (comparison != Comparison::Both) return out;
  for (size_t b = 0; b < monitor_buses.size(); ++b) {
    out.push_back(ks_statistic(apse_magnitudes[b], gnvqr_magnitudes[b]));
  }
  return out;
}

RunStatistics run_batch(const SynthesisResult& synth, const AdmittanceModel& model,
                        const MeasurementSet& set, const CovarianceModel& covariance,
                        const ApseConfig& config, Comparison comparison,
                        const std::vector<Index>& monitor_buses, int histogram_bins) {
  RunStatistics stats;
  stats.comparison = comparison;
  stats.histogram_bins = histogram_bins;
  stats.monitor_buses = monitor_buses;
  for (Index bus : monitor_buses) {
    if (model.state_index(bus) < 0 || bus >= model.bus_count()) {
      throw Error(ErrorKind::InvalidMeasurement, "monitored bus must be a non-substation bus");
    }
    for (Index l = 0; l < model.line_count(); ++l) {
      if (model.graph().edges[static_cast<size_t>(l)].to == bus) {
        stats.monitor_lines.push_back(l);
        break;
      }
    }
  }
  const size_t m = synth.profiles.size();
  stats.records.resize(m);
  for (size_t i = 0; i < m; ++i) stats.records[i].profile_id = synth.profiles[i].id;

  if (stats.has_apse()) {
    ApseEstimator estimator(model, set, covariance, config);
    estimator.bootstrap(synth.bootstrap,
                        PolarState::flat(model.state_count(), model.slack_voltage()));
    stats.apse_setup_time = estimator.setup_time();
    stats.apse_states.reserve(m);
    for (size_t i = 0; i < m; ++i) {
      ProfileResult res = estimator.solve(synth.profiles[i]);
      auto& rec = stats.records[i];
      rec.path = res.path;
      rec.rmse_iters = res.rmse_iters;
      rec.fallback_iters = res.gnvqr_iters;
      rec.basis_size = res.basis_size;
      rec.accept_value = res.accept_value;
      rec.apse_time = res.wall_time;
      stats.apse_states.push_back(std::move(res.state));
    }
    stats.final_basis_size = estimator.rom().dim();
  }

  if (stats.has_gnvqr()) {
    PolarState start = PolarState::flat(model.state_count(), model.slack_voltage());
    stats.gnvqr_states.reserve(m);
    for (size_t i = 0; i < m; ++i) {
      auto& rec = stats.records[i];
      const auto t0 = Clock::now();
      SolveReport report;
      try {
        report = gnvqr_solve(start, synth.profiles[i], set, model, covariance, config.solver);
      } catch (const Error&) {
        report.state = start;
      }
      rec.gnvqr_time = std::chrono::duration<double>(Clock::now() - t0).count();
      rec.gnvqr_converged = report.converged;
      rec.gnvqr_iters = report.iterations;
      if (report.converged) start = report.state;
      stats.gnvqr_states.push_back(std::move(report.state));
    }
  }

  if (comparison == Comparison::Both) {
    for (size_t i = 0; i < m; ++i) {
      stats.records[i].path_difference = state_difference(stats.apse_states[i], stats.gnvqr_states[i]);
    }
  }

  auto collect = [&](const std::vector<PolarState>& states, bool apse_path,
                     std::vector<std::vector<double>>& mags,
                     std::vector<std::vector<double>>& currents) {
    mags.assign(monitor_buses.size(), {});
    currents.assign(stats.monitor_lines.size(), {});
    for (size_t i = 0; i < states.size(); ++i) {
      const bool ok = apse_path ? stats.records[i].path != SolvePath::Failed
                                : stats.records[i].gnvqr_converged;
      if (!ok) continue;
      const CVec v = model.bus_voltages(states[i]);
      for (size_t b = 0; b < monitor_buses.size(); ++b) mags[b].push_back(std::abs(v(monitor_buses[b])));
      for (size_t l = 0; l < stats.monitor_lines.size(); ++l) {
        currents[l].push_back(line_current(v, model, stats.monitor_lines[l]));
      }
    }
  };
  if (stats.has_apse()) collect(stats.apse_states, true, stats.apse_magnitudes, stats.apse_currents);
  if (stats.has_gnvqr()) collect(stats.gnvqr_states, false, stats.gnvqr_magnitudes, stats.gnvqr_currents);
  return stats;
}

namespace {

void write_states(const std::filesystem::path& path, const std::vector<PolarState>& states,
                  const RunStatistics& stats, const AdmittanceModel& model,
                  const OutputLabels& labels) {
  auto out = open_out(path);
  out << "profile_id";
  const Index p = model.state_count();
  for (Index k = 0; k < p; ++k) out << ",vm:" << labels.bus_ids[static_cast<size_t>(model.bus_index(k))];
  for (Index k = 0; k < p; ++k) out << ",va:" << labels.bus_ids[static_cast<size_t>(model.bus_index(k))];
  out << '\n';
  for (size_t i = 0; i < states.size(); ++i) {
    out << stats.records[i].profile_id;
    for (Index k = 0; k < p; ++k) out << ',' << fmt(states[i].magnitude(k));
    for (Index k = 0; k < p; ++k) out << ',' << fmt(states[i].angle(k));
    out << '\n';
  }
}

void write_histogram_pair(const std::filesystem::path& path, const RunStatistics& stats,
                          const std::vector<double>* apse_samples,
                          const std::vector<double>* gnvqr_samples) {
  std::vector<double> pooled;
  if (apse_samples) pooled.insert(pooled.end(), apse_samples->begin(), apse_samples->end());
  if (gnvqr_samples) pooled.insert(pooled.end(), gnvqr_samples->begin(), gnvqr_samples->end());
  const Histogram range = make_histogram(pooled, stats.histogram_bins);
  std::optional<Histogram> ha;
  std::optional<Histogram> hg;
  if (apse_samples) ha = make_histogram(*apse_samples, stats.histogram_bins, range.lower, range.upper);
  if (gnvqr_samples) hg = make_histogram(*gnvqr_samples, stats.histogram_bins, range.lower, range.upper);

  auto out = open_out(path);
  out << "bin_lower,bin_upper";
  if (ha) out << ",apse_count";
  if (hg) out << ",gnvqr_count";
  out << '\n';
  const size_t bins = range.counts.size();
  const double width = bins > 0 ? (range.upper - range.lower) / static_cast<double>(bins) : 0.0;
  for (size_t k = 0; k < bins; ++k) {
    const double lo = range.lower + width * static_cast<double>(k);
    const double hi = k + 1 == bins ? range.upper : range.lower + width * static_cast<double>(k + 1);
    out << fmt(lo) << ',' << fmt(hi);
    if (ha) out << ',' << ha->counts[k];
    if (hg) out << ',' << hg->counts[k];
    out << '\n';
  }
}

}  // namespace

void summarize(const RunStatistics& stats, const AdmittanceModel& model,
               const OutputLabels& labels, const std::filesystem::path& dir) {
  if (static_cast<Index>(labels.bus_ids.size()) != model.bus_count()) {
    throw Error(ErrorKind::DimensionMismatch, "bus labels do not match the network");
  }
  ensure_dir(dir / "states");
  ensure_dir(dir / "histograms");
  ensure_dir(dir / "timing");

  if (stats.has_apse()) write_states(dir / "states" / "apse_states.csv", stats.apse_states, stats, model, labels);
  if (stats.has_gnvqr()) write_states(dir / "states" / "gnvqr_states.csv", stats.gnvqr_states, stats, model, labels);

  for (size_t b = 0; b < stats.monitor_buses.size(); ++b) {
    const auto id = labels.bus_ids[static_cast<size_t>(stats.monitor_buses[b])];
    write_histogram_pair(dir / "histograms" / ("voltage_" + std::to_string(id) + ".csv"), stats,
                         stats.has_apse() ? &stats.apse_magnitudes[b] : nullptr,
                         stats.has_gnvqr() ? &stats.gnvqr_magnitudes[b] : nullptr);
  }
  for (size_t l = 0; l < stats.monitor_lines.size(); ++l) {
    const auto& e = model.graph().edges[static_cast<size_t>(stats.monitor_lines[l])];
    const std::string name = "current_" + std::to_string(labels.bus_ids[static_cast<size_t>(e.from)]) +
                             "_" + std::to_string(labels.bus_ids[static_cast<size_t>(e.to)]) + ".csv";
    write_histogram_pair(dir / "histograms" / name, stats,
                         stats.has_apse() ? &stats.apse_currents[l] : nullptr,
                         stats.has_gnvqr() ? &stats.gnvqr_currents[l] : nullptr);
  }

  {
    auto out = open_out(dir / "timing" / "timing.csv");
    out << "profile_id,path,rmse_iters,fallback_iters,basis_size,accept_value,apse_time,"
           "apse_cumulative,gnvqr_iters,gnvqr_time,gnvqr_cumulative\n";
    double apse_cum = stats.apse_setup_time;
    double gn_cum = 0.0;
    for (const auto& r : stats.records) {
      apse_cum += r.apse_time;
      gn_cum += r.gnvqr_time;
      out << r.profile_id << ',' << (stats.has_apse() ? to_string(r.path) : "none") << ','
          << r.rmse_iters << ',' << r.fallback_iters << ',' << r.basis_size << ','
          << fmt(r.accept_value) << ',' << fmt(r.apse_time) << ',' << fmt(apse_cum) << ','
          << r.gnvqr_iters << ',' << fmt(r.gnvqr_time) << ',' << fmt(gn_cum) << '\n';
    }
  }

  constexpr size_t kWindow = 50;
  std::vector<double> window_curve;
  {
    auto out = open_out(dir / "timing" / "acceptance_rate.csv");
    out << "profile_index,accepted,cumulative_rate,window_rate\n";
    if (stats.has_apse()) {
      size_t accepted = 0;
      for (size_t i = 0; i < stats.records.size(); ++i) {
        const bool acc = stats.records[i].path == SolvePath::RmseAccepted;
        accepted += acc ? 1 : 0;
        const size_t lo = i + 1 >= kWindow ? i + 1 - kWindow : 0;
        size_t in_window = 0;
        for (size_t k = lo; k <= i; ++k) in_window += stats.records[k].path == SolvePath::RmseAccepted;
        const double window_rate = static_cast<double>(in_window) / static_cast<double>(i + 1 - lo);
        window_curve.push_back(window_rate);
        out << i + 1 << ',' << (acc ? 1 : 0) << ','
            << fmt(static_cast<double>(accepted) / static_cast<double>(i + 1)) << ','
            << fmt(window_rate) << '\n';
      }
    }
  }

  nlohmann::json summary;
  summary["samples"] = stats.records.size();
  summary["comparison"] = to_string(stats.comparison);
  summary["solved"] = stats.solved_count();
  summary["solved_fraction"] =
      stats.records.empty() ? 1.0
                            : static_cast<double>(stats.solved_count()) / static_cast<double>(stats.records.size());
  if (stats.has_apse()) {
    size_t accepted = 0;
    size_t fallback = 0;
    size_t failed = 0;
    for (const auto& r : stats.records) {
      accepted += r.path == SolvePath::RmseAccepted;
      fallback += r.path == SolvePath::FallbackGnvqr;
      failed += r.path == SolvePath::Failed;
    }
    summary["apse"] = {{"total_time", stats.apse_total_time()},
                       {"setup_time", stats.apse_setup_time},
                       {"rmse_accepted", accepted},
                       {"fallback", fallback},
                       {"failed", failed},
                       {"final_basis_size", stats.final_basis_size},
                       {"fallback_rate_last_half", stats.fallback_rate(stats.records.size() - stats.records.size() / 2)}};
    summary["acceptance_rate_curve"] = {{"window", kWindow}, {"rate", window_curve}};
  }
  if (stats.has_gnvqr()) {
    size_t converged = 0;
    for (const auto& r : stats.records) converged += r.gnvqr_converged;
    summary["gnvqr"] = {{"total_time", stats.gnvqr_total_time()}, {"converged", converged}};
  }
  if (stats.comparison == Comparison::Both) {
    const double apse_time = stats.apse_total_time();
    summary["speedup"] = apse_time > 0.0 ? stats.gnvqr_total_time() / apse_time : 0.0;
    summary["max_accepted_difference"] = stats.max_accepted_difference();
    nlohmann::json ks = nlohmann::json::object();
    const auto values = stats.ks_per_bus();
    for (size_t b = 0; b < values.size(); ++b) {
      ks[std::to_string(labels.bus_ids[static_cast<size_t>(stats.monitor_buses[b])])] = values[b];
    }
    summary["ks_statistic"] = ks;
  }
  auto out = open_out(dir / "summary.json");
  out << summary.dump(2) << '\n';
}

}  // namespace apse
