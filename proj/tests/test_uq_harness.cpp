#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace apse;
using apse::testing::Gen;
namespace fs = std::filesystem;

namespace {

HarnessConfig experiment_config(Index samples) {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = harness_config(apse::testing::ieee33_experiment(), f.network, 2);
  cfg.samples = samples;
  return cfg;
}

std::vector<Index> monitor_buses() {
  const auto& f = apse::testing::ieee33();
  return resolve_buses(apse::testing::ieee33_experiment().monitor_buses, f.network, "monitor_buses");
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("apse_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return read_text(p); }

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

double stddev(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("power flow with no load sits at the slack voltage") {
  NetworkGraph g;
  g.bus_count = 4;
  g.edges = {{0, 1}, {1, 2}, {1, 3}};
  g.slack_voltage = std::polar(1.02, 0.1);
  const AdmittanceModel m = build_ybus(g, CVec::Constant(3, Complex(3.0, -9.0)), CVec::Zero(4));
  const PolarState x = solve_power_flow(m, CVec::Zero(4));
  CHECK(inf_norm(x.magnitude - Vec::Constant(3, 1.02)) <= 1e-12);
  CHECK(inf_norm(x.angle - Vec::Constant(3, 0.1)) <= 1e-12);
}

TEST_CASE("two-bus power flow matches the closed form") {
  Gen gen(1);
  for (int t = 0; t < 20; ++t) {
    const double r = gen.uniform(0.01, 0.1);
    const double x = gen.uniform(0.01, 0.1);
    const double p = gen.uniform(0.0, 0.5);
    const double q = gen.uniform(-0.1, 0.3);
    const AdmittanceModel m = apse::testing::two_bus(1.0 / Complex(r, x));
    CVec loads = CVec::Zero(2);
    loads(1) = Complex(p, q);
    const PolarState s = solve_power_flow(m, loads);
    CHECK(s.magnitude(0) == doctest::Approx(oracle::two_bus_receiving_magnitude(1.0, r, x, p, q)).epsilon(1e-10));
    // Postcondition on the injection mismatch.
    const Vec inj = eval_injections(s, m);
    CHECK(std::abs(inj(0) + p) <= 1e-10);
    CHECK(std::abs(inj(1) + q) <= 1e-10);
  }
}

TEST_CASE("power flow beyond the nose point is infeasible") {
  const AdmittanceModel m = apse::testing::two_bus(1.0 / Complex(0.1, 0.3));
  CVec loads = CVec::Zero(2);
  loads(1) = Complex(5.0, 3.0);
  try {
    solve_power_flow(m, loads);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Infeasible);
  }
}

TEST_CASE("region validation") {
  const auto& f = apse::testing::ieee33();
  UncertaintyRegion ok{"a", {5, 6}, -0.5, 0.5};
  CHECK_NOTHROW(ok.validate(f.model(), f.set()));
  UncertaintyRegion flipped{"b", {5}, 0.5, -0.5};
  CHECK_THROWS_AS(flipped.validate(f.model(), f.set()), Error);
  MeasurementSet mags_only;
  mags_only.mag_buses = {5};
  CHECK_THROWS_AS(ok.validate(f.model(), mags_only), Error);
}

TEST_CASE("sample draws are bounded and reproducible") {
  std::vector<UncertaintyRegion> regions = {{"a", {1, 2, 3}, -0.5, 0.5}, {"b", {7, 8}, -0.2, 0.1}};
  for (Index i = 0; i < 200; ++i) {
    const Vec u = SampleBatch::draw(regions, 99, i, 0);
    REQUIRE(u.size() == 5);
    for (Index k = 0; k < 3; ++k) CHECK((u(k) >= -0.5 && u(k) <= 0.5));
    for (Index k = 3; k < 5; ++k) CHECK((u(k) >= -0.2 && u(k) <= 0.1));
    CHECK(SampleBatch::draw(regions, 99, i, 0) == u);
    CHECK(SampleBatch::draw(regions, 99, i, 1) != u);
  }
  CHECK(SampleBatch::draw(regions, 99, 3, 0) != SampleBatch::draw(regions, 100, 3, 0));
}

TEST_CASE("mean region load is nominal within Monte-Carlo error") {
  std::vector<UncertaintyRegion> regions = {{"a", {1, 2, 3, 4, 5}, -0.5, 0.5}};
  const Index m = 4000;
  Vec sum = Vec::Zero(5);
  for (Index i = 0; i < m; ++i) sum += SampleBatch::draw(regions, 7, i, 0);
  const double sigma = 1.0 / std::sqrt(12.0);
  CHECK(inf_norm(sum / static_cast<double>(m)) <= 3.0 * sigma / std::sqrt(static_cast<double>(m)));
}

TEST_CASE("degenerate batch: zero noise and zero width") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(5);
  for (auto& r : cfg.regions) r.lower = r.upper = 0.0;
  cfg.noise_scale = 0.0;
  const SynthesisResult s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  for (const auto& p : s.profiles) CHECK(inf_norm(p.stacked() - s.bootstrap.stacked()) <= 1e-14);
  const RunStatistics stats = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                        Comparison::Both, monitor_buses());
  for (size_t i = 0; i < s.profiles.size(); ++i) {
    CHECK(inf_norm(stats.apse_states[i].stacked() - s.bootstrap_truth.stacked()) <= 1e-8);
    CHECK(inf_norm(stats.gnvqr_states[i].stacked() - s.bootstrap_truth.stacked()) <= 1e-8);
    CHECK(stats.records[i].path == SolvePath::RmseAccepted);
  }
}

TEST_CASE("synthesis is deterministic across seeds and thread counts") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig a = experiment_config(24);
  a.noise_scale = 1.0;
  a.threads = 1;
  HarnessConfig b = a;
  b.threads = 4;
  const auto sa = synthesize_profiles(f.model(), f.set(), f.covariance(), a);
  const auto sb = synthesize_profiles(f.model(), f.set(), f.covariance(), b);
  REQUIRE(sa.profiles.size() == 24);
  for (size_t i = 0; i < sa.profiles.size(); ++i) {
    CHECK(sa.profiles[i].id == static_cast<std::int64_t>(i + 1));
    CHECK(sa.profiles[i].stacked() == sb.profiles[i].stacked());
  }
  CHECK(sa.batch.draws == sb.batch.draws);
  CHECK(sa.bootstrap.id == 0);
}

TEST_CASE("synthesized profiles carry drawn pseudo-measurements and exact power flow") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(10);
  cfg.noise_scale = 0.0;
  const auto s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  for (size_t i = 0; i < s.profiles.size(); ++i) {
    const Vec exact = measured_outputs(s.truths[i], f.set(), f.model());
    CHECK(inf_norm(s.profiles[i].stacked() - exact) <= 1e-10);
    Index j = 0;
    for (const auto& region : cfg.regions) {
      for (Index bus : region.buses) {
        const Complex drawn = cfg.nominal_loads(bus) * (1.0 + s.batch.draws(static_cast<Index>(i), j++));
        const Index slot = std::find(f.set().inj_buses.begin(), f.set().inj_buses.end(), bus) -
                           f.set().inj_buses.begin();
        const Index ns = static_cast<Index>(f.set().inj_buses.size());
        CHECK(s.profiles[i].injections(slot) == -drawn.real());
        CHECK(s.profiles[i].injections(ns + slot) == -drawn.imag());
      }
    }
  }
}

TEST_CASE("histograms conserve mass and handle a degenerate range") {
  Gen gen(4);
  std::vector<double> xs;
  for (int k = 0; k < 500; ++k) xs.push_back(gen.uniform(0.9, 1.0));
  const Histogram h = make_histogram(xs, 30);
  CHECK(h.counts.size() == 30);
  CHECK(h.mass() == 500);
  CHECK(h.lower <= *std::min_element(xs.begin(), xs.end()));
  CHECK(h.upper >= *std::max_element(xs.begin(), xs.end()));
  const Histogram one = make_histogram(std::vector<double>(7, 0.97), 30);
  CHECK(one.counts.size() == 1);
  CHECK(one.mass() == 7);
  const Histogram clipped = make_histogram(xs, 10, 0.95, 0.96);
  CHECK(clipped.mass() == 500);
}

TEST_CASE("two-sample KS statistic") {
  CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_statistic({1, 2, 3}, {4, 5, 6}) == 1.0);
  // F_a jumps to 1/2 at 1, F_b stays 0 until 1.5.
  CHECK(ks_statistic({1, 2}, {1.5, 2.5}) == doctest::Approx(0.5));
  // Brute-force oracle over the pooled points.
  Gen gen(5);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> a;
    std::vector<double> b;
    for (int k = 0; k < 40; ++k) a.push_back(std::round(gen.uniform(0, 10)));
    for (int k = 0; k < 55; ++k) b.push_back(std::round(gen.uniform(0, 10)) + 0.5 * (t % 2));
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    auto cdf = [](const std::vector<double>& v, double y) {
      return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double e) { return e <= y; })) /
             static_cast<double>(v.size());
    };
    double worst = 0.0;
    for (double y : pooled) worst = std::max(worst, std::abs(cdf(a, y) - cdf(b, y)));
    CHECK(ks_statistic(a, b) == doctest::Approx(worst).epsilon(1e-14));
  }
}

TEST_CASE("comparison names") {
  CHECK(comparison_from_string("both") == Comparison::Both);
  CHECK(comparison_from_string("apse") == Comparison::Apse);
  CHECK(comparison_from_string("gnvqr") == Comparison::Gnvqr);
  CHECK(std::string(to_string(Comparison::Gnvqr)) == "gnvqr");
  CHECK_THROWS_AS(comparison_from_string("fast"), Error);
}

TEST_CASE("paired batch: accepted states agree and uncertainty localizes") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(150);
  cfg.noise_scale = 0.0;
  const auto s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  const auto buses = monitor_buses();
  const RunStatistics stats = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                        Comparison::Both, buses);
  CHECK(stats.solved_count() == s.profiles.size());
  CHECK(stats.max_accepted_difference() <= 1e-5);
  for (size_t i = 0; i < s.profiles.size(); ++i) {
    CHECK(inf_norm(stats.gnvqr_states[i].stacked() - s.truths[i].stacked()) <= 1e-6);
  }
  // Bus id 2 is next to the substation; ids 18 and 33 sit inside the regions.
  const double near = stddev(stats.gnvqr_magnitudes[0]);
  CHECK(stddev(stats.gnvqr_magnitudes[3]) > near);
  CHECK(stddev(stats.gnvqr_magnitudes[6]) > near);
  CHECK(stats.monitor_lines.size() == buses.size());
  for (size_t b = 0; b < buses.size(); ++b) {
    CHECK(stats.apse_magnitudes[b].size() == s.profiles.size());
  }
  CHECK(stats.fallback_rate(50) <= stats.fallback_rate(150));
}

TEST_CASE("summarize writes the documented layout") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(40);
  cfg.noise_scale = 0.0;
  const auto s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  const auto buses = monitor_buses();
  const RunStatistics stats = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                        Comparison::Both, buses);
  const fs::path dir = scratch_dir("summary");
  summarize(stats, f.model(), f.network.labels(), dir);

  CHECK(fs::exists(dir / "states" / "apse_states.csv"));
  CHECK(fs::exists(dir / "states" / "gnvqr_states.csv"));
  CHECK(lines(dir / "states" / "apse_states.csv").size() == 41);
  CHECK(lines(dir / "timing" / "timing.csv").size() == 41);
  CHECK(lines(dir / "timing" / "acceptance_rate.csv").size() == 41);
  for (const auto& entry : fs::directory_iterator(dir / "histograms")) {
    const auto rows = lines(entry.path());
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == "bin_lower,bin_upper,apse_count,gnvqr_count");
    std::int64_t a = 0;
    std::int64_t g = 0;
    for (size_t k = 1; k < rows.size(); ++k) {
      std::istringstream in(rows[k]);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(in, cell, ',')) cells.push_back(cell);
      REQUIRE(cells.size() == 4);
      a += std::stoll(cells[2]);
      g += std::stoll(cells[3]);
    }
    CHECK(a == 40);
    CHECK(g == 40);
  }
  CHECK(fs::exists(dir / "histograms" / "voltage_18.csv"));
  CHECK(fs::exists(dir / "histograms" / "current_17_18.csv"));

  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary["samples"] == 40);
  CHECK(summary["comparison"] == "both");
  CHECK(summary.contains("speedup"));
  CHECK(summary["acceptance_rate_curve"]["rate"].size() == 40);
  CHECK(summary["ks_statistic"].size() == buses.size());
  fs::remove_all(dir);
}

TEST_CASE("statistics files are reproducible apart from timing") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(20);
  const auto buses = monitor_buses();
  std::vector<fs::path> dirs;
  for (int run = 0; run < 2; ++run) {
    const auto s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
    const RunStatistics stats = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                          Comparison::Both, buses);
    dirs.push_back(scratch_dir("repro" + std::to_string(run)));
    summarize(stats, f.model(), f.network.labels(), dirs.back());
  }
  for (const auto& rel : {"states/apse_states.csv", "states/gnvqr_states.csv",
                          "timing/acceptance_rate.csv", "histograms/voltage_33.csv",
                          "histograms/current_32_33.csv"}) {
    CHECK_MESSAGE(slurp(dirs[0] / rel) == slurp(dirs[1] / rel), rel);
  }
  for (const auto& d : dirs) fs::remove_all(d);
}

TEST_CASE("single profile gives degenerate one-bin outputs") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(1);
  const auto s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  const RunStatistics stats = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                        Comparison::Apse, monitor_buses());
  CHECK(stats.records.size() == 1);
  const fs::path dir = scratch_dir("single");
  summarize(stats, f.model(), f.network.labels(), dir);
  CHECK(lines(dir / "timing" / "timing.csv").size() == 2);
  for (const auto& entry : fs::directory_iterator(dir / "histograms")) {
    CHECK(lines(entry.path()).size() == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("empty statistics still write headers") {
  const auto& f = apse::testing::ieee33();
  RunStatistics empty;
  const fs::path dir = scratch_dir("empty");
  summarize(empty, f.model(), f.network.labels(), dir);
  CHECK(lines(dir / "timing" / "timing.csv").size() == 1);
  CHECK(lines(dir / "timing" / "acceptance_rate.csv").size() == 1);
  CHECK(lines(dir / "states" / "apse_states.csv").size() == 1);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary["samples"] == 0);
  fs::remove_all(dir);
}

TEST_CASE("apse-only and gnvqr-only runs") {
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = experiment_config(10);
  const auto s = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  const auto apse_only = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                   Comparison::Apse, monitor_buses());
  CHECK(apse_only.gnvqr_states.empty());
  CHECK(apse_only.apse_states.size() == 10);
  CHECK(apse_only.ks_per_bus().empty());
  const auto gn_only = run_batch(s, f.model(), f.set(), f.covariance(), ApseConfig{},
                                 Comparison::Gnvqr, monitor_buses());
  CHECK(gn_only.apse_states.empty());
  CHECK(gn_only.gnvqr_states.size() == 10);
  CHECK(gn_only.fallback_rate(10) == 0.0);
}
