#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "apse/cli.hpp"

using namespace apse;
using apse::testing::Gen;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* kThreeBus = R"({
  "name": "three",
  "buses": [{"id": 10, "shunt_g": 0.0, "shunt_b": 0.01},
            {"id": 20, "shunt_g": 0.0, "shunt_b": 0.0},
            {"id": 30, "shunt_g": 0.001, "shunt_b": 0.0}],
  "lines": [{"from": 10, "to": 20, "g": 4.0, "b": -12.0},
            {"from": 20, "to": 30, "g": 3.0, "b": -9.0}],
  "slack": {"id": 10, "v_re": 1.0, "v_im": 0.0}
})";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("apse_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "apse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string data(const std::string& rel) { return apse::testing::data_path(rel); }

// Experiment copy with a smaller sample count, pointing at the shipped files.
fs::path small_experiment(const fs::path& dir, int samples, const std::string& compare = "both") {
  json exp = json::parse(read_text(data("ieee33/experiment.json")));
  exp["network"] = data("ieee33/network.json");
  exp["measurements"] = data("ieee33/measurements.json");
  exp["samples"] = samples;
  exp["comparison"] = compare;
  const fs::path p = dir / "experiment.json";
  write_file(p, exp.dump());
  return p;
}

}  // namespace

TEST_CASE("network file parses into dense indices") {
  const NetworkData net = parse_network(kThreeBus, "three.json");
  CHECK(net.name == "three");
  CHECK(net.bus_ids == std::vector<std::int64_t>{10, 20, 30});
  CHECK(net.model.bus_count() == 3);
  CHECK(net.model.substation() == 0);
  CHECK(net.model.line_admittances()(1) == Complex(3.0, -9.0));
  CHECK(net.model.shunt_admittances()(0) == Complex(0.0, 0.01));
  CHECK(net.bus_index(30, "x") == 2);
  CHECK_THROWS_AS(net.bus_index(40, "x"), Error);
}

TEST_CASE("network errors name the field") {
  std::string bad = kThreeBus;
  bad.replace(bad.find("\"to\": 30"), 8, "\"to\": 31");
  try {
    parse_network(bad, "three.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("three.json") != std::string::npos);
    CHECK(std::string(e.what()).find("lines[1].to") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_network("{ not json", "broken.json"), Error);
  CHECK_THROWS_AS(parse_network(R"({"buses": []})", "empty.json"), Error);
  try {
    load_network("/nonexistent/net.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("measurement layout parsing") {
  const NetworkData net = parse_network(kThreeBus, "three.json");
  const auto layout = parse_measurements(
      R"({"mag_buses": [30], "flow_lines": [0, {"from": 20, "to": 30}], "inj_buses": [20, 30],
          "sigmas": {"mag": 0.01, "flow": 0.02, "inj": 0.03}})",
      "m.json", net);
  CHECK(layout.set.mag_buses == std::vector<Index>{2});
  CHECK(layout.set.flow_lines == std::vector<Index>{0, 1});
  CHECK(layout.set.inj_buses == std::vector<Index>{1, 2});
  CHECK(layout.sigmas.inj == 0.03);
  const Vec var = layout.covariance().variances();
  CHECK(var(0) == doctest::Approx(1e-4));
  CHECK(var(1) == doctest::Approx(4e-4));
  CHECK(var(var.size() - 1) == doctest::Approx(9e-4));

  try {
    parse_measurements(R"({"mag_buses": [99], "flow_lines": [], "inj_buses": []})", "m.json", net);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("mag_buses[0]") != std::string::npos);
  }
  // Receiving-end placement is rejected.
  CHECK_THROWS_AS(parse_measurements(R"({"mag_buses": [], "flow_lines": [{"from": 30, "to": 20}], "inj_buses": []})",
                                     "m.json", net),
                  Error);
  CHECK_THROWS_AS(parse_measurements(R"({"mag_buses": [10], "flow_lines": [], "inj_buses": []})", "m.json", net),
                  Error);
}

TEST_CASE("experiment paths resolve relative to the config") {
  const ExperimentConfig exp = load_experiment(data("ieee33/experiment.json"));
  CHECK(fs::exists(exp.network_path));
  CHECK(fs::exists(exp.measurements_path));
  CHECK(exp.samples == 1000);
  CHECK(exp.regions.size() == 2);
  CHECK(exp.regions[0].buses.size() == 5);
  CHECK(exp.regions[0].lower == -0.5);
  CHECK(exp.regions[0].upper == 0.5);
  CHECK(exp.rom.hessian_cap == 50);
  CHECK(exp.solver.step_tol == 1e-6);
  CHECK(exp.solver.gradient_tol == 1e-6);
  CHECK(exp.comparison == Comparison::Both);
  CHECK_THROWS_AS(parse_experiment(R"({"network": "a.json"})", "e.json", "."), Error);
}

TEST_CASE("profile CSV round trip and header checks") {
  const auto& f = apse::testing::ieee33();
  Gen gen(1);
  std::vector<MeasurementProfile> profiles;
  for (int k = 0; k < 5; ++k) {
    profiles.push_back(MeasurementProfile::from_stacked(gen.vec(f.set().rows(), -1, 1), f.set(), k + 3));
  }
  const fs::path dir = scratch("csv");
  write_profiles(dir / "p.csv", profiles, f.set(), f.network);
  const auto back = read_profiles(dir / "p.csv", f.set(), f.network);
  REQUIRE(back.size() == profiles.size());
  for (size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].id == profiles[k].id);
    CHECK(back[k].stacked() == profiles[k].stacked());
  }
  const std::string header = profile_header(f.set(), f.network);
  CHECK(header.rfind("profile_id,mag:18,mag:33,flow_p:1-2,flow_q:1-2,inj_p:2,", 0) == 0);

  std::string text = read_text(dir / "p.csv");
  text.replace(text.find("mag:33"), 6, "mag:32");
  write_file(dir / "bad_header.csv", text);
  try {
    read_profiles(dir / "bad_header.csv", f.set(), f.network);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("column 3") != std::string::npos);
  }
  write_file(dir / "bad_cell.csv", header + "\n1,abc\n");
  try {
    read_profiles(dir / "bad_cell.csv", f.set(), f.network);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("basis checkpoint round trip") {
  Gen gen(2);
  Mat basis(6, 3);
  for (Index c = 0; c < 3; ++c) basis.col(c) = gen.vec(6, -1, 1);
  const fs::path dir = scratch("basis");
  write_basis(dir / "b.csv", basis);
  CHECK(read_basis(dir / "b.csv") == basis);
  write_file(dir / "ragged.csv", "1,2\n3\n");
  CHECK_THROWS_AS(read_basis(dir / "ragged.csv"), Error);
  fs::remove_all(dir);
}

TEST_CASE("state file lists every bus with the substation first") {
  const NetworkData net = parse_network(kThreeBus, "three.json");
  PolarState x{Vec(2), Vec(2)};
  x.magnitude << 0.99, 0.98;
  x.angle << -0.01, -0.02;
  const fs::path dir = scratch("state");
  write_state(dir / "s.csv", x, net);
  std::istringstream in(read_text(dir / "s.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "bus_id,vm,va_rad");
  std::getline(in, line);
  CHECK(line.rfind("10,1", 0) == 0);
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
  fs::remove_all(dir);
}

TEST_CASE("cli validate on the shipped feeder") {
  const auto r = cli({"validate", "--network", data("ieee33/network.json"), "--measurements",
                      data("ieee33/measurements.json")});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("measurement rows: 68, unknowns (2p): 64") != std::string::npos);
  const auto e = cli({"validate", "--experiment", data("ieee33/experiment.json")});
  CHECK(e.code == kExitOk);
  CHECK(e.out.find("2 uncertainty regions") != std::string::npos);
}

TEST_CASE("cli validate reports bad files and thin layouts") {
  const fs::path dir = scratch("validate");
  write_file(dir / "unknown.json", R"({"mag_buses": [77], "flow_lines": [], "inj_buses": []})");
  auto r = cli({"validate", "--network", data("ieee33/network.json"), "--measurements",
                (dir / "unknown.json").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("mag_buses[0]") != std::string::npos);

  json thin = json::parse(read_text(data("ieee33/measurements.json")));
  thin["mag_buses"] = json::array();
  thin["flow_lines"] = json::array();
  write_file(dir / "thin.json", thin.dump());
  r = cli({"validate", "--network", data("ieee33/network.json"), "--measurements", (dir / "thin.json").string()});
  CHECK(r.code == kExitSolve);
  CHECK(r.err.find("redundancy check failed") != std::string::npos);

  r = cli({"validate", "--network", (dir / "missing.json").string(), "--measurements",
           data("ieee33/measurements.json")});
  CHECK(r.code == kExitIo);
  CHECK(cli({"bogus"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  fs::remove_all(dir);
}

TEST_CASE("cli synthesize then estimate recovers the truth deterministically") {
  const fs::path dir = scratch("estimate");
  const fs::path exp = small_experiment(dir, 3);
  auto r = cli({"synthesize", "--experiment", exp.string(), "--out", (dir / "syn").string(), "--threads", "2"});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "syn" / "profiles.csv"));
  CHECK(fs::exists(dir / "syn" / "bootstrap.csv"));

  const std::vector<std::string> args = {"estimate",      "--experiment", exp.string(),
                                         "--profiles",    (dir / "syn" / "profiles.csv").string(),
                                         "--row",         "1",
                                         "--eps-n",       "1e-10"};
  auto with_out = [&](const std::string& out) {
    auto a = args;
    a.push_back("--out");
    a.push_back(out);
    return cli(a);
  };
  r = with_out((dir / "est1").string());
  REQUIRE(r.code == kExitOk);
  CHECK(with_out((dir / "est2").string()).code == kExitOk);
  CHECK(read_text(dir / "est1" / "state.csv") == read_text(dir / "est2" / "state.csv"));
  const json report = json::parse(read_text(dir / "est1" / "report.json"));
  CHECK(report["converged"] == true);
  CHECK(report["profile_id"] == 2);
  CHECK(report["iterations"].get<int>() >= 1);
  CHECK(report["final_step_norm"].get<double>() < 1e-10);

  // Noise-free experiment: the estimate is the power-flow truth.
  const auto& f = apse::testing::ieee33();
  HarnessConfig cfg = harness_config(load_experiment(exp), f.network, 1);
  const auto synth = synthesize_profiles(f.model(), f.set(), f.covariance(), cfg);
  std::istringstream in(read_text(dir / "est1" / "state.csv"));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);  // substation
  double worst = 0.0;
  for (Index k = 0; k < f.model().state_count(); ++k) {
    std::getline(in, line);
    std::istringstream row(line);
    std::string id, vm, va;
    std::getline(row, id, ',');
    std::getline(row, vm, ',');
    std::getline(row, va, ',');
    worst = std::max(worst, std::abs(std::stod(vm) - synth.truths[1].magnitude(k)));
    worst = std::max(worst, std::abs(std::stod(va) - synth.truths[1].angle(k)));
  }
  CHECK(worst <= 1e-8);

  r = cli({"estimate", "--experiment", exp.string(), "--profiles", (dir / "syn" / "profiles.csv").string(),
           "--row", "9", "--out", (dir / "est3").string()});
  CHECK(r.code == kExitUsage);
  fs::remove_all(dir);
}

TEST_CASE("cli estimate exits 2 when the solve does not converge") {
  const fs::path dir = scratch("noconv");
  const fs::path exp = small_experiment(dir, 2);
  REQUIRE(cli({"synthesize", "--experiment", exp.string(), "--out", dir.string()}).code == kExitOk);
  // An absurd magnitude reading pushes the first step past the divergence guard.
  std::string text = read_text(dir / "profiles.csv");
  std::istringstream in(text);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  const auto first = row.find(',');
  const auto second = row.find(',', first + 1);
  row = row.substr(0, first + 1) + "40.0" + row.substr(second);
  write_file(dir / "bad.csv", header + "\n" + row + "\n");
  const auto r = cli({"estimate", "--experiment", exp.string(), "--profiles", (dir / "bad.csv").string(),
                      "--out", (dir / "est").string()});
  CHECK(r.code == kExitSolve);
  CHECK(r.out.find("NOT converged") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli batch writes the output layout") {
  const fs::path dir = scratch("batch");
  const fs::path exp = small_experiment(dir, 30);
  const auto r = cli({"batch", "--experiment", exp.string(), "--out", (dir / "run").string(),
                      "--threads", "2", "--save-basis", (dir / "basis.csv").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "run" / "states" / "apse_states.csv"));
  CHECK(fs::exists(dir / "run" / "histograms" / "voltage_33.csv"));
  CHECK(fs::exists(dir / "run" / "timing" / "timing.csv"));
  CHECK(fs::exists(dir / "basis.csv"));
  const json summary = json::parse(read_text(dir / "run" / "summary.json"));
  CHECK(summary["samples"] == 30);
  CHECK(summary.contains("speedup"));
  CHECK(summary["acceptance_rate_curve"]["rate"].size() == 30);

  // Same seeds, same statistics (timing excluded).
  REQUIRE(cli({"batch", "--experiment", exp.string(), "--out", (dir / "run2").string()}).code == kExitOk);
  CHECK(read_text(dir / "run" / "states" / "apse_states.csv") ==
        read_text(dir / "run2" / "states" / "apse_states.csv"));
  CHECK(read_text(dir / "run" / "histograms" / "voltage_18.csv") ==
        read_text(dir / "run2" / "histograms" / "voltage_18.csv"));

  // A different seed changes the stream.
  REQUIRE(cli({"batch", "--experiment", exp.string(), "--out", (dir / "run3").string(), "--seed", "5",
               "--compare", "gnvqr"})
              .code == kExitOk);
  CHECK(read_text(dir / "run" / "states" / "gnvqr_states.csv") !=
        read_text(dir / "run3" / "states" / "gnvqr_states.csv"));
  CHECK_FALSE(fs::exists(dir / "run3" / "states" / "apse_states.csv"));

  // Warm start from the checkpoint.
  const auto warm = cli({"batch", "--experiment", exp.string(), "--out", (dir / "run4").string(),
                         "--load-basis", (dir / "basis.csv").string(), "--compare", "apse"});
  CHECK(warm.code == kExitOk);
  fs::remove_all(dir);
}

TEST_CASE("cli batch with a single profile") {
  const fs::path dir = scratch("single");
  const fs::path exp = small_experiment(dir, 1, "apse");
  const auto r = cli({"batch", "--experiment", exp.string(), "--out", (dir / "run").string()});
  REQUIRE(r.code == kExitOk);
  std::istringstream in(read_text(dir / "run" / "histograms" / "voltage_2.csv"));
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli rejects bad overrides") {
  const fs::path dir = scratch("overrides");
  const fs::path exp = small_experiment(dir, 2);
  CHECK(cli({"batch", "--experiment", exp.string(), "--out", dir.string(), "--compare", "fast"}).code == kExitUsage);
  CHECK(cli({"batch", "--experiment", exp.string(), "--out", dir.string(), "--eps-n", "-1"}).code == kExitUsage);
  CHECK(cli({"batch", "--experiment", exp.string(), "--hessian-cap", "many"}).code == kExitUsage);
  fs::remove_all(dir);
}
