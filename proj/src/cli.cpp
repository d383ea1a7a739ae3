#include "apse/cli.hpp"

#include <fstream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "apse/io.hpp"
#include "json.hpp"

namespace apse {

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return kExitIo;
    case ErrorKind::Observability:
    case ErrorKind::Conditioning:
    case ErrorKind::Infeasible:
    case ErrorKind::DegenerateState:
    case ErrorKind::DegenerateBasis: return kExitSolve;
    default: return kExitUsage;
  }
}

struct Options {
  std::string network;
  std::string measurements;
  std::string experiment;
  std::string profiles;
  std::string out = "apse_out";
  std::optional<std::uint64_t> seed;
  std::optional<double> eps_n;
  std::optional<double> expansion_tol;
  std::optional<int> hessian_cap;
  std::optional<std::string> compare;
  unsigned threads = 0;
  std::size_t row = 0;
  std::string save_basis;
  std::string load_basis;
  bool verbose = false;
};

struct Inputs {
  NetworkData network;
  MeasurementLayout layout;
  std::optional<ExperimentConfig> experiment;
};

Inputs load_inputs(const Options& opt) {
  Inputs in;
  std::string network_path = opt.network;
  std::string measurements_path = opt.measurements;
  if (!opt.experiment.empty()) {
    in.experiment = load_experiment(opt.experiment);
    if (network_path.empty()) network_path = in.experiment->network_path.string();
    if (measurements_path.empty()) measurements_path = in.experiment->measurements_path.string();
  }
  if (network_path.empty()) throw Error(ErrorKind::Parse, "--network (or --experiment) is required");
  if (measurements_path.empty()) {
    throw Error(ErrorKind::Parse, "--measurements (or --experiment) is required");
  }
  in.network = load_network(network_path);
  in.layout = load_measurements(measurements_path, in.network);
  return in;
}

void apply_overrides(const Options& opt, ExperimentConfig& exp) {
  if (opt.seed) {
    exp.sample_seed = *opt.seed;
    exp.noise_seed = *opt.seed + 1;
  }
  if (opt.eps_n) exp.solver.step_tol = *opt.eps_n;
  if (opt.expansion_tol) exp.rom.expansion_tol = *opt.expansion_tol;
  if (opt.hessian_cap) exp.rom.hessian_cap = *opt.hessian_cap;
  if (opt.compare) exp.comparison = comparison_from_string(*opt.compare);
  exp.solver.validate();
}

void require_redundancy(const Inputs& in, std::ostream& out) {
  const auto report = validate_redundancy(in.layout.set, in.network.model.state_count());
  out << "measurement rows: " << report.rows << ", unknowns (2p): " << report.unknowns
      << ", redundancy: " << report.slack << " rows (" << report.ratio * 100.0 << "%)\n";
  if (!report.redundant) {
    throw Error(ErrorKind::Observability,
                "redundancy check failed: " + std::to_string(report.rows) +
                    " measurement rows do not exceed 2p = " + std::to_string(report.unknowns));
  }
}

int cmd_validate(const Options& opt, std::ostream& out) {
  const Inputs in = load_inputs(opt);
  const AdmittanceModel& model = in.network.model;
  out << "network: " << (in.network.name.empty() ? "<unnamed>" : in.network.name) << ", "
      << model.bus_count() << " buses, " << model.line_count() << " lines, connected\n";
  out << "magnitude rows: " << in.layout.set.mag_rows() << ", flow rows: " << in.layout.set.flow_rows()
      << ", injection rows: " << in.layout.set.inj_rows() << '\n';
  require_redundancy(in, out);
  prefactor(PolarState::flat(model.state_count(), model.slack_voltage()), model, in.layout.set,
            in.layout.covariance());
  out << "observability: weighted Jacobian has full column rank at flat start\n";
  if (in.experiment) {
    harness_config(*in.experiment, in.network, 1);
    for (const auto& r : harness_config(*in.experiment, in.network, 1).regions) {
      r.validate(model, in.layout.set);
    }
    resolve_buses(in.experiment->monitor_buses, in.network, "monitor_buses");
    out << "experiment: " << in.experiment->samples << " samples, "
        << in.experiment->regions.size() << " uncertainty regions\n";
  }
  out << "ok\n";
  return kExitOk;
}

int cmd_estimate(const Options& opt, std::ostream& out) {
  const Inputs in = load_inputs(opt);
  require_redundancy(in, out);
  if (opt.profiles.empty()) throw Error(ErrorKind::Parse, "--profiles is required");
  const auto profiles = read_profiles(opt.profiles, in.layout.set, in.network);
  if (opt.row >= profiles.size()) {
    throw Error(ErrorKind::Parse, "--row " + std::to_string(opt.row) + " but the file has " +
                                      std::to_string(profiles.size()) + " profiles");
  }
  const MeasurementProfile& profile = profiles[opt.row];
  SolverConfig solver;
  if (opt.eps_n) solver.step_tol = *opt.eps_n;
  const AdmittanceModel& model = in.network.model;
  const CovarianceModel cov = in.layout.covariance();
  const SolveReport report =
      gnvqr_solve(PolarState::flat(model.state_count(), model.slack_voltage()), profile,
                  in.layout.set, model, cov, solver);

  const Vec weighted = cov.weight_sqrt().cwiseProduct(
      assemble_residual(report.state, profile, in.layout.set, model));
  const std::filesystem::path dir = opt.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
  write_state(dir / "state.csv", report.state, in.network);
  nlohmann::json summary = {{"profile_id", profile.id},
                            {"converged", report.converged},
                            {"iterations", report.iterations},
                            {"final_step_norm", report.final_step_norm},
                            {"objective", weighted.squaredNorm()},
                            {"max_abs_weighted_residual", inf_norm(weighted)},
                            {"failure", report.failure}};
  std::ofstream rep(dir / "report.json");
  if (!rep) throw Error(ErrorKind::Io, "cannot write " + (dir / "report.json").string());
  rep << summary.dump(2) << '\n';

  out << "profile " << profile.id << ": " << (report.converged ? "converged" : "NOT converged")
      << " in " << report.iterations << " iterations, final step " << report.final_step_norm
      << ", objective " << weighted.squaredNorm() << ", " << report.wall_time << " s\n";
  return report.converged ? kExitOk : kExitSolve;
}

ExperimentConfig experiment_or_fail(const Inputs& in) {
  if (!in.experiment) throw Error(ErrorKind::Parse, "--experiment is required");
  return *in.experiment;
}

int cmd_synthesize(const Options& opt, std::ostream& out) {
  const Inputs in = load_inputs(opt);
  ExperimentConfig exp = experiment_or_fail(in);
  apply_overrides(opt, exp);
  const auto synth = synthesize_profiles(in.network.model, in.layout.set, in.layout.covariance(),
                                         harness_config(exp, in.network, opt.threads));
  const std::filesystem::path dir = opt.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
  write_profiles(dir / "bootstrap.csv", {synth.bootstrap}, in.layout.set, in.network);
  write_profiles(dir / "profiles.csv", synth.profiles, in.layout.set, in.network);
  out << "wrote " << synth.profiles.size() << " profiles to " << (dir / "profiles.csv").string()
      << '\n';
  return kExitOk;
}

int cmd_batch(const Options& opt, std::ostream& out) {
  const Inputs in = load_inputs(opt);
  require_redundancy(in, out);
  ExperimentConfig exp = experiment_or_fail(in);
  apply_overrides(opt, exp);
  const AdmittanceModel& model = in.network.model;
  const CovarianceModel cov = in.layout.covariance();
  const auto synth = synthesize_profiles(model, in.layout.set, cov,
                                         harness_config(exp, in.network, opt.threads));
  ApseConfig config;
  config.solver = exp.solver;
  config.rom = exp.rom;
  const auto monitor = resolve_buses(exp.monitor_buses, in.network, "monitor_buses");

  RunStatistics stats;
  if (!opt.load_basis.empty() || !opt.save_basis.empty()) {
    // Checkpointed runs drive the estimator directly so the basis can be injected or kept.
    const Mat basis = opt.load_basis.empty() ? Mat() : read_basis(opt.load_basis);
    const ApseRun run = apse_run(synth.bootstrap, synth.profiles, model, in.layout.set, cov, config,
                                 opt.load_basis.empty() ? nullptr : &basis);
    if (!opt.save_basis.empty()) write_basis(opt.save_basis, run.basis);
    out << "basis size " << run.basis.cols() << '\n';
  }
  stats = run_batch(synth, model, in.layout.set, cov, config, exp.comparison, monitor,
                    exp.histogram_bins);
  summarize(stats, model, in.network.labels(), opt.out);

  const double solved = stats.records.empty()
                            ? 1.0
                            : static_cast<double>(stats.solved_count()) /
                                  static_cast<double>(stats.records.size());
  out << "profiles: " << stats.records.size() << ", solved: " << stats.solved_count() << '\n';
  if (stats.has_apse()) {
    out << "apse total " << stats.apse_total_time() << " s, final basis " << stats.final_basis_size
        << ", fallback rate (last half) "
        << stats.fallback_rate(stats.records.size() - stats.records.size() / 2) << '\n';
  }
  if (stats.has_gnvqr()) out << "gnvqr total " << stats.gnvqr_total_time() << " s\n";
  if (stats.comparison == Comparison::Both && stats.apse_total_time() > 0.0) {
    out << "speedup " << stats.gnvqr_total_time() / stats.apse_total_time() << '\n';
  }
  out << "outputs in " << opt.out << '\n';
  return solved >= 0.99 ? kExitOk : kExitSolve;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Accelerated probabilistic state estimation for distribution feeders"};
  app.require_subcommand(1);
  Options opt;

  auto add_inputs = [&](CLI::App* cmd) {
    cmd->add_option("--network", opt.network, "network JSON");
    cmd->add_option("--measurements", opt.measurements, "measurement layout JSON");
    cmd->add_option("--experiment", opt.experiment, "experiment JSON (supplies network/layout)");
  };
  auto add_tuning = [&](CLI::App* cmd) {
    cmd->add_option("--seed", opt.seed, "sample seed (noise seed = seed + 1)");
    cmd->add_option("--eps-n", opt.eps_n, "step tolerance");
    cmd->add_option("--expansion-tol", opt.expansion_tol, "relative basis expansion threshold");
    cmd->add_option("--hessian-cap", opt.hessian_cap, "profiles after which H-hat stops growing");
    cmd->add_option("--compare", opt.compare, "apse | gnvqr | both")
        ->check(CLI::IsMember({"apse", "gnvqr", "both"}));
    cmd->add_option("--threads", opt.threads, "worker threads for synthesis (0 = all cores)");
  };

  auto* validate = app.add_subcommand("validate", "check network, layout and observability");
  add_inputs(validate);

  auto* estimate = app.add_subcommand("estimate", "single GNvQR estimate from a profiles CSV");
  add_inputs(estimate);
  estimate->add_option("--profiles", opt.profiles, "profiles CSV")->required();
  estimate->add_option("--row", opt.row, "zero-based data row to estimate");
  estimate->add_option("--out", opt.out, "output directory");
  estimate->add_option("--eps-n", opt.eps_n, "step tolerance");

  auto* synthesize = app.add_subcommand("synthesize", "write sampled measurement profiles");
  add_inputs(synthesize);
  synthesize->add_option("--out", opt.out, "output directory");
  synthesize->add_option("--seed", opt.seed, "sample seed (noise seed = seed + 1)");
  synthesize->add_option("--threads", opt.threads, "worker threads (0 = all cores)");

  auto* batch = app.add_subcommand("batch", "Monte-Carlo run with APSE and/or GNvQR");
  add_inputs(batch);
  add_tuning(batch);
  batch->add_option("--out", opt.out, "output directory");
  batch->add_option("--save-basis", opt.save_basis, "write the final basis as CSV");
  batch->add_option("--load-basis", opt.load_basis, "start from a checkpointed basis CSV");

  app.add_flag("-v,--verbose", opt.verbose, "verbose diagnostics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*validate) return cmd_validate(opt, out);
    if (*estimate) return cmd_estimate(opt, out);
    if (*synthesize) return cmd_synthesize(opt, out);
    if (*batch) return cmd_batch(opt, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace apse
