#include "apse/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace apse {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& source, const std::string& field,
                       const std::string& what) {
  throw Error(ErrorKind::Parse, source + ": " + field + ": " + what);
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, source + ": " + e.what());
  }
}

const json& require(const json& obj, const std::string& key, const std::string& source,
                    const std::string& ctx) {
  const std::string field = ctx.empty() ? key : ctx + "." + key;
  if (!obj.is_object()) fail(source, ctx.empty() ? "<root>" : ctx, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(source, field, "missing required field");
  return *it;
}

double as_number(const json& j, const std::string& source, const std::string& field) {
  if (!j.is_number()) fail(source, field, "expected a number, got " + std::string(j.type_name()));
  return j.get<double>();
}

std::int64_t as_integer(const json& j, const std::string& source, const std::string& field) {
  if (!j.is_number_integer()) {
    fail(source, field, "expected an integer, got " + std::string(j.type_name()));
  }
  return j.get<std::int64_t>();
}

double number_or(const json& obj, const std::string& key, double fallback,
                 const std::string& source, const std::string& ctx) {
  const auto it = obj.find(key);
  return it == obj.end() ? fallback : as_number(*it, source, ctx + "." + key);
}

const json& as_array(const json& j, const std::string& source, const std::string& field) {
  if (!j.is_array()) fail(source, field, "expected an array");
  return j;
}

std::string field_at(const std::string& base, size_t k) {
  return base + "[" + std::to_string(k) + "]";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& cell, const std::string& where) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE) {
    throw Error(ErrorKind::Parse, where + ": not a number: '" + cell + "'");
  }
  return v;
}

std::string line_label(const NetworkData& network, Index line) {
  const auto& e = network.model.graph().edges[static_cast<size_t>(line)];
  return std::to_string(network.bus_ids[static_cast<size_t>(e.from)]) + "-" +
         std::to_string(network.bus_ids[static_cast<size_t>(e.to)]);
}

std::vector<std::int64_t> id_list(const json& j, const std::string& source,
                                  const std::string& field) {
  std::vector<std::int64_t> out;
  const json& arr = as_array(j, source, field);
  for (size_t k = 0; k < arr.size(); ++k) out.push_back(as_integer(arr[k], source, field_at(field, k)));
  return out;
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Index NetworkData::bus_index(std::int64_t id, const std::string& field) const {
  for (size_t k = 0; k < bus_ids.size(); ++k) {
    if (bus_ids[k] == id) return static_cast<Index>(k);
  }
  throw Error(ErrorKind::Parse, field + ": unknown bus id " + std::to_string(id));
}

NetworkData parse_network(const std::string& text, const std::string& source) {
  const json root = parse_json(text, source);
  NetworkData out;
  if (root.contains("name") && root["name"].is_string()) out.name = root["name"].get<std::string>();
  out.base_mva = number_or(root, "base_mva", 0.0, source, "");
  out.base_kv = number_or(root, "base_kv", 0.0, source, "");

  const json& buses = as_array(require(root, "buses", source, ""), source, "buses");
  std::map<std::int64_t, Index> index_of;
  CVec shunts(static_cast<Index>(buses.size()));
  for (size_t k = 0; k < buses.size(); ++k) {
    const std::string ctx = field_at("buses", k);
    const std::int64_t id = as_integer(require(buses[k], "id", source, ctx), source, ctx + ".id");
    if (!index_of.emplace(id, static_cast<Index>(k)).second) {
      fail(source, ctx + ".id", "duplicate bus id " + std::to_string(id));
    }
    out.bus_ids.push_back(id);
    shunts(static_cast<Index>(k)) = {number_or(buses[k], "shunt_g", 0.0, source, ctx),
                                     number_or(buses[k], "shunt_b", 0.0, source, ctx)};
  }
  auto lookup = [&](const json& j, const std::string& field) {
    const std::int64_t id = as_integer(j, source, field);
    const auto it = index_of.find(id);
    if (it == index_of.end()) fail(source, field, "unknown bus id " + std::to_string(id));
    return it->second;
  };

  NetworkGraph graph;
  graph.bus_count = static_cast<Index>(buses.size());
  const json& lines = as_array(require(root, "lines", source, ""), source, "lines");
  CVec line_adm(static_cast<Index>(lines.size()));
  for (size_t k = 0; k < lines.size(); ++k) {
    const std::string ctx = field_at("lines", k);
    Edge e;
    e.from = lookup(require(lines[k], "from", source, ctx), ctx + ".from");
    e.to = lookup(require(lines[k], "to", source, ctx), ctx + ".to");
    graph.edges.push_back(e);
    line_adm(static_cast<Index>(k)) = {
        as_number(require(lines[k], "g", source, ctx), source, ctx + ".g"),
        as_number(require(lines[k], "b", source, ctx), source, ctx + ".b")};
  }
  const json& slack = require(root, "slack", source, "");
  graph.substation = lookup(require(slack, "id", source, "slack"), "slack.id");
  graph.slack_voltage = {number_or(slack, "v_re", 1.0, source, "slack"),
                         number_or(slack, "v_im", 0.0, source, "slack")};
  if (!(std::abs(graph.slack_voltage) > 0.0)) fail(source, "slack", "slack voltage must be nonzero");

  out.model = build_ybus(graph, line_adm, shunts);
  return out;
}

NetworkData load_network(const std::filesystem::path& path) {
  return parse_network(read_text(path), path.string());
}

MeasurementLayout parse_measurements(const std::string& text, const std::string& source,
                                     const NetworkData& network) {
  const json root = parse_json(text, source);
  MeasurementLayout out;
  const AdmittanceModel& model = network.model;

  auto buses = [&](const char* key) {
    std::vector<Index> list;
    const auto it = root.find(key);
    if (it == root.end()) return list;
    const auto ids = id_list(*it, source, key);
    for (size_t k = 0; k < ids.size(); ++k) {
      const std::string field = field_at(key, k);
      Index bus = -1;
      try {
        bus = network.bus_index(ids[k], field);
      } catch (const Error& e) {
        fail(source, field, "unknown bus id " + std::to_string(ids[k]));
      }
      if (bus == model.substation()) {
        fail(source, field, "bus " + std::to_string(ids[k]) + " is the substation, not a state");
      }
      list.push_back(bus);
    }
    return list;
  };
  if (!root.is_object()) fail(source, "<root>", "expected an object");
  out.set.mag_buses = buses("mag_buses");
  out.set.inj_buses = buses("inj_buses");

  if (const auto it = root.find("flow_lines"); it != root.end()) {
    const json& arr = as_array(*it, source, "flow_lines");
    for (size_t k = 0; k < arr.size(); ++k) {
      const std::string field = field_at("flow_lines", k);
      if (arr[k].is_object()) {
        const Index from = network.bus_index(
            as_integer(require(arr[k], "from", source, field), source, field + ".from"), field + ".from");
        const Index to = network.bus_index(
            as_integer(require(arr[k], "to", source, field), source, field + ".to"), field + ".to");
        Index found = -1;
        for (Index l = 0; l < model.line_count(); ++l) {
          const auto& e = model.graph().edges[static_cast<size_t>(l)];
          if (e.from == from && e.to == to) found = l;
          if (e.from == to && e.to == from) {
            fail(source, field, "flow meters sit at the sending end; line is oriented the other way");
          }
        }
        if (found < 0) fail(source, field, "no line joins these buses");
        out.set.flow_lines.push_back(found);
      } else {
        const std::int64_t l = as_integer(arr[k], source, field);
        if (l < 0 || l >= model.line_count()) {
          fail(source, field, "line index " + std::to_string(l) + " outside the network");
        }
        out.set.flow_lines.push_back(static_cast<Index>(l));
      }
    }
  }

  if (const auto it = root.find("sigmas"); it != root.end()) {
    out.sigmas.mag = number_or(*it, "mag", out.sigmas.mag, source, "sigmas");
    out.sigmas.flow = number_or(*it, "flow", out.sigmas.flow, source, "sigmas");
    out.sigmas.inj = number_or(*it, "inj", out.sigmas.inj, source, "sigmas");
  }
  if (!(out.sigmas.mag > 0.0 && out.sigmas.flow > 0.0 && out.sigmas.inj > 0.0)) {
    fail(source, "sigmas", "standard deviations must be positive");
  }
  try {
    out.set.validate(model);
  } catch (const Error& e) {
    throw Error(ErrorKind::Parse, source + ": " + e.what());
  }
  return out;
}

MeasurementLayout load_measurements(const std::filesystem::path& path, const NetworkData& network) {
  return parse_measurements(read_text(path), path.string(), network);
}

ExperimentConfig parse_experiment(const std::string& text, const std::string& source,
                                  const std::filesystem::path& base_dir) {
  const json root = parse_json(text, source);
  ExperimentConfig out;
  auto path_field = [&](const char* key) {
    const json& j = require(root, key, source, "");
    if (!j.is_string()) fail(source, key, "expected a path string");
    std::filesystem::path p = j.get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  out.network_path = path_field("network");
  out.measurements_path = path_field("measurements");

  if (const auto it = root.find("loads"); it != root.end()) {
    const json& arr = as_array(*it, source, "loads");
    for (size_t k = 0; k < arr.size(); ++k) {
      const std::string ctx = field_at("loads", k);
      out.loads.push_back({as_integer(require(arr[k], "bus", source, ctx), source, ctx + ".bus"),
                           number_or(arr[k], "p", 0.0, source, ctx),
                           number_or(arr[k], "q", 0.0, source, ctx)});
    }
  }
  if (const auto it = root.find("uncertainty_regions"); it != root.end()) {
    const json& arr = as_array(*it, source, "uncertainty_regions");
    for (size_t k = 0; k < arr.size(); ++k) {
      const std::string ctx = field_at("uncertainty_regions", k);
      RegionEntry r;
      r.id = arr[k].contains("id") && arr[k]["id"].is_string() ? arr[k]["id"].get<std::string>()
                                                               : "UR" + std::to_string(k + 1);
      r.buses = id_list(require(arr[k], "buses", source, ctx), source, ctx + ".buses");
      r.lower = number_or(arr[k], "lower", r.lower, source, ctx);
      r.upper = number_or(arr[k], "upper", r.upper, source, ctx);
      if (!(r.lower <= r.upper)) fail(source, ctx, "lower bound exceeds upper bound");
      out.regions.push_back(std::move(r));
    }
  }
  if (const auto it = root.find("samples"); it != root.end()) {
    const std::int64_t m = as_integer(*it, source, "samples");
    if (m < 0) fail(source, "samples", "must be non-negative");
    out.samples = static_cast<Index>(m);
  }
  if (const auto it = root.find("seeds"); it != root.end()) {
    if (const auto s = it->find("sample"); s != it->end()) {
      out.sample_seed = static_cast<std::uint64_t>(as_integer(*s, source, "seeds.sample"));
    }
    if (const auto s = it->find("noise"); s != it->end()) {
      out.noise_seed = static_cast<std::uint64_t>(as_integer(*s, source, "seeds.noise"));
    }
  }
  out.noise_scale = number_or(root, "noise_scale", out.noise_scale, source, "");
  if (const auto it = root.find("solver"); it != root.end()) {
    out.solver.step_tol = number_or(*it, "eps_n", out.solver.step_tol, source, "solver");
    out.solver.gradient_tol = number_or(*it, "gradient_tol", out.solver.gradient_tol, source, "solver");
    if (const auto s = it->find("max_iters"); s != it->end()) {
      out.solver.max_iters = static_cast<int>(as_integer(*s, source, "solver.max_iters"));
    }
    out.solver.min_magnitude = number_or(*it, "min_magnitude", out.solver.min_magnitude, source, "solver");
  }
  if (const auto it = root.find("rom"); it != root.end()) {
    out.rom.expansion_tol = number_or(*it, "expansion_tol", out.rom.expansion_tol, source, "rom");
    out.rom.reduced_tol = number_or(*it, "reduced_tol", out.rom.reduced_tol, source, "rom");
    if (const auto s = it->find("hessian_cap"); s != it->end()) {
      out.rom.hessian_cap = static_cast<int>(as_integer(*s, source, "rom.hessian_cap"));
    }
    if (const auto s = it->find("rmse_max_iters"); s != it->end()) {
      out.rom.max_iters = static_cast<int>(as_integer(*s, source, "rom.rmse_max_iters"));
    }
  }
  if (const auto it = root.find("comparison"); it != root.end()) {
    if (!it->is_string()) fail(source, "comparison", "expected a string");
    try {
      out.comparison = comparison_from_string(it->get<std::string>());
    } catch (const Error& e) {
      fail(source, "comparison", e.what());
    }
  }
  if (const auto it = root.find("monitor_buses"); it != root.end()) {
    out.monitor_buses = id_list(*it, source, "monitor_buses");
  }
  if (const auto it = root.find("histogram_bins"); it != root.end()) {
    out.histogram_bins = static_cast<int>(as_integer(*it, source, "histogram_bins"));
    if (out.histogram_bins < 1) fail(source, "histogram_bins", "must be at least 1");
  }
  try {
    out.solver.validate();
  } catch (const Error& e) {
    fail(source, "solver", e.what());
  }
  return out;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_text(path), path.string(), path.parent_path());
}

std::vector<Index> resolve_buses(const std::vector<std::int64_t>& ids, const NetworkData& network,
                                 const std::string& field) {
  std::vector<Index> out;
  for (size_t k = 0; k < ids.size(); ++k) out.push_back(network.bus_index(ids[k], field_at(field, k)));
  return out;
}

HarnessConfig harness_config(const ExperimentConfig& experiment, const NetworkData& network,
                             unsigned threads) {
  HarnessConfig cfg;
  cfg.nominal_loads = CVec::Zero(network.model.bus_count());
  for (size_t k = 0; k < experiment.loads.size(); ++k) {
    const auto& l = experiment.loads[k];
    cfg.nominal_loads(network.bus_index(l.bus, field_at("loads", k) + ".bus")) += Complex(l.p, l.q);
  }
  for (size_t k = 0; k < experiment.regions.size(); ++k) {
    const auto& r = experiment.regions[k];
    cfg.regions.push_back({r.id, resolve_buses(r.buses, network, field_at("uncertainty_regions", k) + ".buses"),
                           r.lower, r.upper});
  }
  cfg.samples = experiment.samples;
  cfg.sample_seed = experiment.sample_seed;
  cfg.noise_seed = experiment.noise_seed;
  cfg.noise_scale = experiment.noise_scale;
  cfg.threads = threads;
  return cfg;
}

std::string profile_header(const MeasurementSet& set, const NetworkData& network) {
  std::ostringstream out;
  out << "profile_id";
  for (Index bus : set.mag_buses) out << ",mag:" << network.bus_ids[static_cast<size_t>(bus)];
  for (Index l : set.flow_lines) out << ",flow_p:" << line_label(network, l);
  for (Index l : set.flow_lines) out << ",flow_q:" << line_label(network, l);
  for (Index bus : set.inj_buses) out << ",inj_p:" << network.bus_ids[static_cast<size_t>(bus)];
  for (Index bus : set.inj_buses) out << ",inj_q:" << network.bus_ids[static_cast<size_t>(bus)];
  return out.str();
}

void write_profiles(const std::filesystem::path& path,
                    const std::vector<MeasurementProfile>& profiles, const MeasurementSet& set,
                    const NetworkData& network) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << profile_header(set, network) << '\n';
  for (const auto& profile : profiles) {
    const Vec r = profile.stacked();
    out << profile.id;
    for (Index k = 0; k < r.size(); ++k) out << ',' << fmt(r(k));
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<MeasurementProfile> read_profiles(const std::filesystem::path& path,
                                              const MeasurementSet& set,
                                              const NetworkData& network) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  const std::string source = path.string();
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Parse, source + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected = profile_header(set, network);
  if (line != expected) {
    const auto got = split_csv(line);
    const auto want = split_csv(expected);
    for (size_t k = 0; k < std::max(got.size(), want.size()); ++k) {
      const std::string g = k < got.size() ? got[k] : "<missing>";
      const std::string w = k < want.size() ? want[k] : "<none>";
      if (g != w) {
        throw Error(ErrorKind::Parse, source + ": line 1, column " + std::to_string(k + 1) +
                                          ": header '" + g + "' does not match layout '" + w + "'");
      }
    }
  }
  std::vector<MeasurementProfile> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = source + ": line " + std::to_string(line_no);
    if (static_cast<Index>(cells.size()) != set.rows() + 1) {
      throw Error(ErrorKind::Parse, where + ": expected " + std::to_string(set.rows() + 1) +
                                        " columns, found " + std::to_string(cells.size()));
    }
    Vec r(set.rows());
    for (Index k = 0; k < r.size(); ++k) {
      r(k) = parse_double(cells[static_cast<size_t>(k + 1)], where + ", column " + std::to_string(k + 2));
    }
    const double id = parse_double(cells[0], where + ", column 1");
    out.push_back(MeasurementProfile::from_stacked(r, set, static_cast<std::int64_t>(id)));
  }
  return out;
}

void write_state(const std::filesystem::path& path, const PolarState& state,
                 const NetworkData& network) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const AdmittanceModel& model = network.model;
  const CVec v = model.bus_voltages(state);
  out << "bus_id,vm,va_rad\n";
  for (Index bus = 0; bus < model.bus_count(); ++bus) {
    out << network.bus_ids[static_cast<size_t>(bus)] << ',' << fmt(std::abs(v(bus))) << ','
        << fmt(wrap_angle(std::arg(v(bus)))) << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void write_basis(const std::filesystem::path& path, const Mat& basis) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (Index i = 0; i < basis.rows(); ++i) {
    for (Index j = 0; j < basis.cols(); ++j) out << (j ? "," : "") << fmt(basis(i, j));
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Mat read_basis(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    const auto cells = split_csv(line);
    for (size_t k = 0; k < cells.size(); ++k) {
      row.push_back(parse_double(cells[k], path.string() + ": line " + std::to_string(line_no) +
                                               ", column " + std::to_string(k + 1)));
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::Parse, path.string() + ": line " + std::to_string(line_no) +
                                        ": ragged basis row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorKind::Parse, path.string() + ": empty basis file");
  Mat out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return out;
}

}  // namespace apse
