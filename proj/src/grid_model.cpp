#include "apse/grid_model.hpp"

#include <cmath>
#include <numbers>
#include <queue>
#include <sstream>

namespace apse {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedGraph: return "malformed-graph";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::DegenerateState: return "degenerate-state";
    case ErrorKind::InvalidMeasurement: return "invalid-measurement";
    case ErrorKind::Observability: return "observability";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::DegenerateBasis: return "degenerate-basis";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

void NetworkGraph::validate() const {
  if (bus_count < 2) {
    throw Error(ErrorKind::MalformedGraph, "network needs at least two buses");
  }
  if (substation < 0 || substation >= bus_count) {
    throw Error(ErrorKind::MalformedGraph, "substation index out of range");
  }
  std::vector<std::vector<Index>> adjacency(static_cast<size_t>(bus_count));
  for (size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    if (e.from < 0 || e.from >= bus_count || e.to < 0 || e.to >= bus_count) {
      std::ostringstream msg;
      msg << "edge " << k << " references a bus outside [0, " << bus_count << ")";
      throw Error(ErrorKind::MalformedGraph, msg.str());
    }
    if (e.from == e.to) {
      std::ostringstream msg;
      msg << "edge " << k << " has duplicate endpoints (bus " << e.from << ")";
      throw Error(ErrorKind::MalformedGraph, msg.str());
    }
    adjacency[static_cast<size_t>(e.from)].push_back(e.to);
    adjacency[static_cast<size_t>(e.to)].push_back(e.from);
  }

  std::vector<bool> seen(static_cast<size_t>(bus_count), false);
  std::queue<Index> frontier;
  frontier.push(substation);
  seen[static_cast<size_t>(substation)] = true;
  Index reached = 1;
  while (!frontier.empty()) {
    const Index bus = frontier.front();
    frontier.pop();
    for (Index next : adjacency[static_cast<size_t>(bus)]) {
      if (!seen[static_cast<size_t>(next)]) {
        seen[static_cast<size_t>(next)] = true;
        ++reached;
        frontier.push(next);
      }
    }
  }
  if (reached != bus_count) {
    std::ostringstream msg;
    msg << "graph is disconnected: " << reached << " of " << bus_count
        << " buses reachable from the substation";
    throw Error(ErrorKind::MalformedGraph, msg.str());
  }
}

Incidence build_incidence(const NetworkGraph& graph) {
  graph.validate();
  const Index m = static_cast<Index>(graph.edges.size());
  std::vector<Eigen::Triplet<int>> signed_entries;
  std::vector<Eigen::Triplet<int>> sending_entries;
  signed_entries.reserve(static_cast<size_t>(2 * m));
  sending_entries.reserve(static_cast<size_t>(m));
  for (Index k = 0; k < m; ++k) {
    const auto& e = graph.edges[static_cast<size_t>(k)];
    signed_entries.emplace_back(k, e.from, 1);
    signed_entries.emplace_back(k, e.to, -1);
    sending_entries.emplace_back(k, e.from, 1);
  }
  Incidence out;
  out.signed_incidence.resize(m, graph.bus_count);
  out.signed_incidence.setFromTriplets(signed_entries.begin(), signed_entries.end());
  out.sending_selector.resize(m, graph.bus_count);
  out.sending_selector.setFromTriplets(sending_entries.begin(), sending_entries.end());
  return out;
}

AdmittanceModel build_ybus(const NetworkGraph& graph, const CVec& line_admittances,
                           const CVec& shunt_admittances) {
  const Index m = static_cast<Index>(graph.edges.size());
  if (line_admittances.size() != m || shunt_admittances.size() != graph.bus_count) {
    std::ostringstream msg;
    msg << "admittance dimensions (" << line_admittances.size() << " lines, "
        << shunt_admittances.size() << " shunts) do not match graph (" << m
        << " lines, " << graph.bus_count << " buses)";
    throw Error(ErrorKind::DimensionMismatch, msg.str());
  }

  AdmittanceModel model;
  model.graph_ = graph;
  model.line_adm_ = line_admittances;
  model.shunt_adm_ = shunt_admittances;
  model.incidence_ = build_incidence(graph);

  const SpCMat e = model.incidence_.signed_incidence.cast<Complex>();
  SpCMat yl(m, m);
  SpCMat ys(graph.bus_count, graph.bus_count);
  {
    std::vector<Eigen::Triplet<Complex>> entries;
    for (Index k = 0; k < m; ++k) entries.emplace_back(k, k, line_admittances(k));
    yl.setFromTriplets(entries.begin(), entries.end());
    entries.clear();
    for (Index k = 0; k < graph.bus_count; ++k) entries.emplace_back(k, k, shunt_admittances(k));
    ys.setFromTriplets(entries.begin(), entries.end());
  }
  model.ybus_ = SpCMat(e.transpose() * yl * e) + ys;
  model.ybus_.makeCompressed();
  return model;
}

Index AdmittanceModel::state_index(Index bus) const {
  if (bus == graph_.substation) return -1;
  return bus < graph_.substation ? bus : bus - 1;
}

Index AdmittanceModel::bus_index(Index state) const {
  return state < graph_.substation ? state : state + 1;
}

CVec AdmittanceModel::bus_voltages(const PolarState& x) const {
  CVec v(graph_.bus_count);
  for (Index bus = 0; bus < graph_.bus_count; ++bus) {
    const Index k = state_index(bus);
    v(bus) = k < 0 ? graph_.slack_voltage : std::polar(x.magnitude(k), x.angle(k));
  }
  return v;
}

CVec AdmittanceModel::bus_voltages(const CartesianState& xc) const {
  CVec v(graph_.bus_count);
  for (Index bus = 0; bus < graph_.bus_count; ++bus) {
    const Index k = state_index(bus);
    v(bus) = k < 0 ? graph_.slack_voltage : Complex(xc.real(k), xc.imag(k));
  }
  return v;
}

Vec PolarState::stacked() const {
  Vec x(2 * size());
  x << magnitude, angle;
  return x;
}

PolarState PolarState::from_stacked(const Vec& x) {
  const Index p = x.size() / 2;
  return {x.head(p), x.tail(p)};
}

PolarState PolarState::flat(Index p, Complex slack) {
  return {Vec::Constant(p, std::abs(slack)), Vec::Constant(p, std::arg(slack))};
}

Vec CartesianState::stacked() const {
  Vec x(2 * size());
  x << real, imag;
  return x;
}

CartesianState CartesianState::from_stacked(const Vec& x) {
  const Index p = x.size() / 2;
  return {x.head(p), x.tail(p)};
}

double wrap_angle(double theta) {
  constexpr double pi = std::numbers::pi;
  double t = std::remainder(theta, 2.0 * pi);
  if (t <= -pi) t += 2.0 * pi;
  return t;
}

CartesianState polar_to_cartesian(const PolarState& x) {
  CartesianState xc{Vec(x.size()), Vec(x.size())};
  for (Index k = 0; k < x.size(); ++k) {
    xc.real(k) = x.magnitude(k) * std::cos(x.angle(k));
    xc.imag(k) = x.magnitude(k) * std::sin(x.angle(k));
  }
  return xc;
}

PolarState cartesian_to_polar(const CartesianState& xc) {
  PolarState x{Vec(xc.size()), Vec(xc.size())};
  for (Index k = 0; k < xc.size(); ++k) {
    const double mag = std::hypot(xc.real(k), xc.imag(k));
    if (!(mag > 0.0)) {
      std::ostringstream msg;
      msg << "zero-magnitude voltage at state " << k;
      throw Error(ErrorKind::DegenerateState, msg.str());
    }
    x.magnitude(k) = mag;
    x.angle(k) = wrap_angle(std::atan2(xc.imag(k), xc.real(k)));
  }
  return x;
}

}  // namespace apse
