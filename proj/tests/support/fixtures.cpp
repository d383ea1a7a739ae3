#include "fixtures.hpp"

#include <algorithm>
#include <numeric>

namespace apse::testing {

std::string data_path(const std::string& rel) { return std::string(APSE_DATA_DIR) + "/" + rel; }

const Feeder& ieee33() {
  static const Feeder feeder = [] {
    Feeder f;
    f.network = load_network(data_path("ieee33/network.json"));
    f.layout = load_measurements(data_path("ieee33/measurements.json"), f.network);
    return f;
  }();
  return feeder;
}

ExperimentConfig ieee33_experiment() { return load_experiment(data_path("ieee33/experiment.json")); }

CVec ieee33_nominal_loads() {
  return harness_config(ieee33_experiment(), ieee33().network, 1).nominal_loads;
}

MeasurementSet full_set(const AdmittanceModel& model) {
  MeasurementSet set;
  for (Index bus = 0; bus < model.bus_count(); ++bus) {
    if (bus == model.substation()) continue;
    set.mag_buses.push_back(bus);
    set.inj_buses.push_back(bus);
  }
  for (Index l = 0; l < model.line_count(); ++l) set.flow_lines.push_back(l);
  return set;
}

AdmittanceModel two_bus(Complex y, Complex shunt1, Complex shunt2) {
  NetworkGraph g;
  g.bus_count = 2;
  g.edges = {{0, 1}};
  CVec yl(1);
  yl << y;
  CVec ys(2);
  ys << shunt1, shunt2;
  return build_ybus(g, yl, ys);
}

AdmittanceModel radial_chain(Index n, Complex y, Complex shunt) {
  NetworkGraph g;
  g.bus_count = n;
  for (Index k = 0; k + 1 < n; ++k) g.edges.push_back({k, k + 1});
  return build_ybus(g, CVec::Constant(n - 1, y), CVec::Constant(n, shunt));
}

AdmittanceModel ring(Index n, Complex y) {
  NetworkGraph g;
  g.bus_count = n;
  for (Index k = 0; k < n; ++k) g.edges.push_back({k, (k + 1) % n});
  return build_ybus(g, CVec::Constant(n, y), CVec::Zero(n));
}

Vec Gen::vec(Index n, double lo, double hi) {
  Vec v(n);
  for (Index k = 0; k < n; ++k) v(k) = uniform(lo, hi);
  return v;
}

PolarState Gen::polar(Index p, double vlo, double vhi, double amax) {
  return {vec(p, vlo, vhi), vec(p, -amax, amax)};
}

Complex Gen::admittance() {
  // r + jx with x/r in a distribution-feeder range.
  const double r = uniform(0.01, 0.2);
  const double x = uniform(0.01, 0.2);
  return 1.0 / Complex(r, x);
}

NetworkGraph Gen::graph(Index n, Index extra) {
  NetworkGraph g;
  g.bus_count = n;
  g.substation = index(0, n - 1);
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);
  auto add = [&](Index a, Index b) {
    if (index(0, 1) == 0) std::swap(a, b);
    g.edges.push_back({a, b});
  };
  for (Index k = 1; k < n; ++k) add(order[static_cast<size_t>(index(0, k - 1))], order[static_cast<size_t>(k)]);
  for (Index e = 0; e < extra; ++e) {
    const Index a = index(0, n - 1);
    Index b = index(0, n - 1);
    if (a == b) b = (a + 1) % n;
    add(a, b);
  }
  return g;
}

AdmittanceModel Gen::network(Index n, Index extra, bool shunts) {
  const NetworkGraph g = graph(n, extra);
  CVec yl(static_cast<Index>(g.edges.size()));
  for (Index k = 0; k < yl.size(); ++k) yl(k) = admittance();
  CVec ys = CVec::Zero(n);
  if (shunts) {
    for (Index k = 0; k < n; ++k) ys(k) = Complex(uniform(0.0, 0.01), uniform(-0.05, 0.05));
  }
  return build_ybus(g, yl, ys);
}

MeasurementProfile exact_profile(const PolarState& x, const MeasurementSet& set,
                                 const AdmittanceModel& model, std::int64_t id) {
  return MeasurementProfile::from_stacked(measured_outputs(x, set, model), set, id);
}

}  // namespace apse::testing
