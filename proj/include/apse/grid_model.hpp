#pragma once

#include <vector>

#include "apse/types.hpp"

namespace apse {

/// Directed line; `from` is the sending end.
struct Edge {
  Index from = 0;
  Index to = 0;
};

struct NetworkGraph {
  Index bus_count = 0;
  std::vector<Edge> edges;
  Index substation = 0;
  Complex slack_voltage{1.0, 0.0};

  /// Throws Error(MalformedGraph) unless the graph is connected, every edge
  /// joins two distinct valid buses and the substation index is valid.
  void validate() const;
};

struct Incidence {
  SpIMat signed_incidence;  // m x n, +1 at the sending bus, -1 at the receiving bus
  SpIMat sending_selector;  // (|E| + E) / 2
};

Incidence build_incidence(const NetworkGraph& graph);

/// Voltage magnitudes and angles of all non-slack buses, in state order.
struct PolarState {
  Vec magnitude;
  Vec angle;

  Index size() const { return magnitude.size(); }
  /// [V; theta]
  Vec stacked() const;
  static PolarState from_stacked(const Vec& x);
  static PolarState flat(Index p, Complex slack = {1.0, 0.0});
};

/// Real and imaginary voltage parts of all non-slack buses, in state order.
struct CartesianState {
  Vec real;
  Vec imag;

  Index size() const { return real.size(); }
  /// [V_r; V_i]
  Vec stacked() const;
  static CartesianState from_stacked(const Vec& x);
};

CartesianState polar_to_cartesian(const PolarState& x);

/// Throws Error(DegenerateState) on a zero-magnitude entry. Angles land in (-pi, pi].
PolarState cartesian_to_polar(const CartesianState& xc);

double wrap_angle(double theta);

/// Network graph plus its line/shunt admittances and the assembled Y-bus.
/// Immutable after construction.
///
/// The overlined (full) objects keep every bus including the substation.
/// State vectors drop the substation; `state_index`/`bus_index` are the
/// single place where that reduction happens.
class AdmittanceModel {
 public:
  const NetworkGraph& graph() const { return graph_; }
  const CVec& line_admittances() const { return line_adm_; }
  const CVec& shunt_admittances() const { return shunt_adm_; }
  const SpIMat& incidence() const { return incidence_.signed_incidence; }
  const SpIMat& sending_selector() const { return incidence_.sending_selector; }
  const SpCMat& ybus() const { return ybus_; }

  Index bus_count() const { return graph_.bus_count; }
  Index line_count() const { return static_cast<Index>(graph_.edges.size()); }
  Index state_count() const { return graph_.bus_count - 1; }
  Index substation() const { return graph_.substation; }
  Complex slack_voltage() const { return graph_.slack_voltage; }

  /// -1 for the substation.
  Index state_index(Index bus) const;
  Index bus_index(Index state) const;

  /// Full complex bus-voltage vector with the fixed slack voltage inserted.
  CVec bus_voltages(const PolarState& x) const;
  CVec bus_voltages(const CartesianState& xc) const;

 private:
  friend AdmittanceModel build_ybus(const NetworkGraph&, const CVec&, const CVec&);

  NetworkGraph graph_;
  CVec line_adm_;
  CVec shunt_adm_;
  Incidence incidence_;
  SpCMat ybus_;
};

/// Ybus = E^T Y_l E + Y_s. Throws DimensionMismatch / MalformedGraph.
AdmittanceModel build_ybus(const NetworkGraph& graph, const CVec& line_admittances,
                           const CVec& shunt_admittances);

}  // namespace apse
